//! Seeded Monte Carlo experiments over a grid of scenarios.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::altvar::{
    observed_avar, sigma_tilde, sigma_tilde_star_pv, sigma_via_rescaled_bipower, ObservedAvarConfig,
};
use crate::cov::CovEstimate;
use crate::error::{Error, Result};
use crate::inference::jump_contrast;
use crate::preavg::{preavg_bipower_with, WeightScheme};
use crate::series::{gaussian_abs_moment, log_returns, PowerSpec, TickSeries};
use crate::simulate::{
    add_noise, rng_stream, simulate_heston_with, HestonConfig, HestonPath, NoiseConfig,
};
use crate::subsample::{n_block, subsample_cov_bipower, subsample_cov_noisy, SubsampleConfig};
use crate::variation::{bipower_limit, bipower_variation_with};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Constant volatility at the long-run level.
    Bm,
    /// Stochastic volatility with stationary start.
    Sv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScenario {
    None,
    /// Heteroskedastic MA(1) noise.
    General,
    /// Independent noise with variance `gamma^2 IV / n`.
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    NoisySubsample,
    PvTilde,
    ObservedAvar,
    BipowerSubsample,
    SigmaTilde,
    RescaledBipower,
}

impl EstimatorChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorChoice::NoisySubsample => "noisy_subsample",
            EstimatorChoice::PvTilde => "pv_tilde",
            EstimatorChoice::ObservedAvar => "observed_avar",
            EstimatorChoice::BipowerSubsample => "bipower_subsample",
            EstimatorChoice::SigmaTilde => "sigma_tilde",
            EstimatorChoice::RescaledBipower => "rescaled_bipower",
        }
    }

    fn preaveraged(&self) -> bool {
        matches!(
            self,
            EstimatorChoice::NoisySubsample
                | EstimatorChoice::PvTilde
                | EstimatorChoice::ObservedAvar
        )
    }
}

fn default_gamma() -> f64 {
    0.5
}
fn default_zeta() -> f64 {
    -0.4
}
fn default_true() -> bool {
    true
}
fn default_avar() -> ObservedAvarConfig {
    ObservedAvarConfig {
        blocks: 15,
        k1: 1,
        k2: 2,
        forward_edges: true,
    }
}

/// Scenario grid; cells are the Cartesian product of the list fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub models: Vec<Model>,
    pub noises: Vec<NoiseScenario>,
    pub thetas: Vec<f64>,
    pub ns: Vec<usize>,
    pub subsamples: Vec<usize>,
    pub blocks: Vec<usize>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub estimators: Vec<EstimatorChoice>,
    #[serde(default = "default_true")]
    pub corrections: bool,
    #[serde(default = "default_avar")]
    pub observed_avar: ObservedAvarConfig,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub n_sim: usize,
    pub grid: Grid,
}

/// One scenario of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    pub model: Model,
    pub noise: NoiseScenario,
    pub theta: f64,
    pub n: usize,
    pub subsamples: usize,
    pub block: usize,
    pub spec: PowerSpec,
    pub estimators: Vec<EstimatorChoice>,
    pub corrections: bool,
    pub observed_avar: ObservedAvarConfig,
    pub gamma: f64,
    pub zeta: f64,
}

impl ExperimentSpec {
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.n_sim < 1 {
            return Err(Error::InvalidConfig("n_sim must be at least 1".into()));
        }
        let g = &self.grid;
        let spec = PowerSpec::new(g.q.clone(), g.r.clone())?;
        let mut out = Vec::new();
        for &model in &g.models {
            for &noise in &g.noises {
                for &theta in &g.thetas {
                    for &n in &g.ns {
                        for &l in &g.subsamples {
                            for &p in &g.blocks {
                                out.push(Cell {
                                    id: out.len(),
                                    model,
                                    noise,
                                    theta,
                                    n,
                                    subsamples: l,
                                    block: p,
                                    spec: spec.clone(),
                                    estimators: g.estimators.clone(),
                                    corrections: g.corrections,
                                    observed_avar: g.observed_avar,
                                    gamma: g.gamma,
                                    zeta: g.zeta,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Cell {
    fn heston(&self, seed: u64) -> HestonConfig {
        let mut h = HestonConfig::daily(self.n, seed);
        if self.model == Model::Bm {
            h.xi = 0.0;
        }
        h
    }

    fn scheme(&self) -> Result<WeightScheme> {
        WeightScheme::min_weight(self.theta, self.n)
    }

    fn sub_cfg(&self) -> SubsampleConfig {
        if self.corrections {
            SubsampleConfig::noisy(self.subsamples, self.block)
        } else {
            SubsampleConfig::raw(self.subsamples, self.block)
        }
    }

    /// Checks that every requested estimator can run at this cell's size.
    pub fn check_feasible(&self) -> Result<()> {
        let kn = if self.estimators.iter().any(|e| e.preaveraged()) {
            self.scheme()?.kn()
        } else {
            1
        };
        for e in &self.estimators {
            match e {
                EstimatorChoice::NoisySubsample => {
                    if self.block < 3 {
                        return Err(Error::BlockTooSmall(format!(
                            "p = {} for the pre-averaged subsampler",
                            self.block
                        )));
                    }
                    n_block(self.n, kn, self.block, self.subsamples)?;
                }
                EstimatorChoice::BipowerSubsample => {
                    n_block(self.n, 1, self.block, self.subsamples)?;
                }
                EstimatorChoice::PvTilde if self.n < 4 * kn => {
                    return Err(Error::WindowTooLarge { kn, n: self.n });
                }
                EstimatorChoice::ObservedAvar
                    if self.n / self.observed_avar.blocks < 2 * kn + 2 =>
                {
                    return Err(Error::InsufficientData(
                        "observed AVAR blocks shorter than 2 kn + 2".into(),
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn noise_config(&self, path: &HestonPath) -> NoiseConfig {
        match self.noise {
            NoiseScenario::None => NoiseConfig::none(),
            NoiseScenario::General => NoiseConfig::hetero_ma1(self.gamma, self.zeta),
            NoiseScenario::Iid => {
                NoiseConfig::iid(self.gamma * self.gamma * path.iv / self.n as f64)
            }
        }
    }

    /// Limits of the pre-averaged statistics for the simulated path, with the
    /// finite-window constants.
    fn preavg_target(
        &self,
        path: &HestonPath,
        noise: &NoiseConfig,
        scheme: &WeightScheme,
    ) -> Result<Vec<f64>> {
        let th = scheme.theta_eff(self.n);
        let (p1, p2) = (scheme.psi1_n(), scheme.psi2_n());
        let lr = noise.long_run_factor();
        let spot = &path.spot_var[..self.n];
        (0..self.spec.dim())
            .map(|k| {
                let (q, r) = self.spec.pair(k);
                let c = gaussian_abs_moment(q)? * gaussian_abs_moment(r)?;
                let s: f64 = spot
                    .iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let rho2 = lr * noise.variance_at(self.n, Some(&path.spot_var), t);
                        (th * p2 * v + p1 * rho2 / th).powf(0.5 * (q + r))
                    })
                    .sum();
                Ok(c * s / self.n as f64)
            })
            .collect()
    }
}

/// One row of the long-format output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub cell: usize,
    pub rep: usize,
    pub estimator: EstimatorChoice,
    pub estimates: Vec<f64>,
    pub targets: Vec<f64>,
    /// Studentized components; `None` when the variance estimate is not positive.
    pub tstats: Vec<Option<f64>>,
    pub min_eigenvalue: f64,
    pub condition_number: f64,
    pub psd: bool,
    pub positive_definite: bool,
    pub ill_conditioned: bool,
    /// `w' Sigma w` for the jump contrast when the powers include (2,0) and (1,1).
    pub jump_var: Option<f64>,
    pub jump_z: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub records: Vec<Record>,
    /// Set when the cell could not run at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub n_sim: usize,
    pub cells: Vec<CellResult>,
}

fn jump_positions(spec: &PowerSpec) -> Option<(usize, usize)> {
    let find = |q: f64, r: f64| (0..spec.dim()).find(|&k| spec.pair(k) == (q, r));
    Some((find(2.0, 0.0)?, find(1.0, 1.0)?))
}

fn record_from(
    cell: &Cell,
    rep: usize,
    est: EstimatorChoice,
    values: &[f64],
    target: &[f64],
    rate: f64,
    cov: Result<CovEstimate>,
) -> Record {
    let mut rec = Record {
        cell: cell.id,
        rep,
        estimator: est,
        estimates: values.to_vec(),
        targets: target.to_vec(),
        tstats: vec![None; values.len()],
        min_eigenvalue: f64::NAN,
        condition_number: f64::NAN,
        psd: false,
        positive_definite: false,
        ill_conditioned: false,
        jump_var: None,
        jump_z: None,
        error: None,
    };
    let cov = match cov {
        Ok(c) => c,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let d = cov.diagnostics();
    rec.min_eigenvalue = d.min_eigenvalue;
    rec.condition_number = d.condition_number;
    rec.psd = d.psd;
    rec.positive_definite = d.positive_definite;
    rec.ill_conditioned = d.ill_conditioned;
    for k in 0..values.len() {
        let v = cov.matrix[(k, k)];
        if v > 0.0 {
            rec.tstats[k] = Some(rate * (values[k] - target[k]) / v.sqrt());
        }
    }
    if let Some((a, b)) = jump_positions(&cell.spec) {
        if let Ok((stat, g)) = jump_contrast(values[a], values[b], false) {
            let mut w = vec![0.0; values.len()];
            w[a] = g[0];
            w[b] = g[1];
            let jv = cov.quadratic_form(&w);
            rec.jump_var = Some(jv);
            if jv > 0.0 {
                rec.jump_z = Some(rate * stat / jv.sqrt());
            }
        }
    }
    rec
}

/// Simulates one replication of a cell and evaluates every requested estimator.
pub fn run_replication(cell: &Cell, seed: u64, rep: usize) -> Result<Vec<Record>> {
    let mut rng = rng_stream(seed, rep as u64);
    let path = simulate_heston_with(&cell.heston(seed), &mut rng)?;
    let noise = cell.noise_config(&path);
    let y: TickSeries = add_noise(&path.prices, Some(&path.spot_var), &noise, &mut rng)?;
    let n = cell.n;
    let mut out = Vec::with_capacity(cell.estimators.len());
    let needs_pre = cell.estimators.iter().any(|e| e.preaveraged());
    let needs_raw = cell.estimators.iter().any(|e| !e.preaveraged());
    let pre = if needs_pre {
        let scheme = cell.scheme()?;
        let v = preavg_bipower_with(&y, &cell.spec, &scheme)?;
        let t = cell.preavg_target(&path, &noise, &scheme)?;
        Some((scheme, v, t))
    } else {
        None
    };
    let raw = if needs_raw {
        let d = log_returns(&y)?;
        let v = bipower_variation_with(&d, &cell.spec);
        let t = bipower_limit(&cell.spec, &path.spot_var[..n])?;
        Some((d, v, t))
    } else {
        None
    };
    for &est in &cell.estimators {
        let rec = if est.preaveraged() {
            let (scheme, v, t) = pre.as_ref().expect("computed above");
            let cov = match est {
                EstimatorChoice::NoisySubsample => {
                    subsample_cov_noisy(&y, &cell.spec, scheme, &cell.sub_cfg())
                }
                EstimatorChoice::PvTilde => sigma_tilde_star_pv(&y, &cell.spec, scheme),
                _ => observed_avar(&y, &cell.spec, scheme, &cell.observed_avar),
            };
            record_from(cell, rep, est, v, t, (n as f64).powf(0.25), cov)
        } else {
            let (d, v, t) = raw.as_ref().expect("computed above");
            let cov = match est {
                EstimatorChoice::BipowerSubsample => {
                    let mut cfg = SubsampleConfig::raw(cell.subsamples, cell.block);
                    cfg.l_correction = cell.corrections;
                    subsample_cov_bipower(d, &cell.spec, &cfg)
                }
                EstimatorChoice::SigmaTilde => sigma_tilde(d, &cell.spec),
                _ => sigma_via_rescaled_bipower(d, &cell.spec),
            };
            record_from(cell, rep, est, v, t, (n as f64).sqrt(), cov)
        };
        out.push(rec);
    }
    Ok(out)
}

fn error_record(cell: &Cell, rep: usize, est: EstimatorChoice, e: &Error) -> Record {
    Record {
        cell: cell.id,
        rep,
        estimator: est,
        estimates: Vec::new(),
        targets: Vec::new(),
        tstats: Vec::new(),
        min_eigenvalue: f64::NAN,
        condition_number: f64::NAN,
        psd: false,
        positive_definite: false,
        ill_conditioned: false,
        jump_var: None,
        jump_z: None,
        error: Some(e.to_string()),
    }
}

/// Runs one cell; infeasible cells return an error entry instead of records.
pub fn run_cell(cell: &Cell, seed: u64, n_sim: usize) -> CellResult {
    if let Err(e) = cell.check_feasible() {
        return CellResult {
            cell: cell.clone(),
            records: Vec::new(),
            error: Some(e.to_string()),
        };
    }
    let records = (0..n_sim)
        .into_par_iter()
        .map(|rep| match run_replication(cell, seed, rep) {
            Ok(r) => r,
            Err(e) => cell
                .estimators
                .iter()
                .map(|&est| error_record(cell, rep, est, &e))
                .collect(),
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    CellResult {
        cell: cell.clone(),
        records,
        error: None,
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let cells = spec.cells()?;
    Ok(ExperimentResult {
        seed: spec.seed,
        n_sim: spec.n_sim,
        cells: cells
            .iter()
            .map(|c| run_cell(c, spec.seed, spec.n_sim))
            .collect(),
    })
}

/// Aggregates for one estimator in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cell: usize,
    pub estimator: EstimatorChoice,
    pub replications: usize,
    pub failures: usize,
    pub frac_not_pd: f64,
    pub frac_jump_var_nonpositive: Option<f64>,
    /// Among positive definite estimates.
    pub frac_ill_conditioned: f64,
    pub tstat_mean: Vec<f64>,
    pub tstat_std: Vec<f64>,
    /// Share of valid jump statistics below the one-sided 95% critical value.
    pub jump_coverage: Option<f64>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    if x.len() < 2 {
        return (m, f64::NAN);
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    (m, v.sqrt())
}

/// Groups records by `(cell, estimator)` in a fixed order.
pub fn summarize(records: &[Record]) -> Vec<Summary> {
    let mut groups: BTreeMap<(usize, EstimatorChoice), Vec<&Record>> = BTreeMap::new();
    for r in records {
        groups.entry((r.cell, r.estimator)).or_default().push(r);
    }
    let crit = 1.6448536269514722;
    groups
        .into_iter()
        .map(|((cell, estimator), rs)| {
            let ok: Vec<&&Record> = rs.iter().filter(|r| r.error.is_none()).collect();
            let total = ok.len().max(1) as f64;
            let pd: Vec<&&&Record> = ok.iter().filter(|r| r.positive_definite).collect();
            let dim = ok.first().map_or(0, |r| r.tstats.len());
            let (mut tm, mut ts) = (Vec::new(), Vec::new());
            for k in 0..dim {
                let xs: Vec<f64> = ok.iter().filter_map(|r| r.tstats[k]).collect();
                let (m, s) = mean_std(&xs);
                tm.push(m);
                ts.push(s);
            }
            let jv: Vec<f64> = ok.iter().filter_map(|r| r.jump_var).collect();
            let jz: Vec<f64> = ok.iter().filter_map(|r| r.jump_z).collect();
            Summary {
                cell,
                estimator,
                replications: rs.len(),
                failures: rs.len() - ok.len(),
                frac_not_pd: ok.iter().filter(|r| !r.positive_definite).count() as f64 / total,
                frac_jump_var_nonpositive: (!jv.is_empty())
                    .then(|| jv.iter().filter(|&&v| v <= 0.0).count() as f64 / jv.len() as f64),
                frac_ill_conditioned: if pd.is_empty() {
                    f64::NAN
                } else {
                    pd.iter().filter(|r| r.ill_conditioned).count() as f64 / pd.len() as f64
                },
                tstat_mean: tm,
                tstat_std: ts,
                jump_coverage: (!jz.is_empty())
                    .then(|| jz.iter().filter(|&&z| z <= crit).count() as f64 / jz.len() as f64),
            }
        })
        .collect()
}

impl ExperimentResult {
    pub fn records(&self) -> Vec<Record> {
        self.cells
            .iter()
            .flat_map(|c| c.records.iter().cloned())
            .collect()
    }

    pub fn summary(&self) -> Vec<Summary> {
        summarize(&self.records())
    }
}
