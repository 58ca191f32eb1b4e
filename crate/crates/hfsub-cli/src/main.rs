use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hfsub::altvar::{
    observed_avar, sigma_tilde, sigma_tilde_star_pv, sigma_via_rescaled_bipower, ObservedAvarConfig,
};
use hfsub::harness::experiment::{EstimatorChoice, Grid, Model, NoiseScenario};
use hfsub::harness::report::{report, write_outputs};
use hfsub::harness::{export_csv, ingest_csv, run_experiment, ColumnMap, ExperimentSpec};
use hfsub::inference::{const_vol_test, jump_test};
use hfsub::preavg::{noise_variance_hat, preavg_bipower, WeightScheme};
use hfsub::series::log_returns;
use hfsub::simulate::{
    add_jumps, add_noise, rng_stream, simulate_heston_with, HestonConfig, JumpConfig, NoiseConfig,
};
use hfsub::subsample::{
    subsample_cov_bipower, subsample_cov_noisy, subsample_cov_power, subsample_cov_truncated,
    suggest_tuning, BlockCorrection, Regime, SubsampleConfig,
};
use hfsub::variation::{
    bipower_variation, power_variation, truncated_bipower_variation, TruncationRule,
};
use hfsub::{CovEstimate, Error, PowerSpec, Result, TickSeries};

#[derive(Parser)]
#[command(
    name = "hfsub",
    version,
    about = "Volatility functionals and subsampled covariance estimates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a price path and write it as CSV.
    Simulate(SimulateArgs),
    /// Point estimates from a CSV price file.
    Estimate(EstimateArgs),
    /// Subsampled covariance estimate with diagnostics.
    Subsample(SubsampleArgs),
    /// Hypothesis tests.
    Test {
        #[command(subcommand)]
        which: TestCommand,
    },
    /// Run a Monte Carlo experiment.
    Mc(McArgs),
    /// Aggregate a replication table.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum TestCommand {
    /// Test for jumps from V*(2,0) and V*(1,1).
    Jumps(TestArgs),
    /// Test for constant volatility from V*(2,0) and V*(4,0).
    Constvol(TestArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    None,
    Iid,
    Ma1,
    General,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Bm,
    Sv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CovArg {
    Subsample,
    SigmaTilde,
    RescaledBipower,
    PvTilde,
    ObservedAvar,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// CSV file with `timestamp,price` rows, or one price per row with `--single-column`.
    input: PathBuf,
    #[arg(long)]
    single_column: bool,
    /// Treat the price column as log-prices.
    #[arg(long)]
    log_prices: bool,
}

impl InputArgs {
    fn load(&self) -> Result<TickSeries> {
        let mut map = if self.single_column {
            ColumnMap::single()
        } else {
            ColumnMap::default()
        };
        map.log_prices = self.log_prices;
        ingest_csv(&self.input, map)
    }
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Powers q, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    q: Vec<f64>,
    /// Powers r, comma separated; zeros when omitted.
    #[arg(long, value_delimiter = ',')]
    r: Option<Vec<f64>>,
}

impl SpecArgs {
    fn spec(&self) -> Result<PowerSpec> {
        let r = self.r.clone().unwrap_or_else(|| vec![0.0; self.q.len()]);
        PowerSpec::new(self.q.clone(), r)
    }
}

#[derive(Args, Clone)]
struct TruncArgs {
    /// Truncation level alpha; enables truncation.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "omega-check", default_value_t = 0.49)]
    omega_check: f64,
}

impl TruncArgs {
    fn rule(&self) -> Result<Option<TruncationRule>> {
        self.alpha
            .map(|a| TruncationRule::new(a, self.omega_check))
            .transpose()
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 23_400)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "sv")]
    model: ModelArg,
    #[arg(long, value_enum, default_value = "none")]
    noise: NoiseArg,
    /// Noise variance for iid and MA(1) noise.
    #[arg(long, default_value_t = 1e-4)]
    omega2: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = -0.4)]
    zeta: f64,
    /// Expected jump count on the unit interval.
    #[arg(long, default_value_t = 0.0)]
    jumps: f64,
    #[arg(long, default_value_t = 0.0)]
    jump_variance: f64,
    /// Output CSV of log-prices.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    trunc: TruncArgs,
    /// Pre-average with window constant theta.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SubsampleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    trunc: TruncArgs,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, value_enum, default_value = "on")]
    corrections: Switch,
    /// Covariance estimator.
    #[arg(long, value_enum, default_value = "subsample")]
    method: CovArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long = "L", default_value_t = 15)]
    l: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, value_enum, default_value = "on")]
    corrections: Switch,
    /// Use the log-ratio jump statistic.
    #[arg(long)]
    log_form: bool,
    /// Known noise variance; estimated when omitted.
    #[arg(long)]
    omega2: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// JSON experiment description; the grid flags are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "n-sim", default_value_t = 100)]
    n_sim: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "sv")]
    model: Vec<ModelArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "general")]
    noise: Vec<NoiseArg>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    theta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "23400")]
    n: Vec<usize>,
    #[arg(long = "L", value_delimiter = ',', default_value = "15")]
    l: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    p: Vec<usize>,
    #[command(flatten)]
    powers: SpecArgs,
    #[arg(long, value_delimiter = ',', default_value = "noisy-subsample")]
    estimators: Vec<EstimatorArg>,
    #[arg(long, value_enum, default_value = "on")]
    corrections: Switch,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    NoisySubsample,
    PvTilde,
    ObservedAvar,
    BipowerSubsample,
    SigmaTilde,
    RescaledBipower,
}

impl From<EstimatorArg> for EstimatorChoice {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::NoisySubsample => EstimatorChoice::NoisySubsample,
            EstimatorArg::PvTilde => EstimatorChoice::PvTilde,
            EstimatorArg::ObservedAvar => EstimatorChoice::ObservedAvar,
            EstimatorArg::BipowerSubsample => EstimatorChoice::BipowerSubsample,
            EstimatorArg::SigmaTilde => EstimatorChoice::SigmaTilde,
            EstimatorArg::RescaledBipower => EstimatorChoice::RescaledBipower,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// `replications.csv` written by `mc`.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = HestonConfig::daily(a.n, a.seed);
    if a.model == ModelArg::Bm {
        cfg.xi = 0.0;
    }
    let mut rng = rng_stream(a.seed, 0);
    let path = simulate_heston_with(&cfg, &mut rng)?;
    let mut x = path.prices.clone();
    if a.jumps > 0.0 {
        let jc = JumpConfig {
            intensity: a.jumps,
            size_variance: a.jump_variance,
        };
        x = add_jumps(&x, &jc, &mut rng)?.0;
    }
    let noise = match a.noise {
        NoiseArg::None => NoiseConfig::none(),
        NoiseArg::Iid => NoiseConfig::iid(a.omega2),
        NoiseArg::Ma1 => NoiseConfig::ma1(a.omega2, a.zeta),
        NoiseArg::General => NoiseConfig::hetero_ma1(a.gamma, a.zeta),
    };
    let y = add_noise(&x, Some(&path.spot_var), &noise, &mut rng)?;
    export_csv(&a.out, &y)
}

fn estimate(a: &EstimateArgs) -> Result<()> {
    let x = a.input.load()?;
    let spec = a.spec.spec()?;
    let est = if let Some(theta) = a.theta {
        let scheme = WeightScheme::min_weight(theta, x.n())?;
        preavg_bipower(&x, &spec, &scheme)?
    } else {
        let d = log_returns(&x)?;
        match a.trunc.rule()? {
            Some(rule) => truncated_bipower_variation(&d, &spec, &rule)?,
            None if spec.is_pure() => power_variation(&d, &spec)?,
            None => bipower_variation(&d, &spec)?,
        }
    };
    emit(&serde_json::to_value(&est)?, a.out.as_deref())
}

fn sub_config(l: usize, p: usize, on: Switch, noisy: bool) -> SubsampleConfig {
    match (on, noisy) {
        (Switch::Off, _) => SubsampleConfig::raw(l, p),
        (Switch::On, true) => SubsampleConfig::noisy(l, p),
        (Switch::On, false) => SubsampleConfig {
            l_correction: true,
            p_correction: BlockCorrection::Plain,
            ..SubsampleConfig::raw(l, p)
        },
    }
}

fn subsample(a: &SubsampleArgs) -> Result<()> {
    let x = a.input.load()?;
    let spec = a.spec.spec()?;
    let n = x.n();
    let scheme = a
        .theta
        .map(|t| WeightScheme::min_weight(t, n))
        .transpose()?;
    let d = log_returns(&x)?;
    let rule = a.trunc.rule()?;
    let cov: CovEstimate = match a.method {
        CovArg::Subsample => {
            let regime = match (&scheme, spec.is_pure() && a.p.is_none() && rule.is_none()) {
                (Some(_), _) => Regime::Noisy,
                (None, true) => Regime::Power,
                (None, false) => Regime::Bipower,
            };
            let kn = scheme.as_ref().map_or(1, |s| s.kn());
            let t = suggest_tuning(n, regime, 1.0, 1.0, kn);
            let cfg = sub_config(
                a.l.unwrap_or(t.subsamples),
                a.p.unwrap_or(t.block),
                a.corrections,
                scheme.is_some(),
            );
            match (&scheme, rule, regime) {
                (Some(s), _, _) => subsample_cov_noisy(&x, &spec, s, &cfg)?,
                (None, Some(rule), _) => subsample_cov_truncated(&d, &spec, &rule, &cfg)?,
                (None, None, Regime::Power) => subsample_cov_power(&d, &spec, &cfg)?,
                (None, None, _) => subsample_cov_bipower(&d, &spec, &cfg)?,
            }
        }
        CovArg::SigmaTilde => sigma_tilde(&d, &spec)?,
        CovArg::RescaledBipower => sigma_via_rescaled_bipower(&d, &spec)?,
        CovArg::PvTilde => sigma_tilde_star_pv(&x, &spec, scheme.as_ref().ok_or_else(need_theta)?)?,
        CovArg::ObservedAvar => observed_avar(
            &x,
            &spec,
            scheme.as_ref().ok_or_else(need_theta)?,
            &ObservedAvarConfig::new(15, 1, 2)?,
        )?,
    };
    emit(&cov.to_json(), a.out.as_deref())
}

fn need_theta() -> Error {
    Error::InvalidConfig("this estimator needs --theta".into())
}

fn run_test(a: &TestArgs, jumps: bool) -> Result<()> {
    let x = a.input.load()?;
    let scheme = WeightScheme::min_weight(a.theta, x.n())?;
    let cfg = sub_config(a.l, a.p, a.corrections, true);
    let result = if jumps {
        let spec = PowerSpec::from_pairs(&[(2.0, 0.0), (1.0, 1.0)])?;
        let cov = subsample_cov_noisy(&x, &spec, &scheme, &cfg)?;
        jump_test(&x, &scheme, &cov, a.log_form)?
    } else {
        let spec = PowerSpec::pure(vec![2.0, 4.0])?;
        let cov = subsample_cov_noisy(&x, &spec, &scheme, &cfg)?;
        const_vol_test(&x, &scheme, &cov, a.omega2)?
    };
    let mut v = serde_json::to_value(result)?;
    if !jumps {
        let omega2 = match a.omega2 {
            Some(w) => w,
            None => noise_variance_hat(&log_returns(&x)?)?,
        };
        v["omega2"] = json!(omega2);
    }
    emit(&v, a.out.as_deref())
}

fn mc(a: &McArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => serde_json::from_str::<ExperimentSpec>(&fs::read_to_string(path)?)?,
        None => {
            let r = a
                .powers
                .r
                .clone()
                .unwrap_or_else(|| vec![0.0; a.powers.q.len()]);
            ExperimentSpec {
                seed: a.seed,
                n_sim: a.n_sim,
                grid: Grid {
                    models: a
                        .model
                        .iter()
                        .map(|m| {
                            if *m == ModelArg::Bm {
                                Model::Bm
                            } else {
                                Model::Sv
                            }
                        })
                        .collect(),
                    noises: a
                        .noise
                        .iter()
                        .map(|k| match k {
                            NoiseArg::None => Ok(NoiseScenario::None),
                            NoiseArg::Iid => Ok(NoiseScenario::Iid),
                            NoiseArg::General => Ok(NoiseScenario::General),
                            NoiseArg::Ma1 => Err(Error::InvalidConfig(
                                "mc supports none, iid and general noise".into(),
                            )),
                        })
                        .collect::<Result<_>>()?,
                    thetas: a.theta.clone(),
                    ns: a.n.clone(),
                    subsamples: a.l.clone(),
                    blocks: a.p.clone(),
                    q: a.powers.q.clone(),
                    r,
                    estimators: a.estimators.iter().map(|&e| e.into()).collect(),
                    corrections: a.corrections == Switch::On,
                    observed_avar: ObservedAvarConfig::new(15, 1, 2)?,
                    gamma: 0.5,
                    zeta: -0.4,
                },
            }
        }
    };
    let result = run_experiment(&spec)?;
    fs::create_dir_all(&a.out)?;
    write_outputs(&result, &a.out)?;
    let errors: Vec<Value> = result
        .cells
        .iter()
        .filter_map(|c| {
            c.error
                .as_ref()
                .map(|e| json!({ "cell": c.cell.id, "error": e }))
        })
        .collect();
    emit(
        &json!({ "cells": result.cells.len(), "cell_errors": errors, "out": a.out }),
        None,
    )
}

fn run_report(a: &ReportArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let summary = report(&a.input, &a.out)?;
    emit(&serde_json::to_value(summary)?, None)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Subsample(a) => subsample(a),
        Command::Test {
            which: TestCommand::Jumps(a),
        } => run_test(a, true),
        Command::Test {
            which: TestCommand::Constvol(a),
        } => run_test(a, false),
        Command::Mc(a) => mc(a),
        Command::Report(a) => run_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_infeasible() { 3 } else { 2 })
        }
    }
}
