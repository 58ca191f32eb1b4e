//! Subsampling estimators of the asymptotic covariance matrix.
//!
//! Each estimator splits the sample into `L` disjoint subsamples, recomputes
//! the statistic on each, and takes the scaled empirical second moment of the
//! deviations from the full-sample statistic. The result is positive
//! semi-definite by construction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cov::{mean_outer, CovEstimate, EstimatorId};
use crate::error::{Error, Result};
use crate::preavg::{paired_mean, preaverage_returns, WeightScheme};
use crate::series::{log_returns, PowerSpec, ReturnSeries, TickSeries};
use crate::variation::{
    bipower_variation_with, power_variation_with, truncate_returns, BipowerFunctional,
    PowerFunctional, PurePowers, TruncationRule,
};

/// Finite-sample rescaling applied for the block length `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockCorrection {
    #[default]
    None,
    /// Divide by `1 - 1/p`.
    Plain,
    /// Divide by `1 - 0.75/p`; pre-averaged statistics only.
    Hac,
}

/// Treatment of the unused tail when the blocks do not fill the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowInflation {
    /// Return the partial-window estimate unchanged.
    #[default]
    Identity,
    /// Divide by the effective window.
    Rescale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    /// Number of subsamples `L`.
    pub subsamples: usize,
    /// Block multiplier `p`; unused by the power subsampler.
    pub block: usize,
    /// Divide by `1 - 1/L`.
    pub l_correction: bool,
    pub p_correction: BlockCorrection,
    pub inflation: WindowInflation,
}

impl SubsampleConfig {
    /// No finite-sample corrections.
    pub fn raw(subsamples: usize, block: usize) -> Self {
        Self {
            subsamples,
            block,
            l_correction: false,
            p_correction: BlockCorrection::None,
            inflation: WindowInflation::Identity,
        }
    }

    /// Both corrections on, the default for the pre-averaged estimator.
    pub fn noisy(subsamples: usize, block: usize) -> Self {
        Self {
            l_correction: true,
            p_correction: BlockCorrection::Hac,
            ..Self::raw(subsamples, block)
        }
    }

    fn check_l(&self) -> Result<()> {
        if self.subsamples < 2 {
            return Err(Error::TooFewSubsamples(self.subsamples));
        }
        Ok(())
    }

    fn finish(&self, mut m: DMatrix<f64>, window: f64) -> DMatrix<f64> {
        let l = self.subsamples as f64;
        let p = self.block as f64;
        if self.l_correction {
            m /= 1.0 - 1.0 / l;
        }
        match self.p_correction {
            BlockCorrection::None => {}
            BlockCorrection::Plain => m /= 1.0 - 1.0 / p,
            BlockCorrection::Hac => m /= 1.0 - 0.75 / p,
        }
        if self.inflation == WindowInflation::Rescale {
            m /= window;
        }
        m
    }
}

/// Blocks per subsample: `floor(floor(n / (p kn)) / L)`.
pub fn n_block(n: usize, kn: usize, p: usize, l: usize) -> Result<usize> {
    if n == 0 || kn == 0 || p == 0 || l == 0 {
        return Err(Error::InvalidConfig(
            "n_block arguments must be positive".into(),
        ));
    }
    match (n / (p * kn)) / l {
        0 => Err(Error::ZeroBlocks),
        b => Ok(b),
    }
}

/// Which rate regime [`suggest_tuning`] targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Power,
    Bipower,
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tuning {
    pub subsamples: usize,
    pub block: usize,
}

/// Rate-optimal `(L, p)` up to the user constants `c_l`, `c_p`.
///
/// `kn` is the pre-averaging window and only matters for [`Regime::Noisy`].
/// Values are reduced until at least one block per subsample fits.
pub fn suggest_tuning(n: usize, regime: Regime, c_l: f64, c_p: f64, kn: usize) -> Tuning {
    let nf = n as f64;
    let round = |x: f64| x.round().max(0.0) as usize;
    let (mut l, mut p) = match regime {
        Regime::Power => (round(c_l * nf.powf(2.0 / 3.0)), 1),
        Regime::Bipower => (round(c_l * nf.powf(0.4)), round(c_p * nf.powf(0.2))),
        Regime::Noisy => (round(c_l * nf.powf(0.2)), round(c_p * nf.powf(0.1)).max(3)),
    };
    let p_min = match regime {
        Regime::Power => 1,
        Regime::Bipower => 2,
        Regime::Noisy => 3,
    };
    l = l.max(2);
    p = p.max(p_min);
    let width = if regime == Regime::Noisy {
        kn.max(1)
    } else {
        1
    };
    let min_per = if regime == Regime::Power { 2 } else { 1 };
    while l > 2 && n / (p * width) / l < min_per {
        l -= 1;
    }
    while p > p_min && n / (p * width) / l < min_per {
        p -= 1;
    }
    Tuning {
        subsamples: l,
        block: p,
    }
}

/// Strided subsampler for a power variation.
pub fn subsample_cov_power_with<F: PowerFunctional + ?Sized>(
    returns: &ReturnSeries,
    f: &F,
    cfg: &SubsampleConfig,
) -> Result<CovEstimate> {
    cfg.check_l()?;
    let n = returns.n();
    let l = cfg.subsamples;
    let per = n / l;
    if per < 2 {
        return Err(Error::SubsampleTooSmall(format!(
            "{n} returns give {per} per subsample with L = {l}"
        )));
    }
    let m = f.dim();
    let full = power_variation_with(returns, f);
    let s = (n as f64).sqrt();
    let d = returns.as_slice();
    let mut buf = vec![0.0; m];
    let devs: Vec<Vec<f64>> = (0..l)
        .map(|j| {
            let mut acc = vec![0.0; m];
            for i in 0..per {
                f.eval(s * d[i * l + j], &mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b;
                }
            }
            let c = (n as f64 / l as f64).sqrt();
            acc.iter()
                .zip(&full)
                .map(|(a, v)| c * (a / per as f64 - v))
                .collect()
        })
        .collect();
    let window = (per * l) as f64 / n as f64;
    CovEstimate::new(
        cfg.finish(mean_outer(&devs, m), window),
        EstimatorId::PowerSubsample,
        window,
    )
}

/// Strided subsampler for pure power variations (`r = 0`).
pub fn subsample_cov_power(
    returns: &ReturnSeries,
    spec: &PowerSpec,
    cfg: &SubsampleConfig,
) -> Result<CovEstimate> {
    subsample_cov_power_with(returns, &PurePowers::new(spec)?, cfg)
}

/// The subsample means `V_l` of the power subsampler, for diagnostics and tests.
pub fn power_subsample_means<F: PowerFunctional + ?Sized>(
    returns: &ReturnSeries,
    f: &F,
    l: usize,
) -> Vec<Vec<f64>> {
    let n = returns.n();
    let per = n / l;
    let s = (n as f64).sqrt();
    let m = f.dim();
    let mut buf = vec![0.0; m];
    (0..l)
        .map(|j| {
            let mut acc = vec![0.0; m];
            for i in 0..per {
                f.eval(s * returns.as_slice()[i * l + j], &mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b;
                }
            }
            acc.iter().map(|a| a / per as f64).collect()
        })
        .collect()
}

fn blocked<F: BipowerFunctional + ?Sized>(
    returns: &ReturnSeries,
    f: &F,
    cfg: &SubsampleConfig,
    id: EstimatorId,
) -> Result<CovEstimate> {
    cfg.check_l()?;
    let p = cfg.block;
    if p < 2 {
        return Err(Error::BlockTooSmall(format!(
            "p = {p}; blocks need at least 2 returns"
        )));
    }
    if cfg.p_correction == BlockCorrection::Hac {
        return Err(Error::InvalidConfig(
            "the 0.75/p correction applies to pre-averaged statistics only".into(),
        ));
    }
    let n = returns.n();
    let l = cfg.subsamples;
    let nb = n_block(n, 1, p, l).map_err(|_| {
        Error::InsufficientData(format!(
            "{n} returns cannot fill one block of {p} per subsample (L = {l})"
        ))
    })?;
    let m = f.dim();
    let s = (n as f64).sqrt();
    let d = returns.as_slice();
    let full = bipower_variation_with(returns, f);
    let mut buf = vec![0.0; m];
    let c = (n as f64 / l as f64).sqrt();
    let devs: Vec<Vec<f64>> = (0..l)
        .map(|j| {
            let mut acc = vec![0.0; m];
            for b in 0..nb {
                let start = (b * l + j) * p;
                for t in start..start + p - 1 {
                    f.eval(s * d[t], s * d[t + 1], &mut buf);
                    for (a, v) in acc.iter_mut().zip(&buf) {
                        *a += v;
                    }
                }
            }
            let denom = (nb * (p - 1)) as f64;
            acc.iter()
                .zip(&full)
                .map(|(a, v)| c * (a / denom - v))
                .collect()
        })
        .collect();
    let window = (nb * l * p) as f64 / n as f64;
    CovEstimate::new(cfg.finish(mean_outer(&devs, m), window), id, window)
}

/// Blocked subsampler for bipower variations without noise.
pub fn subsample_cov_bipower_with<F: BipowerFunctional + ?Sized>(
    returns: &ReturnSeries,
    f: &F,
    cfg: &SubsampleConfig,
) -> Result<CovEstimate> {
    blocked(returns, f, cfg, EstimatorId::BipowerSubsample)
}

pub fn subsample_cov_bipower(
    returns: &ReturnSeries,
    spec: &PowerSpec,
    cfg: &SubsampleConfig,
) -> Result<CovEstimate> {
    blocked(returns, spec, cfg, EstimatorId::BipowerSubsample)
}

/// Blocked subsampler on jump-truncated returns.
pub fn subsample_cov_truncated(
    returns: &ReturnSeries,
    spec: &PowerSpec,
    rule: &TruncationRule,
    cfg: &SubsampleConfig,
) -> Result<CovEstimate> {
    blocked(
        &truncate_returns(returns, rule),
        spec,
        cfg,
        EstimatorId::TruncatedSubsample,
    )
}

/// Blocked subsampler for pre-averaged bipower variations of noisy prices.
///
/// Block `i` covers `p kn` consecutive returns and its statistic only uses
/// pre-averaged returns computed inside the block.
pub fn subsample_cov_noisy_with<F: BipowerFunctional + ?Sized>(
    prices: &TickSeries,
    f: &F,
    scheme: &WeightScheme,
    cfg: &SubsampleConfig,
) -> Result<CovEstimate> {
    cfg.check_l()?;
    let p = cfg.block;
    if p < 3 {
        return Err(Error::BlockTooSmall(format!(
            "p = {p}; with p = 2 a block holds only kn + 2 pre-averaged products, p must be at least 3"
        )));
    }
    let n = prices.n();
    let kn = scheme.kn();
    let l = cfg.subsamples;
    let nb = n_block(n, kn, p, l).map_err(|_| {
        Error::InsufficientData(format!("n = {n} is smaller than L p kn = {}", l * p * kn))
    })?;
    let d = log_returns(prices)?;
    // Pre-averaged returns inside a block coincide with the global ones at the
    // same positions, so one pass over the data serves every block.
    let ybar = preaverage_returns(d.as_slice(), scheme)?;
    let c = (n as f64).powf(0.25);
    let full = paired_mean(&ybar, kn, c, f);
    let span = p * kn;
    let m = f.dim();
    let scale = c / (l as f64).sqrt();
    let devs: Vec<Vec<f64>> = (0..l)
        .map(|j| {
            let mut acc = vec![0.0; m];
            for b in 0..nb {
                let start = (b * l + j) * span;
                let v = paired_mean(&ybar[start..start + span - kn + 2], kn, c, f);
                for (a, x) in acc.iter_mut().zip(&v) {
                    *a += x;
                }
            }
            acc.iter()
                .zip(&full)
                .map(|(a, v)| scale * (a / nb as f64 - v))
                .collect()
        })
        .collect();
    let window = (nb * l * span) as f64 / n as f64;
    CovEstimate::new(
        cfg.finish(mean_outer(&devs, m), window),
        EstimatorId::NoisySubsample,
        window,
    )
}

/// Statistics `v_i` of the `n_block * L` noisy blocks in time order.
pub fn noisy_block_statistics<F: BipowerFunctional + ?Sized>(
    prices: &TickSeries,
    f: &F,
    scheme: &WeightScheme,
    cfg: &SubsampleConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.check_l()?;
    if cfg.block < 3 {
        return Err(Error::BlockTooSmall(format!("p = {}", cfg.block)));
    }
    let n = prices.n();
    let kn = scheme.kn();
    let nb = n_block(n, kn, cfg.block, cfg.subsamples)?;
    let ybar = preaverage_returns(log_returns(prices)?.as_slice(), scheme)?;
    let c = (n as f64).powf(0.25);
    let span = cfg.block * kn;
    Ok((0..nb * cfg.subsamples)
        .map(|i| paired_mean(&ybar[i * span..(i + 1) * span - kn + 2], kn, c, f))
        .collect())
}

pub fn subsample_cov_noisy(
    prices: &TickSeries,
    spec: &PowerSpec,
    scheme: &WeightScheme,
    cfg: &SubsampleConfig,
) -> Result<CovEstimate> {
    subsample_cov_noisy_with(prices, spec, scheme, cfg)
}

/// `(1/2n) sum_i (f_i - f_{i+1})(f_i - f_{i+1})'` for a power variation.
pub fn s_hat_power_with<F: PowerFunctional + ?Sized>(
    returns: &ReturnSeries,
    f: &F,
) -> Result<CovEstimate> {
    let n = returns.n();
    if n < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: n });
    }
    let m = f.dim();
    let s = (n as f64).sqrt();
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    let mut out = DMatrix::zeros(m, m);
    f.eval(s * returns.as_slice()[0], &mut prev);
    for &x in &returns.as_slice()[1..] {
        f.eval(s * x, &mut cur);
        for i in 0..m {
            for j in 0..m {
                out[(i, j)] += (prev[i] - cur[i]) * (prev[j] - cur[j]);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    CovEstimate::new(out / (2.0 * n as f64), EstimatorId::SHat, 1.0)
}

pub fn s_hat_power(returns: &ReturnSeries, spec: &PowerSpec) -> Result<CovEstimate> {
    s_hat_power_with(returns, &PurePowers::new(spec)?)
}
