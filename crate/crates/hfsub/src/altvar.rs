//! Competing covariance estimators and closed-form oracles.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cov::{mean_outer, CovEstimate, EstimatorId};
use crate::error::{Error, Result};
use crate::preavg::{paired_mean, preaverage_returns, WeightScheme};
use crate::series::{gaussian_abs_moment as mu, log_returns, PowerSpec, ReturnSeries, TickSeries};
use crate::variation::{bipower_variation_with, BipowerFunctional};

fn moment_weight(spec: &PowerSpec, i: usize, j: usize) -> Result<f64> {
    let (qi, ri) = spec.pair(i);
    let (qj, rj) = spec.pair(j);
    Ok(mu(qi + qj)? * mu(ri + rj)?
        + mu(qi)? * mu(rj)? * mu(qj + ri)?
        + mu(qj)? * mu(ri)? * mu(qi + rj)?
        - 3.0 * mu(qi)? * mu(qj)? * mu(ri)? * mu(rj)?)
}

/// Asymptotic covariance of a pure bipower vector, given `p -> int |sigma|^p`.
pub fn closed_form_sigma(
    spec: &PowerSpec,
    integrated_power: &dyn Fn(f64) -> f64,
) -> Result<DMatrix<f64>> {
    let m = spec.dim();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let p = spec.q()[i] + spec.q()[j] + spec.r()[i] + spec.r()[j];
            out[(i, j)] = moment_weight(spec, i, j)? * integrated_power(p);
            out[(j, i)] = out[(i, j)];
        }
    }
    Ok(out)
}

/// Entry `(i, j)` is a constant times the bipower variation with summed powers.
pub fn sigma_via_rescaled_bipower(returns: &ReturnSeries, spec: &PowerSpec) -> Result<CovEstimate> {
    if returns.n() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: returns.n(),
        });
    }
    let m = spec.dim();
    let mut pairs = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            pairs.push((spec.q()[i] + spec.q()[j], spec.r()[i] + spec.r()[j]));
        }
    }
    let summed = PowerSpec::from_pairs(&pairs)?;
    let v = bipower_variation_with(returns, &summed);
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let (q, r) = pairs[i * m + j];
            out[(i, j)] = moment_weight(spec, i, j)? / (mu(q)? * mu(r)?) * v[i * m + j];
        }
    }
    CovEstimate::new(out, EstimatorId::RescaledBipower, 1.0)
}

/// Sum of 1-dependent cross products of adjacent bipower summands. Not PSD in general.
pub fn sigma_tilde_with<F: BipowerFunctional + ?Sized>(
    returns: &ReturnSeries,
    f: &F,
) -> Result<CovEstimate> {
    let n = returns.n();
    if n < 6 {
        return Err(Error::SeriesTooShort { needed: 6, got: n });
    }
    let m = f.dim();
    let s = (n as f64).sqrt();
    let d = returns.as_slice();
    let mut gamma = vec![0.0; (n - 1) * m];
    for t in 0..n - 1 {
        f.eval(s * d[t], s * d[t + 1], &mut gamma[t * m..(t + 1) * m]);
    }
    let g = |t: usize, k: usize| gamma[t * m + k];
    let mut out = DMatrix::zeros(m, m);
    for t in 1..=n - 4 {
        for i in 0..m {
            for j in 0..m {
                out[(i, j)] += g(t, i) * (g(t - 1, j) + g(t, j) + g(t + 1, j) - 3.0 * g(t + 2, j));
            }
        }
    }
    CovEstimate::new(out / n as f64, EstimatorId::SigmaTilde, 1.0)
}

pub fn sigma_tilde(returns: &ReturnSeries, spec: &PowerSpec) -> Result<CovEstimate> {
    sigma_tilde_with(returns, spec)
}

/// Kernel-type estimator of the pre-averaged covariance built from window sums
/// of products of pre-averaged statistics. Not PSD in general.
pub fn sigma_tilde_star_pv(
    prices: &TickSeries,
    spec: &PowerSpec,
    scheme: &WeightScheme,
) -> Result<CovEstimate> {
    let n = prices.n();
    let kn = scheme.kn();
    if n < 4 * kn {
        return Err(Error::WindowTooLarge { kn, n });
    }
    let d = log_returns(prices)?;
    let ybar = preaverage_returns(d.as_slice(), scheme)?;
    let c = (n as f64).powf(0.25);
    let m = spec.dim();
    let len = ybar.len() - kn;
    let inv = 1.0 / (n as f64).sqrt();
    // ytil[k][t] for t = 0..len
    let mut ytil = vec![vec![0.0; len]; m];
    let mut buf = vec![0.0; m];
    for t in 0..len {
        spec.eval_pair(c * ybar[t], c * ybar[t + kn], &mut buf);
        for k in 0..m {
            ytil[k][t] = inv * buf[k];
        }
    }
    let prefix: Vec<Vec<f64>> = ytil
        .iter()
        .map(|y| {
            let mut p = vec![0.0; y.len() + 1];
            for (t, v) in y.iter().enumerate() {
                p[t + 1] = p[t] + v;
            }
            p
        })
        .collect();
    let w = 2 * kn;
    let last = n + 1 - 4 * kn;
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..=last {
                let sj = prefix[j][t + w] - prefix[j][t];
                let si = prefix[i][t + w] - prefix[i][t];
                acc += 0.5
                    * (ytil[i][t] * (sj - w as f64 * ytil[j][t + w])
                        + ytil[j][t] * (si - w as f64 * ytil[i][t + w]));
            }
            out[(i, j)] = 2.0 * inv * acc;
        }
    }
    CovEstimate::new(out, EstimatorId::PvTilde, 1.0)
}

/// Settings for the observed asymptotic variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedAvarConfig {
    /// Number of blocks `B`.
    pub blocks: usize,
    pub k1: usize,
    pub k2: usize,
    /// Let block statistics read pre-averaging windows past the block end;
    /// the last block, which has no data ahead, is dropped.
    pub forward_edges: bool,
}

impl ObservedAvarConfig {
    pub fn new(blocks: usize, k1: usize, k2: usize) -> Result<Self> {
        let cfg = Self {
            blocks,
            k1,
            k2,
            forward_edges: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.blocks < 2 || self.k1 < 1 || self.k1 >= self.k2 {
            return Err(Error::InvalidConfig(format!(
                "observed AVAR needs B >= 2 and 1 <= K1 < K2, got B = {}, K1 = {}, K2 = {}",
                self.blocks, self.k1, self.k2
            )));
        }
        Ok(())
    }
}

/// `(K/2)` times the mean outer product of differences between the means of
/// `K` consecutive local statistics and the `K` before them.
pub fn k_averaged_qv(local: &[Vec<f64>], k: usize) -> Result<DMatrix<f64>> {
    if local.len() < 2 * k {
        return Err(Error::InsufficientData(format!(
            "{} local statistics for K = {k}",
            local.len()
        )));
    }
    let m = local[0].len();
    let diffs: Vec<Vec<f64>> = (k..=local.len() - k)
        .map(|i| {
            (0..m)
                .map(|c| {
                    let ahead: f64 = local[i..i + k].iter().map(|v| v[c]).sum();
                    let behind: f64 = local[i - k..i].iter().map(|v| v[c]).sum();
                    (ahead - behind) / k as f64
                })
                .collect()
        })
        .collect();
    Ok(mean_outer(&diffs, m) * (0.5 * k as f64))
}

/// Combination of two K-averaged estimates that removes a term growing like `K^3`,
/// which is what a smooth drift in the local statistics produces.
pub fn two_scale_avar(local: &[Vec<f64>], k1: usize, k2: usize) -> Result<DMatrix<f64>> {
    let a1 = k_averaged_qv(local, k1)?;
    let a2 = k_averaged_qv(local, k2)?;
    let (c1, c2) = ((k1 as f64).powi(3), (k2 as f64).powi(3));
    Ok((a1 * c2 - a2 * c1) / (c2 - c1))
}

/// Observed asymptotic variance of the pre-averaged bipower vector.
pub fn observed_avar(
    prices: &TickSeries,
    spec: &PowerSpec,
    scheme: &WeightScheme,
    cfg: &ObservedAvarConfig,
) -> Result<CovEstimate> {
    cfg.validate()?;
    let n = prices.n();
    let kn = scheme.kn();
    let width = n / cfg.blocks;
    if n < 2 * kn || width < 2 * kn + 2 {
        return Err(Error::InsufficientData(format!(
            "{n} returns in {} blocks leave fewer than 2 kn + 2 per block",
            cfg.blocks
        )));
    }
    let d = log_returns(prices)?;
    let ybar = preaverage_returns(d.as_slice(), scheme)?;
    let c = (n as f64).powf(0.25);
    let products = ybar.len() - kn;
    let mut local = Vec::with_capacity(cfg.blocks);
    for b in 0..cfg.blocks {
        let start = b * width;
        let stat = if cfg.forward_edges {
            if start + width > products {
                break;
            }
            paired_mean(&ybar[start..start + width + kn], kn, c, spec)
        } else {
            paired_mean(&ybar[start..start + width - kn + 2], kn, c, spec)
        };
        local.push(stat);
    }
    let per = if cfg.forward_edges {
        width
    } else {
        width + 2 - 2 * kn
    };
    let used = local.len();
    let v = two_scale_avar(&local, cfg.k1, cfg.k2)?;
    // Var of the full-sample mean = (per-block variance) * per / total products.
    let out = v * ((n as f64).sqrt() * per as f64 / products as f64);
    CovEstimate::new(
        out,
        EstimatorId::ObservedAvar,
        (used * width) as f64 / n as f64,
    )
}
