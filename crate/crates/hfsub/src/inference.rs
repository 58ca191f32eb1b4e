//! Studentization, confidence intervals and delta-method tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cov::{matrix_diagnostics, CovEstimate, Diagnostics};
use crate::error::{Error, Result};
use crate::preavg::{
    iq_hat_from, iv_hat_from, noise_variance_hat, preavg_bipower_with, WeightScheme,
};
use crate::series::{gaussian_abs_moment, log_returns, PowerSpec, TickSeries};
use crate::variation::EstimateVector;

pub use crate::cov::matrix_diagnostics as diagnostics;

/// Convergence rate of an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    /// `sqrt(n)`, noise-free statistics.
    RootN,
    /// `n^{1/4}`, pre-averaged statistics.
    QuarticRootN,
}

impl Rate {
    pub fn factor(&self, n: usize) -> f64 {
        match self {
            Rate::RootN => (n as f64).sqrt(),
            Rate::QuarticRootN => (n as f64).powf(0.25),
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Outcome of a delta-method test against a standard normal reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// The contrast, before standardization.
    pub statistic: f64,
    pub std_error: f64,
    /// `statistic / std_error`.
    pub z: f64,
    pub rate: Rate,
    pub p_value_right: f64,
    pub p_value_two_sided: f64,
    pub cov_diag: Diagnostics,
}

impl TestResult {
    fn build(
        statistic: f64,
        variance: f64,
        n: usize,
        rate: Rate,
        cov: &CovEstimate,
    ) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::NonPositiveVariance {
                index: 0,
                value: variance,
            });
        }
        let std_error = variance.sqrt() / rate.factor(n);
        let z = statistic / std_error;
        let nd = std_normal();
        Ok(Self {
            statistic,
            std_error,
            z,
            rate,
            p_value_right: nd.sf(z),
            p_value_two_sided: (2.0 * nd.sf(z.abs())).min(1.0),
            cov_diag: matrix_diagnostics(&cov.matrix)?,
        })
    }
}

/// `rate * (V_k - target_k) / sqrt(cov_kk)` for every component.
pub fn studentize(
    estimate: &EstimateVector,
    target: &[f64],
    cov: &CovEstimate,
    rate: Rate,
) -> Result<Vec<f64>> {
    if target.len() != estimate.dim() {
        return Err(Error::LengthMismatch {
            left: estimate.dim(),
            right: target.len(),
        });
    }
    if cov.dim() != estimate.dim() {
        return Err(Error::LengthMismatch {
            left: estimate.dim(),
            right: cov.dim(),
        });
    }
    let r = rate.factor(estimate.n);
    (0..estimate.dim())
        .map(|k| {
            let v = cov.matrix[(k, k)];
            if !(v > 0.0) {
                return Err(Error::NonPositiveVariance { index: k, value: v });
            }
            Ok(r * (estimate.values[k] - target[k]) / v.sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    TwoSided,
    /// Lower bound only; the upper end is `+inf`.
    Left,
    /// Upper bound only; the lower end is `-inf`.
    Right,
}

/// Normal confidence interval `(lo, hi)`.
pub fn confidence_interval(
    statistic: f64,
    std_error: f64,
    level: f64,
    side: Sidedness,
) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    if !(std_error > 0.0) {
        return Err(Error::DomainError(format!(
            "standard error must be positive, got {std_error}"
        )));
    }
    let nd = std_normal();
    Ok(match side {
        Sidedness::TwoSided => {
            let z = nd.inverse_cdf(0.5 + 0.5 * level);
            (statistic - z * std_error, statistic + z * std_error)
        }
        Sidedness::Left => (statistic - nd.inverse_cdf(level) * std_error, f64::INFINITY),
        Sidedness::Right => (
            f64::NEG_INFINITY,
            statistic + nd.inverse_cdf(level) * std_error,
        ),
    })
}

/// The jump contrast on `(V*(2,0), V*(1,1))` and its gradient.
///
/// Raw form: `y - x / mu_1^2`. Log form: `ln y - ln(x / mu_1^2)`.
pub fn jump_contrast(v20: f64, v11: f64, log_form: bool) -> Result<(f64, [f64; 2])> {
    let mu1sq = gaussian_abs_moment(1.0)?.powi(2);
    if log_form {
        if !(v20 > 0.0 && v11 > 0.0) {
            return Err(Error::NonPositiveEstimate(format!(
                "log jump contrast needs positive inputs, got {v20}, {v11}"
            )));
        }
        Ok((v20.ln() - (v11 / mu1sq).ln(), [1.0 / v20, -1.0 / v11]))
    } else {
        Ok((v20 - v11 / mu1sq, [1.0, -1.0 / mu1sq]))
    }
}

/// Jump test from the pre-averaged `(V*(2,0), V*(1,1))` pair.
///
/// `cov` is the 2x2 covariance of that pair on the `n^{1/4}` scale. Large
/// positive statistics indicate jumps.
pub fn jump_test(
    prices: &TickSeries,
    scheme: &WeightScheme,
    cov: &CovEstimate,
    log_form: bool,
) -> Result<TestResult> {
    if cov.dim() != 2 {
        return Err(Error::LengthMismatch {
            left: 2,
            right: cov.dim(),
        });
    }
    let spec = PowerSpec::from_pairs(&[(2.0, 0.0), (1.0, 1.0)])?;
    let v = preavg_bipower_with(prices, &spec, scheme)?;
    jump_test_from(v[0], v[1], prices.n(), cov, log_form)
}

/// [`jump_test`] with precomputed statistics.
pub fn jump_test_from(
    v20: f64,
    v11: f64,
    n: usize,
    cov: &CovEstimate,
    log_form: bool,
) -> Result<TestResult> {
    let (stat, g) = jump_contrast(v20, v11, log_form)?;
    TestResult::build(stat, cov.quadratic_form(&g), n, Rate::QuarticRootN, cov)
}

/// `ln(sqrt(IQ) / IV)` from `(V*(2,0), V*(4,0))` and its gradient in those two inputs.
pub fn const_vol_contrast(
    v20: f64,
    v40: f64,
    omega2: f64,
    scheme: &WeightScheme,
    n: usize,
) -> Result<(f64, [f64; 2])> {
    let iv = iv_hat_from(v20, omega2, scheme, n);
    let iq = iq_hat_from(v40, iv, omega2, scheme, n);
    if !(iv > 0.0) || !(iq > 0.0) {
        return Err(Error::NonPositiveEstimate(format!("IV = {iv}, IQ = {iq}")));
    }
    let omega2 = omega2.max(0.0);
    let th = scheme.theta_eff(n);
    let (p1, p2) = (scheme.psi1_n(), scheme.psi2_n());
    let a = 1.0 / (th * p2);
    let tp2 = (th * p2).powi(2);
    let d_iq_d_iv = -2.0 * p2 * p1 * omega2 / tp2;
    let d_iq_d_v40 = 1.0 / (3.0 * tp2);
    let g20 = 0.5 * d_iq_d_iv * a / iq - a / iv;
    let g40 = 0.5 * d_iq_d_v40 / iq;
    Ok((0.5 * iq.ln() - iv.ln(), [g20, g40]))
}

/// Test of constant volatility from the pre-averaged `(V*(2,0), V*(4,0))` pair.
///
/// `cov4` is their joint covariance. When `omega2` is `None` the noise
/// variance is estimated from the data. The statistic is zero under constant
/// volatility and positive otherwise, so the left-sided interval is the
/// natural one.
pub fn const_vol_test(
    prices: &TickSeries,
    scheme: &WeightScheme,
    cov4: &CovEstimate,
    omega2: Option<f64>,
) -> Result<TestResult> {
    if cov4.dim() != 2 {
        return Err(Error::LengthMismatch {
            left: 2,
            right: cov4.dim(),
        });
    }
    let omega2 = match omega2 {
        Some(w) => w,
        None => noise_variance_hat(&log_returns(prices)?)?,
    };
    let spec = PowerSpec::pure(vec![2.0, 4.0])?;
    let v = preavg_bipower_with(prices, &spec, scheme)?;
    let n = prices.n();
    let (stat, g) = const_vol_contrast(v[0], v[1], omega2, scheme, n)?;
    TestResult::build(stat, cov4.quadratic_form(&g), n, Rate::QuarticRootN, cov4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cov::EstimatorId;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn intervals() {
        let (lo, hi) = confidence_interval(0.0, 1.0, 0.95, Sidedness::TwoSided).unwrap();
        assert_relative_eq!(hi, 1.959963984540054, epsilon = 1e-9);
        assert_relative_eq!(lo, -hi);
        let (lo, hi) = confidence_interval(1.0, 1.0, 0.95, Sidedness::Left).unwrap();
        assert_relative_eq!(lo, 1.0 - 1.6448536269514722, epsilon = 1e-9);
        assert!(hi.is_infinite());
        let (a, b) = confidence_interval(0.0, 2.0, 0.9, Sidedness::TwoSided).unwrap();
        let (c, d) = confidence_interval(0.0, 1.0, 0.9, Sidedness::TwoSided).unwrap();
        assert_relative_eq!(b - a, 2.0 * (d - c), max_relative = 1e-14);
        assert!(matches!(
            confidence_interval(0.0, 1.0, 1.0, Sidedness::Left),
            Err(Error::InvalidLevel(_))
        ));
    }

    #[test]
    fn studentize_basics() {
        let est = EstimateVector {
            values: vec![1.0, 2.0],
            kind: crate::variation::EstimatorKind::Bipower,
            spec: None,
            n: 100,
            truncation: None,
            kn: None,
            theta: None,
        };
        let cov = CovEstimate::new(
            DMatrix::from_diagonal(&nalgebra::dvector![4.0, 1.0]),
            EstimatorId::ClosedForm,
            1.0,
        )
        .unwrap();
        assert_eq!(
            studentize(&est, &[1.0, 2.0], &cov, Rate::RootN).unwrap(),
            vec![0.0, 0.0]
        );
        let z = studentize(&est, &[0.8, 2.0], &cov, Rate::RootN).unwrap();
        assert_relative_eq!(z[0], 10.0 * 0.2 / 2.0, epsilon = 1e-12);
        let zero = CovEstimate::new(DMatrix::zeros(2, 2), EstimatorId::ClosedForm, 1.0).unwrap();
        assert!(matches!(
            studentize(&est, &[1.0, 2.0], &zero, Rate::RootN),
            Err(Error::NonPositiveVariance { index: 0, .. })
        ));
    }

    #[test]
    fn jump_contrast_null() {
        let mu1sq = 2.0 / std::f64::consts::PI;
        let (raw, _) = jump_contrast(0.3, 0.3 * mu1sq, false).unwrap();
        let (lg, _) = jump_contrast(0.3, 0.3 * mu1sq, true).unwrap();
        assert!(raw.abs() < 1e-15 && lg.abs() < 1e-14);
    }
}
