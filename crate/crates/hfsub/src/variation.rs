//! Realized power and bipower variations, plain and truncated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{abs_pow, gaussian_abs_moment, PowerSpec, ReturnSeries};

/// A vector of one-argument functions applied to scaled returns.
pub trait PowerFunctional: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: f64, out: &mut [f64]);
}

/// A vector of functions of two adjacent scaled returns.
pub trait BipowerFunctional: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: f64, y: f64, out: &mut [f64]);
}

impl BipowerFunctional for PowerSpec {
    fn dim(&self) -> usize {
        PowerSpec::dim(self)
    }

    #[inline]
    fn eval(&self, x: f64, y: f64, out: &mut [f64]) {
        self.eval_pair(x, y, out)
    }
}

/// `|x|^{q_i}` for a spec with every `r_i = 0`.
#[derive(Debug, Clone)]
pub struct PurePowers<'a>(&'a PowerSpec);

impl<'a> PurePowers<'a> {
    pub fn new(spec: &'a PowerSpec) -> Result<Self> {
        if !spec.is_pure() {
            return Err(Error::NonPurePowers);
        }
        Ok(Self(spec))
    }
}

impl PowerFunctional for PurePowers<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[inline]
    fn eval(&self, x: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = abs_pow(x, self.0.q()[k]);
        }
    }
}

pub type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied componentwise functions.
pub struct FnComponents(pub Vec<ScalarFn>);

impl PowerFunctional for FnComponents {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, x: f64, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.0) {
            *o = f(x);
        }
    }
}

/// User-supplied pairs `(f_i, g_i)` evaluated as `f_i(x) g_i(y)`.
pub struct FnPairs(pub Vec<(ScalarFn, ScalarFn)>);

impl BipowerFunctional for FnPairs {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn eval(&self, x: f64, y: f64, out: &mut [f64]) {
        for (o, (f, g)) in out.iter_mut().zip(&self.0) {
            *o = f(x) * g(y);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Power,
    Bipower,
    TruncatedBipower,
    PreaveragedBipower,
}

/// Estimated components plus the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateVector {
    pub values: Vec<f64>,
    pub kind: EstimatorKind,
    pub spec: Option<PowerSpec>,
    /// Number of returns used.
    pub n: usize,
    pub truncation: Option<TruncationRule>,
    pub kn: Option<usize>,
    pub theta: Option<f64>,
}

impl EstimateVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Threshold `u_n = alpha * n^{-omega_check}` on raw returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationRule {
    pub alpha: f64,
    pub omega_check: f64,
}

impl TruncationRule {
    pub fn new(alpha: f64, omega_check: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidTruncation(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(omega_check > 0.0 && omega_check < 0.5) {
            return Err(Error::InvalidTruncation(format!(
                "omega_check must lie in (0, 1/2), got {omega_check}"
            )));
        }
        Ok(Self { alpha, omega_check })
    }

    /// A rule that never truncates.
    pub fn infinite() -> Self {
        Self {
            alpha: f64::INFINITY,
            omega_check: 0.25,
        }
    }

    pub fn threshold(&self, n: usize) -> f64 {
        self.alpha * (n as f64).powf(-self.omega_check)
    }

    /// Smallest admissible `omega_check` for jump activity `beta`.
    pub fn min_omega_check(spec: &PowerSpec, beta: f64) -> Result<f64> {
        let s = spec.max_power();
        if !(beta >= 0.0 && beta < s) {
            return Err(Error::DomainError(format!(
                "jump activity {beta} outside [0, {s})"
            )));
        }
        Ok((s - 1.0) / (2.0 * (s - beta)))
    }

    /// Whether this rule meets the lower bound on `omega_check` for `spec` and `beta`.
    pub fn admissible(&self, spec: &PowerSpec, beta: f64) -> Result<bool> {
        Ok(self.omega_check > Self::min_omega_check(spec, beta)?)
    }
}

/// Zeroes every return whose magnitude exceeds the threshold.
pub fn truncate_returns(returns: &ReturnSeries, rule: &TruncationRule) -> ReturnSeries {
    let u = rule.threshold(returns.n());
    let kept = returns
        .as_slice()
        .iter()
        .map(|&d| if d.abs() <= u { d } else { 0.0 })
        .collect();
    ReturnSeries::new(kept).expect("truncation keeps values finite")
}

/// `(1/n) sum_i f(sqrt(n) Delta_i)`.
pub fn power_variation_with<F: PowerFunctional + ?Sized>(
    returns: &ReturnSeries,
    f: &F,
) -> Vec<f64> {
    let n = returns.n();
    let s = (n as f64).sqrt();
    let m = f.dim();
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for &d in returns.as_slice() {
        f.eval(s * d, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// `(1/n) sum_{i=1}^{n-1} f(sqrt(n) Delta_i) g(sqrt(n) Delta_{i+1})`.
pub fn bipower_variation_with<F: BipowerFunctional + ?Sized>(
    returns: &ReturnSeries,
    f: &F,
) -> Vec<f64> {
    let n = returns.n();
    let s = (n as f64).sqrt();
    let d = returns.as_slice();
    let m = f.dim();
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for w in d.windows(2) {
        f.eval(s * w[0], s * w[1], &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

pub fn power_variation(returns: &ReturnSeries, spec: &PowerSpec) -> Result<EstimateVector> {
    let f = PurePowers::new(spec)?;
    Ok(EstimateVector {
        values: power_variation_with(returns, &f),
        kind: EstimatorKind::Power,
        spec: Some(spec.clone()),
        n: returns.n(),
        truncation: None,
        kn: None,
        theta: None,
    })
}

pub fn bipower_variation(returns: &ReturnSeries, spec: &PowerSpec) -> Result<EstimateVector> {
    if returns.n() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: returns.n(),
        });
    }
    Ok(EstimateVector {
        values: bipower_variation_with(returns, spec),
        kind: EstimatorKind::Bipower,
        spec: Some(spec.clone()),
        n: returns.n(),
        truncation: None,
        kn: None,
        theta: None,
    })
}

pub fn truncated_bipower_variation(
    returns: &ReturnSeries,
    spec: &PowerSpec,
    rule: &TruncationRule,
) -> Result<EstimateVector> {
    let t = truncate_returns(returns, rule);
    let mut est = bipower_variation(&t, spec)?;
    est.kind = EstimatorKind::TruncatedBipower;
    est.truncation = Some(*rule);
    Ok(est)
}

/// Riemann approximation of `int_0^1 sigma_s^p ds` from spot variances on a grid.
pub fn integrated_power(spot_var: &[f64], p: f64) -> Result<f64> {
    if spot_var.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(spot_var
        .iter()
        .map(|v| v.max(0.0).powf(0.5 * p))
        .sum::<f64>()
        / spot_var.len() as f64)
}

/// Probability limit `mu_q mu_r int |sigma|^{q+r}` of each bipower component.
pub fn bipower_limit(spec: &PowerSpec, spot_var: &[f64]) -> Result<Vec<f64>> {
    (0..spec.dim())
        .map(|i| {
            let (q, r) = spec.pair(i);
            Ok(gaussian_abs_moment(q)?
                * gaussian_abs_moment(r)?
                * integrated_power(spot_var, q + r)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rs(v: &[f64]) -> ReturnSeries {
        ReturnSeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_bipower() {
        let d = rs(&[0.1, -0.2, 0.3]);
        let spec = PowerSpec::from_pairs(&[(1.0, 1.0), (2.0, 0.0)]).unwrap();
        let v = bipower_variation(&d, &spec).unwrap().values;
        // scaled returns: sqrt(3) * d
        let oracle11 = 3.0 * (0.1 * 0.2 + 0.2 * 0.3) / 3.0;
        let oracle20 = 3.0 * (0.01 + 0.04) / 3.0;
        assert_relative_eq!(v[0], oracle11, epsilon = 1e-14);
        assert_relative_eq!(v[1], oracle20, epsilon = 1e-14);
    }

    #[test]
    fn power_requires_pure() {
        let d = rs(&[0.1, 0.2]);
        let spec = PowerSpec::from_pairs(&[(1.0, 1.0)]).unwrap();
        assert!(matches!(
            power_variation(&d, &spec),
            Err(Error::NonPurePowers)
        ));
    }

    #[test]
    fn closures_match_spec() {
        let d = rs(&[0.3, -0.1, 0.25, 0.05]);
        let spec = PowerSpec::from_pairs(&[(1.5, 0.5)]).unwrap();
        let f = FnPairs(vec![(
            Box::new(|x: f64| x.abs().powf(1.5)),
            Box::new(|y: f64| y.abs().sqrt()),
        )]);
        let a = bipower_variation_with(&d, &spec);
        let b = bipower_variation_with(&d, &f);
        assert_relative_eq!(a[0], b[0], epsilon = 1e-14);
    }

    #[test]
    fn truncation_rule_validation() {
        assert!(TruncationRule::new(1.0, 0.5).is_err());
        assert!(TruncationRule::new(1.0, 0.0).is_err());
        assert!(TruncationRule::new(-1.0, 0.2).is_err());
        let spec = PowerSpec::from_pairs(&[(2.0, 0.0)]).unwrap();
        // s' = 2, beta = 0: bound (2 - 1) / (2 * 2) = 1/4.
        let lo = TruncationRule::min_omega_check(&spec, 0.0).unwrap();
        assert_relative_eq!(lo, 0.25);
        assert!(TruncationRule::new(1.0, 0.3)
            .unwrap()
            .admissible(&spec, 0.0)
            .unwrap());
        assert!(!TruncationRule::new(1.0, 0.2)
            .unwrap()
            .admissible(&spec, 0.0)
            .unwrap());
        assert!(TruncationRule::min_omega_check(&spec, 2.0).is_err());
    }

    #[test]
    fn truncation_zeroes_large_returns() {
        let d = rs(&[0.1, 5.0, -0.2, -7.0]);
        let rule = TruncationRule::new(1.0, 0.25).unwrap();
        let t = truncate_returns(&d, &rule);
        assert_eq!(t.as_slice(), &[0.1, 0.0, -0.2, 0.0]);
        let inf = truncate_returns(&d, &TruncationRule::infinite());
        assert_eq!(inf.as_slice(), d.as_slice());
    }
}
