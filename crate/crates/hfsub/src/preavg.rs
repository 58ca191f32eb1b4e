//! Pre-averaging of noisy prices and the pre-averaged bipower variation.
//!
//! Prices are indexed `Y[0..=n]` and returns `d[t] = Y[t+1] - Y[t]`. The
//! pre-averaged return at position `i` is `sum_{j=1}^{kn-1} w(j/kn) d[i+j-1]`
//! for `i = 0..=n-kn+1`, and the bipower statistic pairs positions `i` and
//! `i + kn` so that the two windows never overlap.

use std::collections::HashMap;
use std::fmt::Debug;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::series::{log_returns, PowerSpec, ReturnSeries, TickSeries};
use crate::variation::{BipowerFunctional, EstimateVector, EstimatorKind};

const QUAD_TOL: f64 = 1e-10;

/// A weight `w` on `[0, 1]` with `w(0) = w(1) = 0`, continuous and piecewise C^1.
pub trait WeightFunction: Send + Sync + Debug {
    /// Value at `x`; zero outside `[0, 1]`.
    fn value(&self, x: f64) -> f64;
    /// Derivative at `x`; zero outside `(0, 1)`.
    fn derivative(&self, x: f64) -> f64;
    /// Interior points where the derivative jumps.
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
    /// Cache key for the limit constants. Distinct weights need distinct names.
    fn name(&self) -> String;
}

/// `w(x) = min(x, 1 - x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinWeight;

impl WeightFunction for MinWeight {
    fn value(&self, x: f64) -> f64 {
        if (0.0..=1.0).contains(&x) {
            x.min(1.0 - x)
        } else {
            0.0
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        if x > 0.0 && x < 0.5 {
            1.0
        } else if (0.5..1.0).contains(&x) {
            -1.0
        } else {
            0.0
        }
    }

    fn kinks(&self) -> Vec<f64> {
        vec![0.5]
    }

    fn name(&self) -> String {
        "min".into()
    }
}

/// `min(x, 1 - x)` on `[0, 1]`.
pub fn weight_min_x(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::DomainError(format!(
            "weight argument {x} outside [0, 1]"
        )));
    }
    Ok(x.min(1.0 - x))
}

/// Asymptotic weight constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitConstants {
    pub psi1: f64,
    pub psi2: f64,
    pub phi11: f64,
    pub phi12: f64,
    pub phi22: f64,
}

fn phi_breaks(w: &dyn WeightFunction, s: f64) -> Vec<f64> {
    let mut b = vec![s, 1.0];
    for k in w.kinks() {
        if k > s && k < 1.0 {
            b.push(k);
        }
        if s + k < 1.0 {
            b.push(s + k);
        }
    }
    b
}

fn phi1(w: &dyn WeightFunction, s: f64) -> Result<f64> {
    integrate(
        &|u: f64| w.derivative(u) * w.derivative(u - s),
        &phi_breaks(w, s),
        1e-13,
    )
}

fn phi2(w: &dyn WeightFunction, s: f64) -> Result<f64> {
    integrate(
        &|u: f64| w.value(u) * w.value(u - s),
        &phi_breaks(w, s),
        1e-13,
    )
}

/// Computes the limit constants by nested adaptive quadrature.
pub fn compute_limit_constants(w: &dyn WeightFunction) -> Result<LimitConstants> {
    let mut pts = vec![0.0, 1.0];
    pts.extend(w.kinks());
    let mut outer = Vec::new();
    for &a in &pts {
        for &b in &pts {
            let d = a - b;
            if d >= 0.0 && d <= 1.0 {
                outer.push(d);
            }
        }
    }
    // Inner failures surface through the captured slot.
    let err: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
    let guard = |r: Result<f64>| match r {
        Ok(v) => v,
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let p11 = integrate(&|s: f64| guard(phi1(w, s)).powi(2), &outer, QUAD_TOL)?;
    let p12 = integrate(
        &|s: f64| guard(phi1(w, s)) * guard(phi2(w, s)),
        &outer,
        QUAD_TOL,
    )?;
    let p22 = integrate(&|s: f64| guard(phi2(w, s)).powi(2), &outer, QUAD_TOL)?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(LimitConstants {
        psi1: phi1(w, 0.0)?,
        psi2: phi2(w, 0.0)?,
        phi11: p11,
        phi12: p12,
        phi22: p22,
    })
}

fn cache() -> &'static Mutex<HashMap<String, LimitConstants>> {
    static CACHE: OnceLock<Mutex<HashMap<String, LimitConstants>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Limit constants for `w`, computed on first use and cached by name.
pub fn limit_constants(w: &dyn WeightFunction) -> Result<LimitConstants> {
    let key = w.name();
    if let Some(c) = cache().lock().unwrap().get(&key) {
        return Ok(*c);
    }
    let c = compute_limit_constants(w)?;
    cache().lock().unwrap().insert(key, c);
    Ok(c)
}

/// How `theta * sqrt(n)` is turned into an integer window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowRounding {
    Floor,
    #[default]
    Round,
}

/// A weight function together with its window length `kn`.
#[derive(Debug, Clone)]
pub struct WeightScheme {
    weight: Arc<dyn WeightFunction>,
    kn: usize,
    theta: f64,
    weights: Vec<f64>,
    psi1_n: f64,
    psi2_n: f64,
}

impl WeightScheme {
    /// Window `kn = max(2, [theta sqrt(n)])` for `n` returns.
    pub fn new(
        weight: Arc<dyn WeightFunction>,
        theta: f64,
        n: usize,
        rounding: WindowRounding,
    ) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::DomainError(format!(
                "theta must be positive, got {theta}"
            )));
        }
        let raw = theta * (n as f64).sqrt();
        let kn = match rounding {
            WindowRounding::Floor => raw.floor(),
            WindowRounding::Round => raw.round(),
        }
        .max(2.0) as usize;
        if kn > n {
            return Err(Error::WindowTooLarge { kn, n });
        }
        Self::build(weight, kn, theta)
    }

    /// The min weight with nearest-integer rounding.
    pub fn min_weight(theta: f64, n: usize) -> Result<Self> {
        Self::new(Arc::new(MinWeight), theta, n, WindowRounding::Round)
    }

    /// An explicit window length.
    pub fn with_kn(weight: Arc<dyn WeightFunction>, kn: usize, n: usize) -> Result<Self> {
        if kn < 2 {
            return Err(Error::DomainError(format!(
                "kn must be at least 2, got {kn}"
            )));
        }
        if kn > n {
            return Err(Error::WindowTooLarge { kn, n });
        }
        Self::build(weight, kn, kn as f64 / (n as f64).sqrt())
    }

    fn build(weight: Arc<dyn WeightFunction>, kn: usize, theta: f64) -> Result<Self> {
        if weight.value(0.0).abs() > 1e-12 || weight.value(1.0).abs() > 1e-12 {
            return Err(Error::DomainError("weight must vanish at 0 and 1".into()));
        }
        let k = kn as f64;
        let weights: Vec<f64> = (0..=kn).map(|j| weight.value(j as f64 / k)).collect();
        let psi1_n = k * weights
            .windows(2)
            .map(|w| (w[1] - w[0]).powi(2))
            .sum::<f64>();
        let psi2_n = weights.iter().map(|w| w * w).sum::<f64>() / k;
        if !(psi2_n > 0.0) {
            return Err(Error::DomainError(
                "weight has zero energy on the grid".into(),
            ));
        }
        Ok(Self {
            weight,
            kn,
            theta,
            weights,
            psi1_n,
            psi2_n,
        })
    }

    pub fn kn(&self) -> usize {
        self.kn
    }

    /// The requested `theta`.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `kn / sqrt(n)`, the value of `theta` the window actually realizes.
    pub fn theta_eff(&self, n: usize) -> f64 {
        self.kn as f64 / (n as f64).sqrt()
    }

    /// `w(j / kn)` for `j = 0..=kn`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn psi1_n(&self) -> f64 {
        self.psi1_n
    }

    pub fn psi2_n(&self) -> f64 {
        self.psi2_n
    }

    pub fn weight(&self) -> &dyn WeightFunction {
        self.weight.as_ref()
    }

    pub fn limits(&self) -> Result<LimitConstants> {
        limit_constants(self.weight.as_ref())
    }
}

/// Limit and finite-window constants of a scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConstants {
    pub limit: LimitConstants,
    pub psi1_n: f64,
    pub psi2_n: f64,
}

pub fn weight_constants(scheme: &WeightScheme) -> Result<WeightConstants> {
    Ok(WeightConstants {
        limit: scheme.limits()?,
        psi1_n: scheme.psi1_n,
        psi2_n: scheme.psi2_n,
    })
}

/// Pre-averaged returns with the window that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreAveragedSeries {
    pub values: Vec<f64>,
    pub kn: usize,
    pub theta: f64,
}

/// Pre-averaged returns from raw returns; length `n - kn + 2`.
pub fn preaverage_returns(d: &[f64], scheme: &WeightScheme) -> Result<Vec<f64>> {
    let (n, kn) = (d.len(), scheme.kn);
    if n < kn {
        return Err(Error::WindowTooLarge { kn, n });
    }
    let w = &scheme.weights[1..kn];
    Ok((0..n + 2 - kn)
        .map(|i| w.iter().zip(&d[i..i + kn - 1]).map(|(a, b)| a * b).sum())
        .collect())
}

/// Pre-averaged returns of a price path.
pub fn preaverage(prices: &TickSeries, scheme: &WeightScheme) -> Result<PreAveragedSeries> {
    let d = log_returns(prices)?;
    Ok(PreAveragedSeries {
        values: preaverage_returns(d.as_slice(), scheme)?,
        kn: scheme.kn,
        theta: scheme.theta,
    })
}

/// Same quantity written on price levels: `-sum_{j=0}^{kn-1} (w_{j+1} - w_j) Y[i+j]`.
pub fn preaverage_levels(prices: &TickSeries, scheme: &WeightScheme) -> Result<Vec<f64>> {
    let y = prices.log_prices();
    let kn = scheme.kn;
    let n = prices.n();
    if n < kn {
        return Err(Error::WindowTooLarge { kn, n });
    }
    let dw: Vec<f64> = scheme
        .weights
        .windows(2)
        .take(kn)
        .map(|w| w[1] - w[0])
        .collect();
    Ok((0..n + 2 - kn)
        .map(|i| {
            -dw.iter()
                .zip(&y[i..i + kn])
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect())
}

/// Mean of `f(c * ybar_i, c * ybar_{i+kn})` over all valid `i`.
pub(crate) fn paired_mean<F: BipowerFunctional + ?Sized>(
    ybar: &[f64],
    kn: usize,
    c: f64,
    f: &F,
) -> Vec<f64> {
    let m = f.dim();
    let count = ybar.len() - kn;
    let mut acc = vec![0.0; m];
    let mut buf = vec![0.0; m];
    for i in 0..count {
        f.eval(c * ybar[i], c * ybar[i + kn], &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    acc
}

/// Pre-averaged bipower variation `V*(f, g)` with scaling `n^{1/4}`.
pub fn preavg_bipower_with<F: BipowerFunctional + ?Sized>(
    prices: &TickSeries,
    f: &F,
    scheme: &WeightScheme,
) -> Result<Vec<f64>> {
    let n = prices.n();
    if n < 2 * scheme.kn {
        return Err(Error::WindowTooLarge { kn: scheme.kn, n });
    }
    let d = log_returns(prices)?;
    let ybar = preaverage_returns(d.as_slice(), scheme)?;
    Ok(paired_mean(&ybar, scheme.kn, (n as f64).powf(0.25), f))
}

pub fn preavg_bipower(
    prices: &TickSeries,
    spec: &PowerSpec,
    scheme: &WeightScheme,
) -> Result<EstimateVector> {
    Ok(EstimateVector {
        values: preavg_bipower_with(prices, spec, scheme)?,
        kind: EstimatorKind::PreaveragedBipower,
        spec: Some(spec.clone()),
        n: prices.n(),
        truncation: None,
        kn: Some(scheme.kn),
        theta: Some(scheme.theta),
    })
}

/// `-(1/(n-1)) sum d_i d_{i+1}`.
pub fn noise_variance_hat(returns: &ReturnSeries) -> Result<f64> {
    let d = returns.as_slice();
    if d.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: d.len(),
        });
    }
    Ok(-d.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (d.len() - 1) as f64)
}

/// Integrated variance from a given `V*(2,0)`; `theta` is taken as `kn / sqrt(n)`.
pub fn iv_hat_from(v20: f64, omega2: f64, scheme: &WeightScheme, n: usize) -> f64 {
    let omega2 = omega2.max(0.0);
    let tp = scheme.theta_eff(n) * scheme.psi2_n;
    v20 / tp - scheme.psi1_n * omega2 / tp
}

/// Integrated quarticity from a given `V*(4,0)` and integrated variance estimate.
pub fn iq_hat_from(v40: f64, iv: f64, omega2: f64, scheme: &WeightScheme, n: usize) -> f64 {
    let omega2 = omega2.max(0.0);
    let th = scheme.theta_eff(n);
    let (p1, p2) = (scheme.psi1_n, scheme.psi2_n);
    let tp2 = (th * p2).powi(2);
    v40 / 3.0 / tp2
        - 2.0 * p2 * p1 * omega2 * iv / tp2
        - (p1 * omega2).powi(2) / (th * th * p2).powi(2)
}

fn single(prices: &TickSeries, q: f64, scheme: &WeightScheme) -> Result<f64> {
    let spec = PowerSpec::pure(vec![q])?;
    Ok(preavg_bipower_with(prices, &spec, scheme)?[0])
}

/// Noise-corrected integrated variance. Negative `omega2` is treated as zero.
pub fn iv_hat(prices: &TickSeries, scheme: &WeightScheme, omega2: f64) -> Result<f64> {
    Ok(iv_hat_from(
        single(prices, 2.0, scheme)?,
        omega2,
        scheme,
        prices.n(),
    ))
}

/// Noise-corrected integrated quarticity. Negative `omega2` is treated as zero.
pub fn iq_hat(prices: &TickSeries, scheme: &WeightScheme, omega2: f64, iv: f64) -> Result<f64> {
    Ok(iq_hat_from(
        single(prices, 4.0, scheme)?,
        iv,
        omega2,
        scheme,
        prices.n(),
    ))
}

/// Asymptotic variance of `n^{1/4} V*(2,0)` for constant noise variance `omega2`,
/// given `int sigma^4` and `int sigma^2`.
pub fn sigma_star_20_closed_form(
    theta: f64,
    c: &LimitConstants,
    iq: f64,
    iv: f64,
    omega2: f64,
) -> f64 {
    4.0 * (theta.powi(3) * c.phi22 * iq
        + 2.0 * theta * c.phi12 * iv * omega2
        + c.phi11 * omega2 * omega2 / theta)
}
