//! Price paths, returns, power specifications and Gaussian absolute moments.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Log-prices observed on an equidistant grid over the unit interval.
///
/// `n + 1` prices give `n` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSeries {
    log_prices: Vec<f64>,
}

impl TickSeries {
    pub fn from_log_prices(log_prices: Vec<f64>) -> Result<Self> {
        if log_prices.len() < 2 {
            return Err(Error::SeriesTooShort {
                needed: 2,
                got: log_prices.len(),
            });
        }
        if let Some(i) = log_prices.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { log_prices })
    }

    /// Takes natural logs of strictly positive price levels.
    pub fn from_levels(prices: &[f64]) -> Result<Self> {
        if let Some(i) = prices.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::NonPositivePrice(i));
        }
        Self::from_log_prices(prices.iter().map(|p| p.ln()).collect())
    }

    pub fn log_prices(&self) -> &[f64] {
        &self.log_prices
    }

    pub fn into_log_prices(self) -> Vec<f64> {
        self.log_prices
    }

    /// Number of returns.
    pub fn n(&self) -> usize {
        self.log_prices.len() - 1
    }
}

/// Log-returns of a [`TickSeries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::EmptySeries);
        }
        if let Some(i) = returns.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { returns })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.returns
    }

    pub fn n(&self) -> usize {
        self.returns.len()
    }
}

pub fn log_returns(prices: &TickSeries) -> Result<ReturnSeries> {
    let x = prices.log_prices();
    if x.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: x.len(),
        });
    }
    ReturnSeries::new(x.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Returns multiplied by `sqrt(n)`; `n` must equal the number of returns.
pub fn scale_returns(returns: &ReturnSeries, n: usize) -> Result<ReturnSeries> {
    if n != returns.n() {
        return Err(Error::LengthMismatch {
            left: n,
            right: returns.n(),
        });
    }
    let s = (n as f64).sqrt();
    ReturnSeries::new(returns.as_slice().iter().map(|d| s * d).collect())
}

/// `E|Z|^q` for a standard normal `Z`.
pub fn gaussian_abs_moment(q: f64) -> Result<f64> {
    if !(q >= 0.0) || !q.is_finite() {
        return Err(Error::NegativePower(q));
    }
    if q == 0.0 {
        return Ok(1.0);
    }
    let ln = 0.5 * q * std::f64::consts::LN_2 + ln_gamma(0.5 * (q + 1.0))
        - 0.5 * std::f64::consts::PI.ln();
    Ok(ln.exp())
}

/// `|x|^p` with fast paths for the common small integer powers.
#[inline]
pub fn abs_pow(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p == 1.0 {
        x.abs()
    } else if p == 2.0 {
        x * x
    } else if p == 4.0 {
        let s = x * x;
        s * s
    } else if p == 3.0 {
        let a = x.abs();
        a * a * a
    } else {
        x.abs().powf(p)
    }
}

/// Pairs of powers `(q_i, r_i)`, one per estimated component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    q: Vec<f64>,
    r: Vec<f64>,
}

impl PowerSpec {
    pub fn new(q: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if q.len() != r.len() {
            return Err(Error::LengthMismatch {
                left: q.len(),
                right: r.len(),
            });
        }
        if q.is_empty() {
            return Err(Error::InvalidConfig("power spec has no components".into()));
        }
        for &v in q.iter().chain(r.iter()) {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativePower(v));
            }
        }
        Ok(Self { q, r })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    /// Pure powers `|x|^{q_i}` with `r = 0`.
    pub fn pure(q: Vec<f64>) -> Result<Self> {
        let r = vec![0.0; q.len()];
        Self::new(q, r)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn pair(&self, i: usize) -> (f64, f64) {
        (self.q[i], self.r[i])
    }

    /// True when every power is an even non-negative integer.
    pub fn is_even_integer(&self) -> bool {
        self.q
            .iter()
            .chain(self.r.iter())
            .all(|&v| v.fract() == 0.0 && (v as u64) % 2 == 0)
    }

    pub fn is_pure(&self) -> bool {
        self.r.iter().all(|&r| r == 0.0)
    }

    /// `1 ∨ max_i max(q_i, r_i)`.
    pub fn max_power(&self) -> f64 {
        self.q
            .iter()
            .chain(self.r.iter())
            .fold(1.0, |m, &v| m.max(v))
    }

    /// Evaluates `|x|^{q_i} |y|^{r_i}` into `out`.
    #[inline]
    pub fn eval_pair(&self, x: f64, y: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = abs_pow(x, self.q[k]) * abs_pow(y, self.r[k]);
        }
    }
}
