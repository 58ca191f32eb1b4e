//! Seeded simulation of Heston prices, microstructure noise and jumps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TickSeries;

pub type SimRng = ChaCha8Rng;

/// Deterministic generator for `(seed, stream_id)`; distinct ids give independent streams.
pub fn rng_stream(seed: u64, stream_id: u64) -> SimRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream_id);
    r
}

/// Square-root stochastic volatility model.
///
/// Parameters are per unit of model time; the simulated grid spans `horizon`
/// model-time units, mapped onto the unit interval. With annual parameters
/// and `horizon = 1/250` the unit interval is one trading day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonConfig {
    pub kappa: f64,
    pub long_run_var: f64,
    pub xi: f64,
    pub rho: f64,
    pub n: usize,
    pub horizon: f64,
    /// Initial variance; drawn from the stationary law when `None`.
    pub v0: Option<f64>,
    pub seed: u64,
}

impl HestonConfig {
    /// `kappa = 5`, `sigma^2 = 0.04`, `xi = 0.5`, `rho = -0.5` over one trading day.
    pub fn daily(n: usize, seed: u64) -> Self {
        Self {
            kappa: 5.0,
            long_run_var: 0.04,
            xi: 0.5,
            rho: -0.5,
            n,
            horizon: 1.0 / 250.0,
            v0: None,
            seed,
        }
    }

    /// Constant volatility `sigma` on the unit interval.
    pub fn constant(sigma: f64, n: usize, seed: u64) -> Self {
        Self {
            kappa: 1.0,
            long_run_var: sigma * sigma,
            xi: 0.0,
            rho: 0.0,
            n,
            horizon: 1.0,
            v0: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if !(self.long_run_var > 0.0) {
            return bad("long-run variance must be positive");
        }
        if !(self.xi >= 0.0) {
            return bad("xi must be non-negative");
        }
        if !(self.rho.abs() <= 1.0) {
            return bad("rho must lie in [-1, 1]");
        }
        if self.n < 1 {
            return bad("n must be at least 1");
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be positive");
        }
        if let Some(v) = self.v0 {
            if !(v >= 0.0) {
                return bad("v0 must be non-negative");
            }
        }
        Ok(())
    }

    /// `2 kappa sigma^2 / xi^2`; the variance stays positive when this is at least 1.
    pub fn feller_ratio(&self) -> f64 {
        2.0 * self.kappa * self.long_run_var / (self.xi * self.xi)
    }
}

/// A simulated efficient price with its volatility path.
#[derive(Debug, Clone, PartialEq)]
pub struct HestonPath {
    pub prices: TickSeries,
    /// Spot variance at each grid point on the unit-interval scale.
    pub spot_var: Vec<f64>,
    /// Riemann sum of the spot variance.
    pub iv: f64,
    /// Riemann sum of the squared spot variance.
    pub iq: f64,
    /// Steps at which the Euler variance went negative and was floored.
    pub truncation_events: usize,
}

/// Stationary Gamma draw for the initial variance.
pub fn stationary_variance<R: Rng + ?Sized>(cfg: &HestonConfig, rng: &mut R) -> Result<f64> {
    if cfg.xi == 0.0 {
        return Ok(cfg.long_run_var);
    }
    let shape = cfg.feller_ratio();
    let scale = cfg.xi * cfg.xi / (2.0 * cfg.kappa);
    let g = Gamma::new(shape, scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(g.sample(rng))
}

pub fn simulate_heston(cfg: &HestonConfig) -> Result<HestonPath> {
    simulate_heston_with(cfg, &mut rng_stream(cfg.seed, 0))
}

/// Euler scheme with full truncation of the variance.
pub fn simulate_heston_with<R: Rng + ?Sized>(
    cfg: &HestonConfig,
    rng: &mut R,
) -> Result<HestonPath> {
    cfg.validate()?;
    let n = cfg.n;
    let h = cfg.horizon / n as f64;
    let sq = h.sqrt();
    let rho_c = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut v = match cfg.v0 {
        Some(v) => v,
        None => stationary_variance(cfg, rng)?,
    };
    let mut x = 0.0;
    let mut prices = Vec::with_capacity(n + 1);
    let mut spot_var = Vec::with_capacity(n + 1);
    let mut events = 0;
    prices.push(x);
    spot_var.push(cfg.horizon * v.max(0.0));
    for _ in 0..n {
        let vp = v.max(0.0);
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let s = vp.sqrt() * sq;
        x += s * z1;
        v += cfg.kappa * (cfg.long_run_var - vp) * h + cfg.xi * s * (cfg.rho * z1 + rho_c * z2);
        if v < 0.0 {
            events += 1;
        }
        prices.push(x);
        spot_var.push(cfg.horizon * v.max(0.0));
    }
    let inv = 1.0 / n as f64;
    let iv = spot_var[..n].iter().sum::<f64>() * inv;
    let iq = spot_var[..n].iter().map(|s| s * s).sum::<f64>() * inv;
    Ok(HestonPath {
        prices: TickSeries::from_log_prices(prices)?,
        spot_var,
        iv,
        iq,
        truncation_events: events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Iid,
    Ma1,
    HeteroMa1,
}

/// Additive observation noise.
///
/// `Iid` and `Ma1` have variance `omega2`. `HeteroMa1` has standard deviation
/// `gamma * sigma_t / sqrt(n)` at grid point `t`. Both MA(1) kinds are driven by
/// unit-variance `u_i = u'_i + zeta u'_{i-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub omega2: f64,
    pub zeta: f64,
    pub gamma: f64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            omega2: 0.0,
            zeta: 0.0,
            gamma: 0.0,
        }
    }

    pub fn iid(omega2: f64) -> Self {
        Self {
            kind: NoiseKind::Iid,
            omega2,
            ..Self::none()
        }
    }

    pub fn ma1(omega2: f64, zeta: f64) -> Self {
        Self {
            kind: NoiseKind::Ma1,
            omega2,
            zeta,
            ..Self::none()
        }
    }

    pub fn hetero_ma1(gamma: f64, zeta: f64) -> Self {
        Self {
            kind: NoiseKind::HeteroMa1,
            gamma,
            zeta,
            ..Self::none()
        }
    }

    /// `gamma = 0.5`, `zeta = -0.4`.
    pub fn general() -> Self {
        Self::hetero_ma1(0.5, -0.4)
    }

    /// Ratio of the long-run to the marginal noise variance.
    pub fn long_run_factor(&self) -> f64 {
        match self.kind {
            NoiseKind::Ma1 | NoiseKind::HeteroMa1 => {
                1.0 + 2.0 * self.zeta / (1.0 + self.zeta * self.zeta)
            }
            _ => 1.0,
        }
    }

    /// Noise variance at grid point `t`, given the spot variance path when needed.
    pub fn variance_at(&self, n: usize, spot_var: Option<&[f64]>, t: usize) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::Iid | NoiseKind::Ma1 => self.omega2,
            NoiseKind::HeteroMa1 => {
                self.gamma * self.gamma * spot_var.map_or(0.0, |s| s[t]) / n as f64
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.omega2 >= 0.0) || !(self.gamma >= 0.0) || !self.zeta.is_finite() {
            return Err(Error::InvalidConfig(
                "noise variance and gamma must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn is_silent(&self) -> bool {
        match self.kind {
            NoiseKind::None => true,
            NoiseKind::Iid | NoiseKind::Ma1 => self.omega2 == 0.0,
            NoiseKind::HeteroMa1 => self.gamma == 0.0,
        }
    }
}

/// Adds noise to a price path. `spot_var` is required for heteroskedastic noise
/// and must have one entry per price.
pub fn add_noise<R: Rng + ?Sized>(
    x: &TickSeries,
    spot_var: Option<&[f64]>,
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<TickSeries> {
    cfg.validate()?;
    if cfg.is_silent() {
        return Ok(x.clone());
    }
    let y = x.log_prices();
    let n = x.n();
    if cfg.kind == NoiseKind::HeteroMa1 {
        let s = spot_var.ok_or(Error::MissingSigmaPath)?;
        if s.len() != y.len() {
            return Err(Error::LengthMismatch {
                left: y.len(),
                right: s.len(),
            });
        }
    }
    let out: Vec<f64> = match cfg.kind {
        NoiseKind::None => unreachable!(),
        NoiseKind::Iid => {
            let sd = cfg.omega2.sqrt();
            y.iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(rng);
                    p + sd * z
                })
                .collect()
        }
        NoiseKind::Ma1 | NoiseKind::HeteroMa1 => {
            let inn = (1.0 / (1.0 + cfg.zeta * cfg.zeta)).sqrt();
            let z0: f64 = StandardNormal.sample(rng);
            let mut prev = inn * z0;
            y.iter()
                .enumerate()
                .map(|(t, p)| {
                    let z: f64 = StandardNormal.sample(rng);
                    let cur = inn * z;
                    let u = cur + cfg.zeta * prev;
                    prev = cur;
                    p + cfg.variance_at(n, spot_var, t).sqrt() * u
                })
                .collect()
        }
    };
    TickSeries::from_log_prices(out)
}

/// Compound Poisson jumps with centred Gaussian sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpConfig {
    /// Expected number of jumps on the unit interval.
    pub intensity: f64,
    pub size_variance: f64,
}

/// A jump at `time` changing the log-price by `size` from grid index `index` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub index: usize,
    pub size: f64,
}

fn apply_jump(y: &mut [f64], time: f64, size: f64) -> JumpEvent {
    let n = y.len() - 1;
    let index = ((time * n as f64).ceil() as usize).clamp(1, n);
    for p in &mut y[index..] {
        *p += size;
    }
    JumpEvent { time, index, size }
}

pub fn add_jumps<R: Rng + ?Sized>(
    x: &TickSeries,
    cfg: &JumpConfig,
    rng: &mut R,
) -> Result<(TickSeries, Vec<JumpEvent>)> {
    if !(cfg.intensity >= 0.0) || !(cfg.size_variance >= 0.0) {
        return Err(Error::InvalidConfig(
            "jump intensity and size variance must be non-negative".into(),
        ));
    }
    if cfg.intensity == 0.0 {
        return Ok((x.clone(), Vec::new()));
    }
    let count = Poisson::new(cfg.intensity)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .sample(rng) as usize;
    let sd = cfg.size_variance.sqrt();
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>()).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut y = x.log_prices().to_vec();
    let log = times
        .into_iter()
        .map(|t| {
            let z: f64 = StandardNormal.sample(rng);
            apply_jump(&mut y, t, sd * z)
        })
        .collect();
    Ok((TickSeries::from_log_prices(y)?, log))
}

/// Adds a single jump of `size` at `time`.
pub fn force_jump(x: &TickSeries, time: f64, size: f64) -> Result<(TickSeries, JumpEvent)> {
    let mut y = x.log_prices().to_vec();
    let ev = apply_jump(&mut y, time, size);
    Ok((TickSeries::from_log_prices(y)?, ev))
}
