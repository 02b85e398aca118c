//! Stochastic injection models, sample paths, and the discretized rate functional.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Random stream for one replicate: a fixed seed with the replicate number
/// as the ChaCha stream id, so replicate results do not depend on scheduling.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Drift and volatility of a diagonal diffusion `dX_i = b_i(X_i) dt + √ε l_i(X_i) dW_i`.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn drift(&self, coord: usize, x: f64) -> f64;
    fn volatility(&self, coord: usize, x: f64) -> f64;
    fn mean(&self) -> &[f64];
    fn noise(&self) -> f64;
    fn horizon(&self) -> f64;
}

/// Diagonal Ornstein-Uhlenbeck injections `dX = D(μ − X)dt + √ε L dW`, started at `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuModel {
    gamma: Vec<f64>,
    vol: Vec<f64>,
    mean: Vec<f64>,
    noise: f64,
    horizon: f64,
}

impl OuModel {
    /// `noise` may be zero, which gives deterministic paths.
    pub fn new(
        gamma: Vec<f64>,
        vol: Vec<f64>,
        mean: Vec<f64>,
        noise: f64,
        horizon: f64,
    ) -> Result<Self> {
        let m = gamma.len();
        if m == 0 || vol.len() != m || mean.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "gamma, vol and mean must share a non-zero length, got {}, {}, {}",
                m,
                vol.len(),
                mean.len()
            )));
        }
        if let Some(g) = gamma.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "mean-reversion rate must be positive, got {g}"
            )));
        }
        if let Some(&l) = vol.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::NonPositiveVolatility {
                x: f64::NAN,
                value: l,
            });
        }
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("mean must be finite".into()));
        }
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise scale must be non-negative, got {noise}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            gamma,
            vol,
            mean,
            noise,
            horizon,
        })
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn vol(&self) -> &[f64] {
        &self.vol
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn with_noise(&self, noise: f64) -> Result<Self> {
        Self::new(
            self.gamma.clone(),
            self.vol.clone(),
            self.mean.clone(),
            noise,
            self.horizon,
        )
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(
            self.gamma.clone(),
            self.vol.clone(),
            self.mean.clone(),
            self.noise,
            horizon,
        )
    }

    pub fn with_mean(&self, mean: Vec<f64>) -> Result<Self> {
        Self::new(
            self.gamma.clone(),
            self.vol.clone(),
            mean,
            self.noise,
            self.horizon,
        )
    }

    /// The common mean-reversion rate, if all coordinates share it.
    pub fn uniform_gamma(&self) -> Option<f64> {
        uniform_value(&self.gamma)
    }

    /// Variance of `X(t + Δ)` given `X(t)`.
    pub fn transition_variance(&self, coord: usize, dt: f64) -> f64 {
        let g = self.gamma[coord];
        let l = self.vol[coord];
        self.noise * l * l * (-(-2.0 * g * dt).exp_m1()) / (2.0 * g)
    }

    pub(crate) fn stepper(&self, dt: f64) -> OuStepper {
        OuStepper {
            mean: self.mean.clone(),
            decay: self.gamma.iter().map(|g| (-g * dt).exp()).collect(),
            std: (0..self.dim())
                .map(|i| self.transition_variance(i, dt).sqrt())
                .collect(),
        }
    }
}

impl Dynamics for OuModel {
    fn dim(&self) -> usize {
        self.gamma.len()
    }
    fn drift(&self, coord: usize, x: f64) -> f64 {
        self.gamma[coord] * (self.mean[coord] - x)
    }
    fn volatility(&self, coord: usize, _x: f64) -> f64 {
        self.vol[coord]
    }
    fn mean(&self) -> &[f64] {
        &self.mean
    }
    fn noise(&self) -> f64 {
        self.noise
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
}

pub(crate) fn uniform_value(values: &[f64]) -> Option<f64> {
    let first = *values.first()?;
    values
        .iter()
        .all(|&v| (v - first).abs() <= 1e-12 * first.abs().max(1.0))
        .then_some(first)
}

/// Exact OU transition for all coordinates at a fixed step size.
#[derive(Debug, Clone)]
pub(crate) struct OuStepper {
    mean: Vec<f64>,
    decay: Vec<f64>,
    std: Vec<f64>,
}

impl OuStepper {
    pub(crate) fn step<R: rand::Rng + ?Sized>(&self, state: &mut [f64], rng: &mut R) {
        for (i, x) in state.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *x = self.mean[i] + (*x - self.mean[i]) * self.decay[i] + self.std[i] * z;
        }
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// General diagonal diffusion with user-supplied drift and volatility functions.
#[derive(Clone)]
pub struct DiffusionModel {
    drift: Vec<ScalarFn>,
    vol: Vec<ScalarFn>,
    mean: Vec<f64>,
    noise: f64,
    horizon: f64,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("dim", &self.mean.len())
            .field("mean", &self.mean)
            .field("noise", &self.noise)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl DiffusionModel {
    /// The drift must vanish at the mean, which is also the initial condition.
    pub fn new(
        drift: Vec<ScalarFn>,
        vol: Vec<ScalarFn>,
        mean: Vec<f64>,
        noise: f64,
        horizon: f64,
    ) -> Result<Self> {
        if drift.len() != mean.len() || vol.len() != mean.len() || mean.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} drifts, {} volatilities, {} means",
                drift.len(),
                vol.len(),
                mean.len()
            )));
        }
        for (i, (b, &mu)) in drift.iter().zip(&mean).enumerate() {
            let at_mean = b(mu);
            if at_mean.abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "drift of coordinate {i} is {at_mean:e} at the mean, expected 0"
                )));
            }
        }
        for (l, &mu) in vol.iter().zip(&mean) {
            let value = l(mu);
            if !(value > 0.0) {
                return Err(Error::NonPositiveVolatility { x: mu, value });
            }
        }
        if !(noise.is_finite() && noise >= 0.0) || !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need noise >= 0 and horizon > 0, got {noise} and {horizon}"
            )));
        }
        Ok(Self {
            drift,
            vol,
            mean,
            noise,
            horizon,
        })
    }

    pub fn from_ou(ou: &OuModel) -> Self {
        let drift = (0..ou.dim())
            .map(|i| {
                let (g, mu) = (ou.gamma[i], ou.mean[i]);
                Arc::new(move |x: f64| g * (mu - x)) as ScalarFn
            })
            .collect();
        let vol = ou
            .vol
            .iter()
            .map(|&l| Arc::new(move |_x: f64| l) as ScalarFn)
            .collect();
        Self {
            drift,
            vol,
            mean: ou.mean.clone(),
            noise: ou.noise,
            horizon: ou.horizon,
        }
    }
}

impl Dynamics for DiffusionModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }
    fn drift(&self, coord: usize, x: f64) -> f64 {
        (self.drift[coord])(x)
    }
    fn volatility(&self, coord: usize, x: f64) -> f64 {
        (self.vol[coord])(x)
    }
    fn mean(&self) -> &[f64] {
        &self.mean
    }
    fn noise(&self) -> f64 {
        self.noise
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Vector-valued path on a uniform time grid `0 = t_0 < … < t_n = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl SamplePath {
    pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
        (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect()
    }

    /// Sample a function of time on a uniform grid.
    pub fn from_fn(horizon: f64, steps: usize, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let times = Self::uniform_grid(horizon, steps);
        let values = times.iter().map(|&t| f(t)).collect();
        Self { times, values }
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step_size(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Values of a single coordinate over time.
    pub fn coordinate(&self, coord: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[coord]).collect()
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "step count must be at least 1".into(),
        ));
    }
    Ok(())
}

/// Simulate an OU path with exact Gaussian transitions.
pub fn simulate_ou(model: &OuModel, steps: usize, seed: u64) -> Result<SamplePath> {
    simulate_ou_replicate(model, steps, seed, 0)
}

pub fn simulate_ou_replicate(
    model: &OuModel,
    steps: usize,
    seed: u64,
    replicate: u64,
) -> Result<SamplePath> {
    check_steps(steps)?;
    let dt = model.horizon / steps as f64;
    let stepper = model.stepper(dt);
    let mut rng = replicate_rng(seed, replicate);
    let mut state = model.mean.clone();
    let times = SamplePath::uniform_grid(model.horizon, steps);
    let mut values = Vec::with_capacity(steps + 1);
    values.push(DVector::from_column_slice(&state));
    for _ in 0..steps {
        stepper.step(&mut state, &mut rng);
        values.push(DVector::from_column_slice(&state));
    }
    Ok(SamplePath { times, values })
}

/// Simulate a general diffusion with the Euler-Maruyama scheme.
pub fn simulate_diffusion(model: &DiffusionModel, steps: usize, seed: u64) -> Result<SamplePath> {
    check_steps(steps)?;
    let dt = model.horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let scale = model.noise.sqrt();
    let mut rng = replicate_rng(seed, 0);
    let mut state = model.mean.clone();
    let times = SamplePath::uniform_grid(model.horizon, steps);
    let mut values = Vec::with_capacity(steps + 1);
    values.push(DVector::from_column_slice(&state));
    for _ in 0..steps {
        for (i, x) in state.iter_mut().enumerate() {
            let l = model.volatility(i, *x);
            if !(l > 0.0) {
                return Err(Error::NonPositiveVolatility { x: *x, value: l });
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += model.drift(i, *x) * dt + scale * l * sqrt_dt * z;
        }
        values.push(DVector::from_column_slice(&state));
    }
    Ok(SamplePath { times, values })
}

/// Discretized rate functional `½ Σ_i ∫ ((g_i' − b_i(g_i)) / l_i(g_i))² dt`.
///
/// On each interval the derivative is the forward difference and the
/// integrand is averaged over the two endpoints (trapezoid rule).
pub fn rate_functional<D: Dynamics + ?Sized>(path: &SamplePath, model: &D) -> f64 {
    let mut total = 0.0;
    for k in 0..path.steps() {
        let dt = path.times[k + 1] - path.times[k];
        let (left, right) = (&path.values[k], &path.values[k + 1]);
        for i in 0..model.dim() {
            let slope = (right[i] - left[i]) / dt;
            let at = |x: f64| {
                let r = (slope - model.drift(i, x)) / model.volatility(i, x);
                r * r
            };
            total += 0.25 * dt * (at(left[i]) + at(right[i]));
        }
    }
    total
}
