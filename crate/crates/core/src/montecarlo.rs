//! Monte Carlo estimates of current and temperature overload probabilities.
//!
//! Every replicate draws from its own random stream (seed plus replicate
//! number), and replicates are reduced through integer hit counts, so results
//! are identical for any thread count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::injections::replicate_rng;
use crate::rates::PsiContext;
use crate::thermal::ThermalStep;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McKind {
    Current,
    Temperature,
}

impl fmt::Display for McKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            McKind::Current => "current",
            McKind::Temperature => "temperature",
        })
    }
}

impl FromStr for McKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(McKind::Current),
            "temperature" => Ok(McKind::Temperature),
            other => Err(Error::InvalidParameter(format!(
                "unknown overload kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub kind: McKind,
    pub replicates: usize,
    pub steps: usize,
    pub seed: u64,
    /// Overload level for `|Y|` or `Θ`; 1 is the physical limit.
    pub level: f64,
    pub epsilons: Vec<f64>,
    /// Worker threads; `None` uses the ambient rayon pool.
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            kind: McKind::Current,
            replicates: 10_000,
            steps: 1000,
            seed: 0,
            level: 1.0,
            epsilons: Vec::new(),
            threads: None,
        }
    }
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.steps == 0 {
            return Err(Error::InvalidParameter(
                "replicates and steps must be at least 1".into(),
            ));
        }
        if !(self.level > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "overload level must be positive, got {}",
                self.level
            )));
        }
        Ok(())
    }

    fn run<T: Send>(&self, job: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            None => Ok(job()),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(|pool| pool.install(job))
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}"))),
        }
    }
}

/// Hit count with a Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub epsilon: f64,
    pub hits: u64,
    pub replicates: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl McEstimate {
    pub fn new(epsilon: f64, hits: u64, replicates: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(hits, replicates);
        Self {
            epsilon,
            hits,
            replicates,
            p_hat: hits as f64 / replicates as f64,
            ci_low,
            ci_high,
        }
    }

    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(hits: u64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if hits as f64 == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

/// Peak `max_ℓ |Y_ℓ|` and peak `max_ℓ Θ_ℓ` along one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPeaks {
    pub current: f64,
    pub temperature: f64,
}

struct Simulator<'a> {
    ctx: &'a PsiContext,
    stepper: crate::injections::OuStepper,
    thermal: Vec<ThermalStep>,
    stochastic: nalgebra::DMatrix<f64>,
    steps: usize,
}

impl<'a> Simulator<'a> {
    fn new(ctx: &'a PsiContext, steps: usize) -> Result<Self> {
        let dt = ctx.ou().horizon() / steps as f64;
        let thermal = ctx
            .flow()
            .network()
            .lines()
            .iter()
            .map(|l| ThermalStep::new(l.tau, dt))
            .collect::<Result<_>>()?;
        Ok(Self {
            ctx,
            stepper: ctx.ou().stepper(dt),
            thermal,
            stochastic: ctx.flow().stochastic_block(),
            steps,
        })
    }

    fn peaks(&self, seed: u64, replicate: u64) -> PathPeaks {
        let ctx = self.ctx;
        let c = &self.stochastic;
        let y0 = &ctx.operating_point().y;
        let lines = c.nrows();
        let mut rng = replicate_rng(seed, replicate);
        let mut x = ctx.ou().mean().to_vec();
        let mut load: Vec<f64> = ctx.operating_point().nu.iter().map(|v| v * v).collect();
        let mut theta = load.clone();
        let mut peak_current = load.iter().cloned().fold(0.0, f64::max);
        let mut peak_theta = peak_current;
        let mut next_load = vec![0.0; lines];
        for _ in 0..self.steps {
            self.stepper.step(&mut x, &mut rng);
            for l in 0..lines {
                let mut y = y0[l];
                for (i, xi) in x.iter().enumerate() {
                    y += c[(l, i)] * xi;
                }
                next_load[l] = y * y;
                peak_current = peak_current.max(next_load[l]);
                theta[l] = self.thermal[l].advance(theta[l], load[l], next_load[l]);
                peak_theta = peak_theta.max(theta[l]);
            }
            std::mem::swap(&mut load, &mut next_load);
        }
        PathPeaks {
            current: peak_current.sqrt(),
            temperature: peak_theta,
        }
    }
}

/// Peaks of one replicate path at noise `epsilon`.
pub fn path_peaks(
    ctx: &PsiContext,
    steps: usize,
    seed: u64,
    replicate: u64,
    epsilon: f64,
) -> Result<PathPeaks> {
    let ctx = ctx.with_model(ctx.ou().with_noise(epsilon)?)?;
    Ok(Simulator::new(&ctx, steps)?.peaks(seed, replicate))
}

/// Current and temperature estimates from the same simulated paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledEstimate {
    pub current: McEstimate,
    pub temperature: McEstimate,
    /// Replicates with a temperature overload but no current overload.
    pub temperature_only: u64,
}

pub fn coupled_overload(ctx: &PsiContext, cfg: &McConfig, epsilon: f64) -> Result<CoupledEstimate> {
    cfg.validate()?;
    let ctx = ctx.with_model(ctx.ou().with_noise(epsilon)?)?;
    let sim = Simulator::new(&ctx, cfg.steps)?;
    let level = cfg.level;
    let (current, temperature, only) = cfg.run(|| {
        (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|r| {
                let p = sim.peaks(cfg.seed, r);
                let c = p.current >= level;
                let t = p.temperature >= level;
                (c as u64, t as u64, (t && !c) as u64)
            })
            .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
    })?;
    let n = cfg.replicates as u64;
    Ok(CoupledEstimate {
        current: McEstimate::new(epsilon, current, n),
        temperature: McEstimate::new(epsilon, temperature, n),
        temperature_only: only,
    })
}

/// Fraction of paths whose peak reaches the overload level.
pub fn overload_probability(ctx: &PsiContext, cfg: &McConfig, epsilon: f64) -> Result<McEstimate> {
    let coupled = coupled_overload(ctx, cfg, epsilon)?;
    Ok(match cfg.kind {
        McKind::Current => coupled.current,
        McKind::Temperature => coupled.temperature,
    })
}

/// Linear fit of `log p̂` against `1/ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    /// Minus the fitted slope: the empirical decay rate.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in `log p̂`.
    pub residual: f64,
    pub estimates: Vec<McEstimate>,
}

pub fn decay_slope(ctx: &PsiContext, cfg: &McConfig) -> Result<SlopeFit> {
    if cfg.epsilons.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two noise levels for a slope".into(),
        ));
    }
    let mut estimates = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise levels must be positive, got {eps}"
            )));
        }
        estimates.push(overload_probability(ctx, cfg, eps)?);
    }
    fit_decay_slope(estimates)
}

/// Fit `log p̂ = a + b/ε` by least squares over existing estimates.
pub fn fit_decay_slope(estimates: Vec<McEstimate>) -> Result<SlopeFit> {
    if estimates.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two noise levels for a slope".into(),
        ));
    }
    if let Some(e) = estimates.iter().find(|e| e.hits == 0) {
        return Err(Error::InsufficientHits { epsilon: e.epsilon });
    }
    let xs: Vec<f64> = estimates.iter().map(|e| 1.0 / e.epsilon).collect();
    let ys: Vec<f64> = estimates.iter().map(|e| e.p_hat.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter(
            "need at least two distinct noise levels for a slope".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - a - b * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(SlopeFit {
        slope: -b,
        intercept: a,
        residual,
        estimates,
    })
}
