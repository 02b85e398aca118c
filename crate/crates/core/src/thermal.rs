//! Line temperatures driven by squared normalized currents.
//!
//! Normalized temperature follows `τ Θ' = Y² − Θ`. On a sampled current path
//! the recursion below integrates this exactly when `Y²` is piecewise linear
//! between grid points.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::injections::SamplePath;

/// Normalized temperatures per line on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperaturePath {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl TemperaturePath {
    /// Largest temperature over all lines and times.
    pub fn peak(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter().cloned())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn line(&self, line: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[line]).collect()
    }
}

/// One step of the exponential integrator for a single line.
#[derive(Debug, Clone, Copy)]
pub struct ThermalStep {
    decay: f64,
    ramp: f64,
}

impl ThermalStep {
    pub fn new(tau: f64, dt: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::NonPositiveTau(tau));
        }
        let x = dt / tau;
        let decay = (-x).exp();
        // 1 − (1 − e^{−x})/x, expanded near zero to avoid cancellation
        let ramp = if x < 1e-4 {
            x / 2.0 - x * x / 6.0
        } else {
            1.0 + (-x).exp_m1() / x
        };
        Ok(Self { decay, ramp })
    }

    /// Advance the temperature given squared currents at both ends of the step.
    #[inline]
    pub fn advance(&self, theta: f64, load_start: f64, load_end: f64) -> f64 {
        theta * self.decay + load_start * (1.0 - self.decay) + (load_end - load_start) * self.ramp
    }
}

/// Map a current path to temperatures. `theta0` defaults to `Y(0)²`.
pub fn xi_map(
    current: &SamplePath,
    tau: &[f64],
    theta0: Option<&[f64]>,
) -> Result<TemperaturePath> {
    let lines = current.dim();
    if tau.len() != lines || theta0.is_some_and(|t| t.len() != lines) {
        return Err(Error::DimensionMismatch(format!(
            "path has {lines} lines, got {} thermal constants",
            tau.len()
        )));
    }
    if let Some(&bad) = tau.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::NonPositiveTau(bad));
    }
    let first = &current.values[0];
    let mut theta: DVector<f64> = match theta0 {
        Some(t) => DVector::from_column_slice(t),
        None => first.map(|y| y * y),
    };
    let mut values = Vec::with_capacity(current.values.len());
    values.push(theta.clone());
    for k in 0..current.steps() {
        let dt = current.times[k + 1] - current.times[k];
        let (a, b) = (&current.values[k], &current.values[k + 1]);
        for l in 0..lines {
            let step = ThermalStep::new(tau[l], dt)?;
            theta[l] = step.advance(theta[l], a[l] * a[l], b[l] * b[l]);
        }
        values.push(theta.clone());
    }
    Ok(TemperaturePath {
        times: current.times.clone(),
        values,
    })
}

/// Current level that must be exceeded for the temperature to reach 1 by the horizon.
pub fn overload_threshold_equivalence(nu: f64, tau: f64, horizon: f64) -> f64 {
    crate::rates::alpha(nu, tau, horizon)
}

/// True when a single-line current path stays strictly below the threshold
/// level, which rules out a temperature overload started from `ν²`.
pub fn below_thermal_threshold(current: &[f64], nu: f64, tau: f64, horizon: f64) -> bool {
    let level = overload_threshold_equivalence(nu, tau, horizon);
    current.iter().all(|y| y.abs() < level)
}
