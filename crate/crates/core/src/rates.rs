//! Closed-form decay rates and optimal paths for OU injections.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{DcFlowMatrices, OperatingPoint};
use crate::injections::{uniform_value, OuModel, SamplePath};

/// Relative tolerance used when collecting tied minimizers.
pub const TIE_TOL: f64 = 1e-9;

/// A decay rate that may be infinite (the event is impossible under the model).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Finite(f64),
    Unbounded,
}

impl Rate {
    pub fn value(self) -> Option<f64> {
        match self {
            Rate::Finite(v) => Some(v),
            Rate::Unbounded => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Rate::Finite(_))
    }

    /// True when the rate is at least `level`; an unbounded rate exceeds everything.
    pub fn at_least(self, level: f64) -> bool {
        match self {
            Rate::Finite(v) => v >= level,
            Rate::Unbounded => true,
        }
    }
}

impl PartialOrd for Rate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering;
        match (self, other) {
            (Rate::Finite(a), Rate::Finite(b)) => a.partial_cmp(b),
            (Rate::Finite(_), Rate::Unbounded) => Some(Ordering::Less),
            (Rate::Unbounded, Rate::Finite(_)) => Some(Ordering::Greater),
            (Rate::Unbounded, Rate::Unbounded) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Finite(v) => write!(f, "{v}"),
            Rate::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// Diagonal of `M_t = L² D⁻¹ (I − e^{−2Dt}) e^{D(t−T)}`.
pub fn m_diagonal(ou: &OuModel, t: f64) -> DVector<f64> {
    let horizon = ou.horizon();
    DVector::from_iterator(
        ou.dim(),
        ou.gamma()
            .iter()
            .zip(ou.vol())
            .map(|(&g, &l)| l * l * (-(-2.0 * g * t).exp_m1()) * (g * (t - horizon)).exp() / g),
    )
}

pub fn m_matrix(ou: &OuModel, t: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&m_diagonal(ou, t))
}

/// Diagonal of the time derivative of `M_t`.
pub fn m_derivative_diagonal(ou: &OuModel, t: f64) -> DVector<f64> {
    let horizon = ou.horizon();
    DVector::from_iterator(
        ou.dim(),
        ou.gamma()
            .iter()
            .zip(ou.vol())
            .map(|(&g, &l)| l * l * (g * (t - horizon)).exp() * (1.0 + (-2.0 * g * t).exp())),
    )
}

/// Current level whose sustained exceedance is needed for a temperature overload.
///
/// `α = √((1 − ν² e^{−T/τ}) / (1 − e^{−T/τ}))`.
pub fn alpha(nu: f64, tau: f64, horizon: f64) -> f64 {
    if tau == 0.0 {
        return 1.0;
    }
    let decay = (-horizon / tau).exp();
    ((1.0 - nu * nu * decay) / -(-horizon / tau).exp_m1()).sqrt()
}

/// Minimum over lines together with every line attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMin {
    pub value: f64,
    pub argmin: Vec<usize>,
}

pub(crate) fn min_with_ties(values: impl IntoIterator<Item = (usize, f64)>) -> Option<RateMin> {
    let values: Vec<(usize, f64)> = values.into_iter().collect();
    let best = values.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let cutoff = best + TIE_TOL * best.abs().max(f64::MIN_POSITIVE);
    let argmin = values
        .iter()
        .filter(|&&(_, v)| v <= cutoff)
        .map(|&(i, _)| i)
        .collect();
    Some(RateMin {
        value: best,
        argmin,
    })
}

/// Currents and their time derivatives at both ends of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEndpoints {
    pub start: DVector<f64>,
    pub end: DVector<f64>,
    pub start_slope: DVector<f64>,
    pub end_slope: DVector<f64>,
}

/// Optimal injection and current paths for reaching a level on one line at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPaths {
    pub injections: SamplePath,
    pub currents: SamplePath,
}

/// Everything needed to evaluate decay rates at one operating point.
#[derive(Debug, Clone)]
pub struct PsiContext {
    flow: DcFlowMatrices,
    op: OperatingPoint,
    ou: OuModel,
    stochastic: DMatrix<f64>,
    variances: Vec<f64>,
    active: Vec<bool>,
}

impl PsiContext {
    pub fn new(flow: DcFlowMatrices, op: OperatingPoint, ou: OuModel) -> Result<Self> {
        let m = flow.stochastic_count();
        if ou.dim() != m || op.mu.len() != m || op.nu.len() != flow.line_count() {
            return Err(Error::DimensionMismatch(format!(
                "network has {m} stochastic nodes, model has {}, operating point has {}",
                ou.dim(),
                op.mu.len()
            )));
        }
        if let Some((line, value)) = op
            .nu
            .iter()
            .map(|v| v.abs())
            .enumerate()
            .find(|(_, v)| *v >= 1.0)
        {
            return Err(Error::InfeasibleStart { line, value });
        }
        let stochastic = flow.stochastic_block();
        let m_t = m_diagonal(&ou, ou.horizon());
        let variances: Vec<f64> = (0..flow.line_count())
            .map(|l| weighted_square(&stochastic, l, &m_t))
            .collect();
        let row_norms: Vec<f64> = (0..flow.line_count())
            .map(|l| stochastic.row(l).amax())
            .collect();
        let scale = row_norms.iter().cloned().fold(0.0, f64::max);
        let active = row_norms
            .iter()
            .zip(&variances)
            .map(|(&r, &v)| r > 1e-12 * scale && v > 0.0)
            .collect();
        Ok(Self {
            flow,
            op,
            ou,
            stochastic,
            variances,
            active,
        })
    }

    /// Context whose stochastic injections start at the OU mean.
    pub fn at_mean(flow: DcFlowMatrices, ou: OuModel, mu_d: &[f64]) -> Result<Self> {
        let op = flow.operating_point(ou.mean(), mu_d)?;
        Self::new(flow, op, ou)
    }

    pub fn flow(&self) -> &DcFlowMatrices {
        &self.flow
    }

    pub fn operating_point(&self) -> &OperatingPoint {
        &self.op
    }

    pub fn ou(&self) -> &OuModel {
        &self.ou
    }

    pub fn nu(&self, line: usize) -> f64 {
        self.op.nu[line]
    }

    /// Same network and model at different injections.
    pub fn with_injections(&self, mu: &[f64], mu_d: &[f64]) -> Result<Self> {
        let op = self.flow.operating_point(mu, mu_d)?;
        let ou = self.ou.with_mean(mu.to_vec())?;
        Ok(Self {
            op,
            ou,
            ..self.clone()
        })
    }

    /// Same injections with a different OU model (noise, horizon, rates).
    pub fn with_model(&self, ou: OuModel) -> Result<Self> {
        Self::new(self.flow.clone(), self.op.clone(), ou)
    }

    /// Lines whose current depends on the stochastic injections.
    pub fn active_lines(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&l| self.active[l]).collect()
    }

    pub fn is_active(&self, line: usize) -> bool {
        self.active[line]
    }

    /// `C_ℓ M_T C_ℓᵀ`, the terminal variance factor of line `ℓ`.
    pub fn line_variance(&self, line: usize) -> f64 {
        self.variances[line]
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `σ_ℓ² = C_ℓ L² C_ℓᵀ`.
    pub fn sigma2(&self, line: usize) -> f64 {
        let l2 = DVector::from_iterator(self.ou.dim(), self.ou.vol().iter().map(|l| l * l));
        weighted_square(&self.stochastic, line, &l2)
    }

    /// Cheapest rate for line `ℓ` to reach level `a` at the horizon.
    pub fn psi(&self, line: usize, level: f64) -> Result<f64> {
        let v = self.active_variance(line)?;
        let gap = level - self.op.nu[line];
        Ok(gap * gap / v)
    }

    fn active_variance(&self, line: usize) -> Result<f64> {
        if line >= self.active.len() {
            return Err(Error::DimensionMismatch(format!("no line {line}")));
        }
        if !self.active[line] {
            return Err(Error::ZeroVarianceLine(line));
        }
        Ok(self.variances[line])
    }

    /// Per-line current rate `ψ^{(1)} ∧ ψ^{(−1)}`; unbounded outside the active set.
    pub fn line_current_rate(&self, line: usize) -> Rate {
        if !self.active[line] {
            return Rate::Unbounded;
        }
        let gap = 1.0 - self.op.nu[line].abs();
        Rate::Finite(gap * gap / self.variances[line])
    }

    pub fn current_decay_rate(&self) -> Result<RateMin> {
        min_with_ties(
            self.active_lines()
                .into_iter()
                .map(|l| (l, self.line_current_rate(l).value().unwrap())),
        )
        .ok_or(Error::NoStochasticLines)
    }

    pub fn alpha(&self, line: usize) -> f64 {
        alpha(
            self.op.nu[line],
            self.flow.network().line(line).tau,
            self.ou.horizon(),
        )
    }

    /// `ψ^{(α)} ∧ ψ^{(−α)}` for one line.
    pub fn line_lb_rate(&self, line: usize) -> Rate {
        if !self.active[line] {
            return Rate::Unbounded;
        }
        let gap = self.alpha(line) - self.op.nu[line].abs();
        Rate::Finite(gap * gap / self.variances[line])
    }

    pub fn lb_decay_rate(&self) -> Result<RateMin> {
        min_with_ties(
            self.active_lines()
                .into_iter()
                .map(|l| (l, self.line_lb_rate(l).value().unwrap())),
        )
        .ok_or(Error::NoStochasticLines)
    }

    /// `(1 + 2τ₀γ) I_c*`, valid for a common mean-reversion rate γ and thermal constant τ₀.
    pub fn taylor_decay_rate(&self, tau0: f64) -> Result<f64> {
        let gamma = self.ou.uniform_gamma().ok_or(Error::NonUniformGamma)?;
        if !(tau0.is_finite() && tau0 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau0 must be non-negative, got {tau0}"
            )));
        }
        Ok((1.0 + 2.0 * tau0 * gamma) * self.current_decay_rate()?.value)
    }

    /// The common thermal constant of all lines, if there is one.
    pub fn uniform_tau(&self) -> Option<f64> {
        uniform_value(&self.flow.network().taus())
    }

    fn gap_weights(&self, line: usize, level: f64) -> Result<(f64, DVector<f64>)> {
        let v = self.active_variance(line)?;
        let c = self.stochastic.row(line).transpose();
        Ok(((level - self.op.nu[line]) / v, c))
    }

    /// Optimal injection path `X(t) = (a − ν_ℓ) M_t C_ℓᵀ / (C_ℓ M_T C_ℓᵀ) + μ` and its currents.
    pub fn optimal_paths(&self, line: usize, level: f64, steps: usize) -> Result<OptimalPaths> {
        if steps == 0 {
            return Err(Error::InvalidParameter(
                "step count must be at least 1".into(),
            ));
        }
        let (scale, c) = self.gap_weights(line, level)?;
        let mu = DVector::from_column_slice(self.ou.mean());
        let injections = SamplePath::from_fn(self.ou.horizon(), steps, |t| {
            m_diagonal(&self.ou, t).component_mul(&c) * scale + &mu
        });
        let mut currents = injections.clone();
        for (x, y) in injections.values.iter().zip(currents.values.iter_mut()) {
            *y = &self.stochastic * x + &self.op.y;
        }
        Ok(OptimalPaths {
            injections,
            currents,
        })
    }

    /// Endpoints of the optimal current path for line `ℓ` and level `a`.
    pub fn optimal_endpoints(&self, line: usize, level: f64) -> Result<PathEndpoints> {
        let (scale, c) = self.gap_weights(line, level)?;
        let horizon = self.ou.horizon();
        let mu = DVector::from_column_slice(self.ou.mean());
        let x_at = |t: f64| m_diagonal(&self.ou, t).component_mul(&c) * scale + &mu;
        let dx_at = |t: f64| m_derivative_diagonal(&self.ou, t).component_mul(&c) * scale;
        Ok(PathEndpoints {
            start: &self.stochastic * x_at(0.0) + &self.op.y,
            end: &self.stochastic * x_at(horizon) + &self.op.y,
            start_slope: &self.stochastic * dx_at(0.0),
            end_slope: &self.stochastic * dx_at(horizon),
        })
    }

    /// Endpoint term `Φ = Σ_i [K_i(T) − K_i(0)]` of the first-order thermal expansion.
    ///
    /// `K_i = ½ ((x_i' − γ_i(μ_i − x_i)) / l_i)²` with injections recovered from
    /// currents through the left inverse of the stochastic block.
    pub fn taylor_phi(&self, endpoints: &PathEndpoints) -> Result<f64> {
        let c = &self.stochastic;
        let m = c.ncols();
        let gram = c.transpose() * c;
        let gram_inv = gram
            .clone()
            .try_inverse()
            .filter(|_| crate::grid::numerical_rank(&gram) == m)
            .ok_or(Error::RankDeficiency {
                matrix: "stochastic block",
                rank: crate::grid::numerical_rank(&gram),
                expected: m,
            })?;
        let left_inverse = gram_inv * c.transpose();
        let kinetic = |f: &DVector<f64>, slope: &DVector<f64>| -> f64 {
            let x = &left_inverse * (f - &self.op.y);
            let dx = &left_inverse * slope;
            (0..m)
                .map(|i| {
                    let g = self.ou.gamma()[i];
                    let r = (dx[i] - g * (self.ou.mean()[i] - x[i])) / self.ou.vol()[i];
                    0.5 * r * r
                })
                .sum()
        };
        Ok(kinetic(&endpoints.end, &endpoints.end_slope)
            - kinetic(&endpoints.start, &endpoints.start_slope))
    }

    /// Level of the nearer overload boundary for a line.
    pub fn nearest_level(&self, line: usize) -> f64 {
        if self.op.nu[line] < 0.0 {
            -1.0
        } else {
            1.0
        }
    }

    /// `I_c* + τ₀ Φ` evaluated along the optimal current path of the most-at-risk line.
    pub fn taylor_from_phi(&self, tau0: f64) -> Result<f64> {
        let current = self.current_decay_rate()?;
        let line = current.argmin[0];
        let endpoints = self.optimal_endpoints(line, self.nearest_level(line))?;
        Ok(current.value + tau0 * self.taylor_phi(&endpoints)?)
    }
}

fn weighted_square(matrix: &DMatrix<f64>, row: usize, weights: &DVector<f64>) -> f64 {
    matrix
        .row(row)
        .iter()
        .zip(weights.iter())
        .map(|(c, w)| c * c * w)
        .sum()
}

/// Per-line entries of a [`DecayRateReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct LineRates {
    pub line: usize,
    pub nu: f64,
    pub psi_plus: f64,
    pub psi_minus: f64,
    pub alpha: f64,
    pub psi_alpha: f64,
    pub sigma2: f64,
    pub variance: f64,
}

/// Per-line ψ values and the network decay rates at one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayRateReport {
    pub lines: Vec<LineRates>,
    pub excluded: Vec<usize>,
    pub current: RateMin,
    pub lower_bound: RateMin,
    /// Taylor rate with the thermal constant used, when the closed form applies.
    pub taylor: Option<(f64, f64)>,
}

impl DecayRateReport {
    /// Compute the report. `tau0` overrides the lines' thermal constant for the
    /// Taylor rate; without it the Taylor rate is reported only when all lines
    /// share one constant and the mean-reversion rate is uniform.
    pub fn compute(ctx: &PsiContext, tau0: Option<f64>) -> Result<Self> {
        let active = ctx.active_lines();
        let mut lines = Vec::with_capacity(active.len());
        for &l in &active {
            let nu = ctx.nu(l);
            let alpha = ctx.alpha(l);
            let signed = if nu < 0.0 { -alpha } else { alpha };
            lines.push(LineRates {
                line: l,
                nu,
                psi_plus: ctx.psi(l, 1.0)?,
                psi_minus: ctx.psi(l, -1.0)?,
                alpha,
                psi_alpha: ctx.psi(l, signed)?,
                sigma2: ctx.sigma2(l),
                variance: ctx.line_variance(l),
            });
        }
        let excluded = (0..ctx.flow().line_count())
            .filter(|&l| !ctx.is_active(l))
            .collect();
        let current = ctx.current_decay_rate()?;
        let lower_bound = ctx.lb_decay_rate()?;
        let taylor = match tau0 {
            Some(t) => Some((t, ctx.taylor_decay_rate(t)?)),
            None => match (ctx.uniform_tau(), ctx.ou().uniform_gamma()) {
                (Some(t), Some(_)) => Some((t, ctx.taylor_decay_rate(t)?)),
                _ => None,
            },
        };
        Ok(Self {
            lines,
            excluded,
            current,
            lower_bound,
            taylor,
        })
    }
}
