//! Exact temperature decay rate for one line fed by one OU injection.
//!
//! With `f = τθ' + θ` the squared current, the cost of a temperature path is
//!
//! ```text
//! I(θ) = ½ ∫ ((f' / (2√f) + γ√f − γμ) / l)² dt,   θ(0) = μ²,  θ(T) = 1.
//! ```
//!
//! Its Euler-Lagrange equation is third order in `f`. The solver shoots on the
//! unknown initial derivatives `f'(0)` and `f''(0)`: for each `f'(0)` it finds
//! the `f''(0)` that lands on `θ(T) = 1` and then minimizes the resulting cost.
//! For very small thermal constants forward shooting is ill-conditioned; there
//! the solver switches to a multiplier formulation in `g = √f` (see
//! [`exact_decay_rate`]).

use crate::error::{Error, Result};
use crate::ode::{integrate, OdeOptions};

/// Below this value of `f` the square roots and divisions in the equations are unusable.
pub const F_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exact1dProblem {
    /// Initial (and long-run) injection; the sign is irrelevant and dropped.
    pub mean: f64,
    pub gamma: f64,
    pub vol: f64,
    pub tau: f64,
    pub horizon: f64,
}

impl Exact1dProblem {
    pub fn new(mean: f64, gamma: f64, vol: f64, tau: f64, horizon: f64) -> Result<Self> {
        if !(mean.abs() < 1.0) {
            return Err(Error::InfeasibleStart {
                line: 0,
                value: mean.abs(),
            });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if !(vol > 0.0 && vol.is_finite()) {
            return Err(Error::NonPositiveVolatility {
                x: mean,
                value: vol,
            });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::NonPositiveTau(tau));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            mean: mean.abs(),
            gamma,
            vol,
            tau,
            horizon,
        })
    }

    /// Integrand of the cost for given `f` and `f'`.
    #[inline]
    pub fn lagrangian(&self, f: f64, df: f64) -> f64 {
        let root = f.sqrt();
        let r = (df / (2.0 * root) + self.gamma * (root - self.mean)) / self.vol;
        0.5 * r * r
    }

    /// Closed-form current decay rate of the same problem, for comparison.
    pub fn current_rate(&self) -> f64 {
        let g = self.gamma;
        let v = self.vol * self.vol * -(-2.0 * g * self.horizon).exp_m1() / g;
        (1.0 - self.mean).powi(2) / v
    }
}

/// Cost of a temperature path sampled on a uniform grid.
///
/// Derivatives use second-order finite differences (central inside, one-sided
/// at the ends) and the integral uses the trapezoid rule.
pub fn functional_value(times: &[f64], theta: &[f64], problem: &Exact1dProblem) -> Result<f64> {
    let n = theta.len();
    if n < 3 || times.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "need at least 3 samples with matching times, got {} and {}",
            n,
            times.len()
        )));
    }
    let h = times[1] - times[0];
    let d1 = derivative(theta, h);
    let d2 = derivative(&d1, h);
    let tau = problem.tau;
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let f = tau * d1[k] + theta[k];
        if !(f > 0.0) {
            return Err(Error::NegativeRadicand(k));
        }
        values.push(problem.lagrangian(f, tau * d2[k] + d1[k]));
    }
    Ok(trapezoid(&values, h))
}

fn derivative(x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * h);
    d[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * h);
    for k in 1..n - 1 {
        d[k] = (x[k + 1] - x[k - 1]) / (2.0 * h);
    }
    d
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

/// Third derivative of `f` from the Euler-Lagrange equation
///
/// `4γ²f³ − 4γ²μf^{5/2} − 2τγ²μ f′f^{3/2} + 2τf²f‴ − 2f²f″ + f f′² − 4τff′f″ + 2τf′³ = 0`.
///
/// With `mean = 0` the μ terms vanish and the equation reduces to its pure
/// polynomial form.
#[inline]
fn third_derivative(f: f64, d1: f64, d2: f64, gamma: f64, tau: f64, mean: f64) -> f64 {
    let g2 = gamma * gamma;
    let root = f.sqrt();
    let rest = 4.0 * g2 * f * f * f
        - 4.0 * g2 * mean * f * f * root
        - 2.0 * tau * g2 * mean * d1 * f * root
        - 2.0 * f * f * d2
        + f * d1 * d1
        - 4.0 * tau * f * d1 * d2
        + 2.0 * tau * d1 * d1 * d1;
    -rest / (2.0 * tau * f * f)
}

/// Residual of the first-order form of the Euler-Lagrange system.
///
/// State `y = [θ, f, f′, f″]`. Components: `f − τθ′ − θ`, `f′ − y₂′`,
/// `f″ − y₃′`, and the third-order equation with `y₄′` in place of `f‴`.
pub fn euler_residual(
    y: [f64; 4],
    y_prime: [f64; 4],
    gamma: f64,
    tau: f64,
    mean: f64,
) -> Result<[f64; 4]> {
    let [theta, f, d1, d2] = y;
    if f.abs() < F_FLOOR {
        return Err(Error::DegenerateF(f));
    }
    let g2 = gamma * gamma;
    let d3 = y_prime[3];
    let root = f.abs().sqrt();
    let last = 4.0 * g2 * f * f * f
        - 4.0 * g2 * mean * f * f * root
        - 2.0 * tau * g2 * mean * d1 * f * root
        + 2.0 * tau * f * f * d3
        - 2.0 * f * f * d2
        + f * d1 * d1
        - 4.0 * tau * f * d1 * d2
        + 2.0 * tau * d1 * d1 * d1;
    Ok([
        f - tau * y_prime[0] - theta,
        y_prime[1] - d1,
        y_prime[2] - d2,
        last,
    ])
}

/// Explicit right-hand side of the shooting system `[θ, f, f′, f″, I]`.
pub fn shooting_rhs(y: &[f64; 5], problem: &Exact1dProblem) -> Result<[f64; 5]> {
    let [theta, f, d1, d2, _] = *y;
    if !(f > F_FLOOR) {
        return Err(Error::DegenerateF(f));
    }
    let p = problem;
    Ok([
        (f - theta) / p.tau,
        d1,
        d2,
        third_derivative(f, d1, d2, p.gamma, p.tau, p.mean),
        p.lagrangian(f, d1),
    ])
}

/// One integration of the shooting system.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub times: Vec<f64>,
    /// States `[θ, f, f′, f″, I]` at the accepted integrator steps.
    pub states: Vec<[f64; 5]>,
    pub theta_end: f64,
    pub functional: f64,
}

impl Shot {
    pub fn theta(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[0]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    pub x1_range: (f64, f64),
    pub x2_range: (f64, f64),
    pub x1_samples: usize,
    pub x2_samples: usize,
    /// Absolute tolerance on `θ(T) − 1`.
    pub root_tol: f64,
    /// Width at which the outer golden-section search stops.
    pub x1_tol: f64,
    pub rtol: f64,
    /// Any state component beyond this magnitude counts as a blow-up.
    pub bound: f64,
    /// Largest `T/τ` handled by forward shooting before switching formulations.
    pub max_stiffness: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            x1_range: (-50.0, 50.0),
            x2_range: (-50.0, 50.0),
            x1_samples: 101,
            x2_samples: 101,
            root_tol: 1e-8,
            x1_tol: 1e-6,
            rtol: 1e-9,
            bound: 1e6,
            max_stiffness: 25.0,
        }
    }
}

impl ShootingOptions {
    fn ode(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.rtol,
            atol: self.rtol * 1e-3,
            bound: self.bound,
            max_steps: 20_000,
        }
    }
}

/// Integrate from `[μ², μ², x1, x2, 0]` over `[0, T]`.
pub fn shoot(problem: &Exact1dProblem, x1: f64, x2: f64, opts: &ShootingOptions) -> Result<Shot> {
    let mu2 = problem.mean * problem.mean;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let end = integrate(
        |_, y| shooting_rhs(y, problem),
        [mu2, mu2, x1, x2, 0.0],
        0.0,
        problem.horizon,
        &opts.ode(),
        |t, y| {
            times.push(t);
            states.push(*y);
        },
    )?;
    Ok(Shot {
        times,
        states,
        theta_end: end[0],
        functional: end[4],
    })
}

/// Outcome of a shot reduced to what the root search needs.
#[derive(Debug, Clone, Copy)]
enum Landing {
    /// `θ(T) − 1` and the cost.
    Reached(f64, f64),
    /// Diverged upwards: treated as overshooting the target.
    Over,
    /// `f` collapsed to zero: treated as undershooting.
    Under,
}

impl Landing {
    fn sign(self) -> f64 {
        match self {
            Landing::Reached(miss, _) => miss.signum(),
            Landing::Over => 1.0,
            Landing::Under => -1.0,
        }
    }
}

fn land(problem: &Exact1dProblem, x1: f64, x2: f64, opts: &ShootingOptions) -> Landing {
    match shoot(problem, x1, x2, opts) {
        Ok(shot) => Landing::Reached(shot.theta_end - 1.0, shot.functional),
        Err(Error::DegenerateF(_)) => Landing::Under,
        Err(_) => Landing::Over,
    }
}

fn bisect_landing(
    problem: &Exact1dProblem,
    x1: f64,
    mut lo: f64,
    mut hi: f64,
    lo_sign: f64,
    opts: &ShootingOptions,
) -> Option<(f64, f64)> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let landing = land(problem, x1, mid, opts);
        if let Landing::Reached(miss, cost) = landing {
            if miss.abs() < opts.root_tol {
                return Some((cost, mid));
            }
        }
        if landing.sign() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
    }
    None
}

/// Smallest cost over all `x2` with `θ(T) = 1`, for a fixed `x1`.
fn cost_for_slope(problem: &Exact1dProblem, x1: f64, opts: &ShootingOptions) -> Option<(f64, f64)> {
    let (lo, hi) = opts.x2_range;
    let n = opts.x2_samples.max(2);
    let grid: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    let landings: Vec<Landing> = grid.iter().map(|&x2| land(problem, x1, x2, opts)).collect();
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        let (a, b) = (landings[k].sign(), landings[k + 1].sign());
        let found = if let Landing::Reached(miss, cost) = landings[k] {
            (miss.abs() < opts.root_tol).then_some((cost, grid[k]))
        } else {
            None
        };
        let found = found.or_else(|| {
            (a != b)
                .then(|| bisect_landing(problem, x1, grid[k], grid[k + 1], a, opts))
                .flatten()
        });
        if let Some((cost, x2)) = found {
            if best.is_none_or(|(c, _)| cost < c) {
                best = Some((cost, x2));
            }
        }
    }
    best
}

/// Result of the exact rate computation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactRate {
    pub rate: f64,
    /// `f'(0)` of the optimal path.
    pub slope: f64,
    /// `f''(0)` of the optimal path.
    pub curvature: f64,
    pub method: ExactMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactMethod {
    Shooting,
    Multiplier,
}

impl ExactMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ExactMethod::Shooting => "shooting",
            ExactMethod::Multiplier => "multiplier",
        }
    }
}

/// Minimum cost of reaching `θ(T) = 1`.
///
/// Uses nested shooting when `T/τ` is at most `opts.max_stiffness`. Beyond that
/// the multiplier route integrates the equivalent second-order equation for
/// `g = √f`, whose first integral has a boundary layer of width τ at the
/// horizon and is therefore stable to integrate forward.
pub fn exact_decay_rate(problem: &Exact1dProblem, opts: &ShootingOptions) -> Result<ExactRate> {
    if problem.horizon / problem.tau > opts.max_stiffness {
        return multiplier_decay_rate(problem, opts);
    }
    shooting_decay_rate(problem, opts)
}

/// Nested shooting: root-find `f''(0)` for each `f'(0)`, then golden-section on `f'(0)`.
pub fn shooting_decay_rate(problem: &Exact1dProblem, opts: &ShootingOptions) -> Result<ExactRate> {
    let cost = |x1: f64| cost_for_slope(problem, x1, opts);
    let (lo, hi) = opts.x1_range;
    let mut bracket = (lo, hi);
    let mut best: Option<(f64, f64, f64)> = None;
    // coarse scan, then a finer scan around the best sample
    for samples in [opts.x1_samples.max(3), 41] {
        let (a, b) = bracket;
        let step = (b - a) / (samples - 1) as f64;
        let mut local: Option<(usize, f64, f64)> = None;
        for k in 0..samples {
            let x1 = a + step * k as f64;
            if let Some((c, x2)) = cost(x1) {
                if local.is_none_or(|(_, lc, _)| c < lc) {
                    local = Some((k, c, x2));
                }
            }
        }
        let (k, c, x2) = local.ok_or(Error::NoBoundaryHit)?;
        let x1 = a + step * k as f64;
        if best.is_none_or(|(bc, _, _)| c < bc) {
            best = Some((c, x1, x2));
        }
        bracket = ((x1 - step).max(lo), (x1 + step).min(hi));
    }
    let (mut a, mut b) = bracket;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = best.unwrap();
    let eval = |x: f64, best: &mut (f64, f64, f64)| -> f64 {
        match cost(x) {
            Some((c, x2)) => {
                if c < best.0 {
                    *best = (c, x, x2);
                }
                c
            }
            None => f64::INFINITY,
        }
    };
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = eval(c, &mut best);
    let mut fd = eval(d, &mut best);
    while (b - a).abs() > opts.x1_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d, &mut best);
        }
    }
    let (rate, slope, curvature) = best;
    Ok(ExactRate {
        rate,
        slope,
        curvature,
        method: ExactMethod::Shooting,
    })
}

/// Path of the multiplier formulation at one multiplier value.
#[derive(Debug, Clone, Copy)]
struct MultiplierPath {
    theta_end: f64,
    cost: f64,
    slope: f64,
    curvature: f64,
}

/// For `g = √f` the Euler-Lagrange equation integrates once to
/// `g'' = γ²(g − μ) − 2k e^{(t−T)/τ} g` with a free multiplier `k`, `g(0) = μ`
/// and the natural boundary condition `g'(T) + γ(g(T) − μ) = 0`. The equation
/// is linear in `g`, so the boundary condition fixes `g'(0)` in closed form.
fn multiplier_path(
    problem: &Exact1dProblem,
    k: f64,
    opts: &ShootingOptions,
) -> Result<MultiplierPath> {
    let p = *problem;
    let (g2, mu, tau, horizon) = (p.gamma * p.gamma, p.mean, p.tau, p.horizon);
    let weight = move |t: f64| (-(horizon - t) / tau).exp();
    let ode = OdeOptions {
        max_steps: 2_000_000,
        ..opts.ode()
    };
    // particular solution from (μ, 0) and homogeneous solution from (0, 1)
    let basis = integrate(
        |t, y: &[f64; 4]| {
            let w = 2.0 * k * weight(t);
            Ok([
                y[1],
                g2 * (y[0] - mu) - w * y[0],
                y[3],
                g2 * y[2] - w * y[2],
            ])
        },
        [mu, 0.0, 0.0, 1.0],
        0.0,
        horizon,
        &ode,
        |_, _| {},
    )?;
    let denom = basis[3] + p.gamma * basis[2];
    if denom.abs() < 1e-300 {
        return Err(Error::NoBoundaryHit);
    }
    let slope0 = -(basis[1] + p.gamma * (basis[0] - mu)) / denom;
    let end = integrate(
        |t, y: &[f64; 4]| {
            let (g, dg) = (y[0], y[1]);
            let r = (dg + p.gamma * (g - mu)) / p.vol;
            Ok([
                dg,
                g2 * (g - mu) - 2.0 * k * weight(t) * g,
                (g * g - y[2]) / tau,
                0.5 * r * r,
            ])
        },
        [mu, slope0, mu * mu, 0.0],
        0.0,
        horizon,
        &ode,
        |_, _| {},
    )?;
    let dd0 = -2.0 * k * weight(0.0) * mu;
    Ok(MultiplierPath {
        theta_end: end[2],
        cost: end[3],
        slope: 2.0 * mu * slope0,
        curvature: 2.0 * slope0 * slope0 + 2.0 * mu * dd0,
    })
}

/// Multiplier route: bracket the multiplier on a geometric scale, then bisect.
pub fn multiplier_decay_rate(
    problem: &Exact1dProblem,
    opts: &ShootingOptions,
) -> Result<ExactRate> {
    let miss = |k: f64| multiplier_path(problem, k, opts).map(|p| (p.theta_end - 1.0, p));
    let mut lo = 0.0;
    let mut hi = None;
    let mut k = 1e-3;
    for _ in 0..80 {
        match miss(k) {
            Ok((m, _)) if m < 0.0 => lo = k,
            Ok(_) | Err(Error::BlowUp { .. }) => {
                hi = Some(k);
                break;
            }
            Err(e) => return Err(e),
        }
        k *= 2.0;
    }
    let mut hi = hi.ok_or(Error::NoBoundaryHit)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match miss(mid) {
            Ok((m, path)) => {
                if m.abs() < opts.root_tol {
                    return Ok(ExactRate {
                        rate: path.cost,
                        slope: path.slope,
                        curvature: path.curvature,
                        method: ExactMethod::Multiplier,
                    });
                }
                if m < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Err(Error::BlowUp { .. }) => hi = mid,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NoBoundaryHit)
}
