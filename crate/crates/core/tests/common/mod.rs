//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the closed-form rate code or the exact solver of
//! the library: only network construction (to obtain transfer rows) is shared.

#![allow(dead_code)]

use ldcap_core::grid::{DcFlowMatrices, GridNetwork, Line};
use ldcap_core::injections::OuModel;
use ldcap_core::rates::PsiContext;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TABLE_MEAN: f64 = 0.5;
pub const TABLE_GAMMA: f64 = 0.5;
pub const TABLE_VOL: f64 = 1.0;
pub const TABLE_HORIZON: f64 = 1.0;
pub const TABLE_TAUS: [f64; 6] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];

/// One line, one OU injection, `μ = 0.5, γ = 0.5, l = 1, T = 1`.
pub fn table_ctx(tau: f64, noise: f64) -> PsiContext {
    let net = GridNetwork::new(2, vec![Line::new(0, 1, 1.0, 1.0, tau)]).unwrap();
    let flow = DcFlowMatrices::build(&net, 1).unwrap();
    let ou = OuModel::new(
        vec![TABLE_GAMMA],
        vec![TABLE_VOL],
        vec![TABLE_MEAN],
        noise,
        TABLE_HORIZON,
    )
    .unwrap();
    PsiContext::at_mean(flow, ou, &[]).unwrap()
}

pub fn wheel_flow(stochastic: usize) -> DcFlowMatrices {
    let lines = vec![
        Line::new(0, 1, 1.0, 1.0, 0.5),
        Line::new(0, 2, 1.0, 1.0, 0.5),
        Line::new(1, 2, 1.0, 1.0, 0.5),
    ];
    DcFlowMatrices::build(&GridNetwork::new(3, lines).unwrap(), stochastic).unwrap()
}

/// Random connected network description.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub nodes: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub stochastic: usize,
    pub gamma: Vec<f64>,
    pub vol: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu_d: Vec<f64>,
    /// Fraction of each line's rating used at the operating point.
    pub loading: Vec<f64>,
    pub tau: Vec<f64>,
    pub horizon: f64,
}

impl RandomCase {
    /// Draw a connected graph with `nodes` buses (a random tree plus extra edges).
    pub fn draw(
        rng: &mut impl Rng,
        nodes: usize,
        max_lines: usize,
        max_stochastic: usize,
        uniform_gamma: bool,
    ) -> Self {
        let mut pairs = std::collections::BTreeSet::new();
        for j in 1..nodes {
            let i = rng.random_range(0..j);
            pairs.insert((i, j));
        }
        let complete = nodes * (nodes - 1) / 2;
        let target = max_lines.max(nodes - 1).min(complete);
        while pairs.len() < target && rng.random_bool(0.7) {
            let i = rng.random_range(0..nodes);
            let j = rng.random_range(0..nodes);
            if i != j {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
        let edges: Vec<(usize, usize, f64)> = pairs
            .into_iter()
            .map(|(i, j)| (i, j, rng.random_range(0.5..5.0)))
            .collect();
        let n = nodes - 1;
        let stochastic = rng.random_range(1..=max_stochastic.min(n));
        let g0 = rng.random_range(0.2..2.0);
        let gamma = (0..stochastic)
            .map(|_| {
                if uniform_gamma {
                    g0
                } else {
                    rng.random_range(0.2..2.0)
                }
            })
            .collect();
        let vol = (0..stochastic)
            .map(|_| rng.random_range(0.3..2.0))
            .collect();
        let mu = (0..stochastic)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mu_d = (0..n - stochastic)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let loading = edges.iter().map(|_| rng.random_range(0.05..0.9)).collect();
        let tau = edges.iter().map(|_| rng.random_range(0.05..2.0)).collect();
        Self {
            nodes,
            edges,
            stochastic,
            gamma,
            vol,
            mu,
            mu_d,
            loading,
            tau,
            horizon: rng.random_range(0.2..3.0),
        }
    }

    pub fn seeded(
        seed: u64,
        nodes: usize,
        max_lines: usize,
        max_stochastic: usize,
        uniform_gamma: bool,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::draw(&mut rng, nodes, max_lines, max_stochastic, uniform_gamma)
    }

    /// Network with ratings chosen so each line runs at its drawn loading.
    pub fn flow(&self) -> DcFlowMatrices {
        let lines: Vec<Line> = self
            .edges
            .iter()
            .zip(&self.tau)
            .map(|(&(i, j, b), &t)| Line::new(i, j, b, 1.0, t))
            .collect();
        let net = GridNetwork::new(self.nodes, lines).unwrap();
        let unit = DcFlowMatrices::build(&net, self.stochastic).unwrap();
        let currents = unit.currents(&self.mu, &self.mu_d).unwrap();
        let ratings: Vec<f64> = currents
            .iter()
            .zip(&self.loading)
            .map(|(c, u)| (c.abs() / u).max(0.1))
            .collect();
        DcFlowMatrices::build(&net.with_ratings(&ratings).unwrap(), self.stochastic).unwrap()
    }

    pub fn ou(&self, noise: f64) -> OuModel {
        OuModel::new(
            self.gamma.clone(),
            self.vol.clone(),
            self.mu.clone(),
            noise,
            self.horizon,
        )
        .unwrap()
    }

    pub fn ctx(&self, noise: f64) -> PsiContext {
        PsiContext::at_mean(self.flow(), self.ou(noise), &self.mu_d).unwrap()
    }
}

/// Brute-force minimum of the discretized rate functional over injection
/// paths whose line current ends at `level`.
///
/// Each coordinate is discretized on `steps` intervals with the midpoint rule
/// `((x_{k+1} − x_k)/Δ + γ (x_k + x_{k+1})/2) / l`, deviations from the mean
/// start at zero, and the single linear end constraint
/// `Σ_i row_i x_i(T) = level − nu` is enforced through a dense KKT solve.
pub fn psi_path_oracle(
    row: &[f64],
    nu: f64,
    gamma: &[f64],
    vol: &[f64],
    horizon: f64,
    level: f64,
    steps: usize,
) -> f64 {
    let m = row.len();
    let dt = horizon / steps as f64;
    let vars = m * steps;
    let mut kkt = DMatrix::zeros(vars + 1, vars + 1);
    for i in 0..m {
        let p = 1.0 / dt + gamma[i] / 2.0;
        let q = 1.0 / dt - gamma[i] / 2.0;
        let w = dt / (vol[i] * vol[i]);
        for k in 0..steps {
            // residual of interval k uses x_{k+1} (variable k) and x_k (variable k − 1)
            let mut terms = vec![(i * steps + k, p)];
            if k > 0 {
                terms.push((i * steps + k - 1, -q));
            }
            for &(a, ca) in &terms {
                for &(b, cb) in &terms {
                    kkt[(a, b)] += w * ca * cb;
                }
            }
        }
        let end = i * steps + steps - 1;
        kkt[(end, vars)] = row[i];
        kkt[(vars, end)] = row[i];
    }
    let mut rhs = DVector::zeros(vars + 1);
    rhs[vars] = level - nu;
    let h = kkt.view((0, 0), (vars, vars)).clone_owned();
    let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
    let x = sol.rows(0, vars);
    0.5 * (x.transpose() * &h * x)[(0, 0)]
}

/// Global minimum of the exact one-line temperature problem on a grid.
///
/// Injection deviations `x_k` follow the exact OU transition, so the path
/// cost is the Gaussian chain action `½ xᵀHx` with tridiagonal `H`. The end
/// temperature is a trapezoid sum of `e^{−(T−t)/τ}(μ + x)²/τ`, a quadratic in
/// `x`. Minimizing a quadratic under one quadratic equality constraint is
/// solved globally by the multiplier `λ` with `H − λW ⪰ 0`, found by bisection.
pub fn exact_rate_oracle(
    mean: f64,
    gamma: f64,
    vol: f64,
    tau: f64,
    horizon: f64,
    steps: usize,
) -> f64 {
    let n = steps;
    let dt = horizon / n as f64;
    let a = (-gamma * dt).exp();
    let var = vol * vol * -(-2.0 * gamma * dt).exp_m1() / (2.0 * gamma);
    let mut diag = vec![(1.0 + a * a) / var; n];
    diag[n - 1] = 1.0 / var;
    let off = -a / var;
    let mut w: Vec<f64> = (0..=n)
        .map(|k| dt / tau * (-(horizon - k as f64 * dt) / tau).exp())
        .collect();
    w[0] *= 0.5;
    w[n] *= 0.5;
    let base = mean * mean * ((-horizon / tau).exp() + w.iter().sum::<f64>());
    let wx = &w[1..];

    // (H − λW) pivots; None when not positive definite
    let factor = |lam: f64| -> Option<Vec<f64>> {
        let mut piv = Vec::with_capacity(n);
        let mut prev: f64 = 0.0;
        for k in 0..n {
            let d = diag[k] - lam * wx[k] - if k > 0 { off * off / prev } else { 0.0 };
            if d.is_nan() || d <= 0.0 {
                return None;
            }
            piv.push(d);
            prev = d;
        }
        Some(piv)
    };
    let solve = |lam: f64, piv: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n];
        for k in 0..n {
            let r = lam * mean * wx[k];
            y[k] = if k > 0 {
                r - off / piv[k - 1] * y[k - 1]
            } else {
                r
            };
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let upper = if k + 1 < n { off * x[k + 1] } else { 0.0 };
            x[k] = (y[k] - upper) / piv[k];
        }
        x
    };
    let theta = |x: &[f64]| -> f64 {
        base + x
            .iter()
            .zip(wx)
            .map(|(xi, wi)| wi * (2.0 * mean * xi + xi * xi))
            .sum::<f64>()
    };

    let mut hi = 1.0;
    while factor(hi).is_some() {
        hi *= 2.0;
    }
    let mut lo_pd = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo_pd + hi);
        if factor(mid).is_some() {
            lo_pd = mid;
        } else {
            hi = mid;
        }
    }
    let (mut lo, mut up) = (0.0, lo_pd);
    for _ in 0..200 {
        let mid = 0.5 * (lo + up);
        let piv = factor(mid).unwrap();
        if theta(&solve(mid, &piv)) < 1.0 {
            lo = mid;
        } else {
            up = mid;
        }
    }
    let x = solve(lo, &factor(lo).unwrap());
    let mut action = 0.0;
    for k in 0..n {
        action += diag[k] * x[k] * x[k];
        if k + 1 < n {
            action += 2.0 * off * x[k] * x[k + 1];
        }
    }
    0.5 * action
}

/// Richardson-extrapolated [`exact_rate_oracle`] (second-order in the step).
pub fn exact_rate_reference(mean: f64, gamma: f64, vol: f64, tau: f64, horizon: f64) -> f64 {
    let coarse = exact_rate_oracle(mean, gamma, vol, tau, horizon, 4000);
    let fine = exact_rate_oracle(mean, gamma, vol, tau, horizon, 8000);
    (4.0 * fine - coarse) / 3.0
}
