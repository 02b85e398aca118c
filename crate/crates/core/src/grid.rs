//! DC power flow: the linear map from nodal injections to normalized line currents.
//!
//! Node 0 is the slack bus. Stochastic injections sit at nodes `1..=m`, the
//! remaining nodes carry deterministic injections. Reordering a network into
//! this layout is the job of [`crate::io`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on singular values for the rank checks.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Per-unit susceptance, strictly positive.
    pub susceptance: f64,
    /// Per-unit current rating. `f64::INFINITY` marks an unmonitored line.
    pub rating: f64,
    /// Thermal time constant.
    pub tau: f64,
}

impl Line {
    pub fn new(from: usize, to: usize, susceptance: f64, rating: f64, tau: f64) -> Self {
        Self {
            from,
            to,
            susceptance,
            rating,
            tau,
        }
    }
}

/// A connected network with lines oriented `from < to` and sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNetwork {
    node_count: usize,
    lines: Vec<Line>,
}

impl GridNetwork {
    pub fn new(node_count: usize, lines: Vec<Line>) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least 2 nodes, got {node_count}"
            )));
        }
        for (idx, line) in lines.iter().enumerate() {
            if line.to >= node_count {
                return Err(Error::InvalidNetwork(format!(
                    "line {idx} references node {} but the network has {node_count} nodes",
                    line.to
                )));
            }
            if line.from >= line.to {
                return Err(Error::InvalidNetwork(format!(
                    "line {idx} must satisfy from < to, got ({}, {})",
                    line.from, line.to
                )));
            }
            if !(line.susceptance.is_finite() && line.susceptance > 0.0) {
                return Err(Error::InvalidNetwork(format!(
                    "line {idx} has invalid susceptance {}",
                    line.susceptance
                )));
            }
            if line.rating.is_nan() || line.rating <= 0.0 {
                return Err(Error::InvalidNetwork(format!(
                    "line {idx} has invalid rating {}",
                    line.rating
                )));
            }
            if !(line.tau.is_finite() && line.tau > 0.0) {
                return Err(Error::NonPositiveTau(line.tau));
            }
        }
        for (idx, pair) in lines.windows(2).enumerate() {
            if (pair[0].from, pair[0].to) >= (pair[1].from, pair[1].to) {
                return Err(Error::InvalidNetwork(format!(
                    "lines {idx} and {} are not strictly sorted",
                    idx + 1
                )));
            }
        }
        if !is_connected(node_count, &lines) {
            return Err(Error::Graph("network is not connected".into()));
        }
        Ok(Self { node_count, lines })
    }

    /// Number of nodes including the slack bus (N + 1).
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, idx: usize) -> &Line {
        &self.lines[idx]
    }

    pub fn taus(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.tau).collect()
    }

    /// Replace every line rating, keeping the topology.
    pub fn with_ratings(&self, ratings: &[f64]) -> Result<Self> {
        if ratings.len() != self.lines.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ratings for {} lines",
                ratings.len(),
                self.lines.len()
            )));
        }
        let lines = self
            .lines
            .iter()
            .zip(ratings)
            .map(|(l, &r)| Line {
                rating: r,
                ..l.clone()
            })
            .collect();
        Self::new(self.node_count, lines)
    }

    /// Replace every thermal constant.
    pub fn with_taus(&self, taus: &[f64]) -> Result<Self> {
        if taus.len() != self.lines.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} thermal constants for {} lines",
                taus.len(),
                self.lines.len()
            )));
        }
        let lines = self
            .lines
            .iter()
            .zip(taus)
            .map(|(l, &tau)| Line { tau, ..l.clone() })
            .collect();
        Self::new(self.node_count, lines)
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.node_count;
        let mut b = DMatrix::zeros(n, n);
        for line in &self.lines {
            let (i, j, beta) = (line.from, line.to, line.susceptance);
            b[(i, i)] += beta;
            b[(j, j)] += beta;
            b[(i, j)] -= beta;
            b[(j, i)] -= beta;
        }
        b
    }

    /// Oriented incidence matrix: +1 at `from`, -1 at `to`.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.lines.len(), self.node_count);
        for (row, line) in self.lines.iter().enumerate() {
            a[(row, line.from)] = 1.0;
            a[(row, line.to)] = -1.0;
        }
        a
    }
}

fn is_connected(node_count: usize, lines: &[Line]) -> bool {
    let mut parent: Vec<usize> = (0..node_count).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = node_count;
    for line in lines {
        let (a, b) = (find(&mut parent, line.from), find(&mut parent, line.to));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    components == 1
}

/// Numerical rank from singular values, relative to the largest one.
pub fn numerical_rank(matrix: &DMatrix<f64>) -> usize {
    if matrix.is_empty() {
        return 0;
    }
    let sv = matrix.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// The matrix chain from the Laplacian to the normalized current map.
#[derive(Debug, Clone)]
pub struct DcFlowMatrices {
    network: GridNetwork,
    stochastic_count: usize,
    laplacian: DMatrix<f64>,
    incidence: DMatrix<f64>,
    susceptance_diag: DMatrix<f64>,
    grounded_inverse: DMatrix<f64>,
    transfer: DMatrix<f64>,
    normalized: DMatrix<f64>,
}

impl DcFlowMatrices {
    /// Build the flow matrices with nodes `1..=stochastic_count` stochastic.
    pub fn build(network: &GridNetwork, stochastic_count: usize) -> Result<Self> {
        let n_nodes = network.node_count();
        let n = n_nodes - 1;
        if stochastic_count == 0 || stochastic_count > n {
            return Err(Error::InvalidParameter(format!(
                "stochastic node count must lie in 1..={n}, got {stochastic_count}"
            )));
        }
        let laplacian = network.laplacian();
        let incidence = network.incidence();
        let susceptance_diag = DMatrix::from_diagonal(&DVector::from_iterator(
            network.line_count(),
            network.lines().iter().map(|l| l.susceptance),
        ));

        let reduced = laplacian.view((1, 1), (n, n)).clone_owned();
        let reduced_inv = reduced
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularReducedLaplacian)?;
        if !reduced_inv.iter().all(|x| x.is_finite()) || numerical_rank(&reduced) < n {
            return Err(Error::SingularReducedLaplacian);
        }
        let mut grounded_inverse = DMatrix::zeros(n_nodes, n_nodes);
        grounded_inverse
            .view_mut((1, 1), (n, n))
            .copy_from(&reduced_inv);

        let transfer = &susceptance_diag * &incidence * &grounded_inverse;
        let mut normalized = transfer.clone();
        for (row, line) in network.lines().iter().enumerate() {
            let scale = if line.rating.is_infinite() {
                0.0
            } else {
                1.0 / line.rating
            };
            normalized.row_mut(row).scale_mut(scale);
        }

        let flow = Self {
            network: network.clone(),
            stochastic_count,
            laplacian,
            incidence,
            susceptance_diag,
            grounded_inverse,
            transfer,
            normalized,
        };
        flow.check_ranks()?;
        Ok(flow)
    }

    // Row scaling by finite positive ratings preserves rank, so the checks run
    // on the unnormalized transfer matrix. This keeps them meaningful when
    // some lines are unmonitored (infinite rating, zero normalized row).
    fn check_ranks(&self) -> Result<()> {
        let n = self.network.node_count() - 1;
        let m = self.stochastic_count;
        let rank_b = numerical_rank(&self.laplacian);
        if rank_b != n {
            return Err(Error::RankDeficiency {
                matrix: "laplacian",
                rank: rank_b,
                expected: n,
            });
        }
        let rank_full = numerical_rank(&self.transfer);
        if rank_full != n {
            return Err(Error::RankDeficiency {
                matrix: "transfer",
                rank: rank_full,
                expected: n,
            });
        }
        let stochastic = self.transfer.columns(1, m).clone_owned();
        let rank_c = numerical_rank(&stochastic);
        if rank_c != m {
            return Err(Error::RankDeficiency {
                matrix: "stochastic block",
                rank: rank_c,
                expected: m,
            });
        }
        Ok(())
    }

    pub fn network(&self) -> &GridNetwork {
        &self.network
    }

    pub fn stochastic_count(&self) -> usize {
        self.stochastic_count
    }

    pub fn deterministic_count(&self) -> usize {
        self.network.node_count() - 1 - self.stochastic_count
    }

    pub fn line_count(&self) -> usize {
        self.network.line_count()
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn susceptance_diag(&self) -> &DMatrix<f64> {
        &self.susceptance_diag
    }

    pub fn grounded_inverse(&self) -> &DMatrix<f64> {
        &self.grounded_inverse
    }

    /// Unnormalized injection → current map (L × (N+1)).
    pub fn transfer(&self) -> &DMatrix<f64> {
        &self.transfer
    }

    /// Normalized injection → current map (L × (N+1)); first column is zero.
    pub fn normalized(&self) -> &DMatrix<f64> {
        &self.normalized
    }

    /// Columns of the normalized map belonging to stochastic nodes (L × m).
    pub fn stochastic_block(&self) -> DMatrix<f64> {
        self.normalized
            .columns(1, self.stochastic_count)
            .clone_owned()
    }

    /// Columns of the normalized map belonging to deterministic nodes (L × (N − m)).
    pub fn deterministic_block(&self) -> DMatrix<f64> {
        self.normalized
            .columns(1 + self.stochastic_count, self.deterministic_count())
            .clone_owned()
    }

    /// Row of the stochastic block for one line.
    pub fn stochastic_row(&self, line: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.stochastic_count,
            self.normalized
                .row(line)
                .columns(1, self.stochastic_count)
                .iter()
                .cloned(),
        )
    }

    /// Normalized currents for arbitrary injections, without feasibility checks.
    pub fn currents(&self, mu: &[f64], mu_d: &[f64]) -> Result<DVector<f64>> {
        self.check_dims(mu, mu_d)?;
        let mut full = DVector::zeros(self.network.node_count());
        for (i, &x) in mu.iter().enumerate() {
            full[1 + i] = x;
        }
        for (i, &x) in mu_d.iter().enumerate() {
            full[1 + self.stochastic_count + i] = x;
        }
        Ok(&self.normalized * full)
    }

    /// Unnormalized branch currents for a full injection vector (slack entry ignored).
    pub fn branch_currents(&self, injections: &DVector<f64>) -> DVector<f64> {
        &self.transfer * injections
    }

    fn check_dims(&self, mu: &[f64], mu_d: &[f64]) -> Result<()> {
        if mu.len() != self.stochastic_count || mu_d.len() != self.deterministic_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} stochastic and {} deterministic injections, got {} and {}",
                self.stochastic_count,
                self.deterministic_count(),
                mu.len(),
                mu_d.len()
            )));
        }
        Ok(())
    }

    pub fn operating_point(&self, mu: &[f64], mu_d: &[f64]) -> Result<OperatingPoint> {
        self.check_dims(mu, mu_d)?;
        let c_d = self.deterministic_block();
        let y = &c_d * DVector::from_column_slice(mu_d);
        let nu = self.stochastic_block() * DVector::from_column_slice(mu) + &y;
        if let Some((line, value)) = nu
            .iter()
            .map(|v| v.abs())
            .enumerate()
            .find(|(_, v)| *v >= 1.0)
        {
            return Err(Error::InfeasibleStart { line, value });
        }
        Ok(OperatingPoint {
            mu: mu.to_vec(),
            mu_d: mu_d.to_vec(),
            y,
            nu,
        })
    }

    /// The same network with one line's orientation reversed.
    ///
    /// The line keeps its position; only the signs of its rows change. Used to
    /// check that results do not depend on the chosen orientation.
    pub fn with_flipped_line(&self, line: usize) -> Self {
        let mut out = self.clone();
        for m in [&mut out.incidence, &mut out.transfer, &mut out.normalized] {
            m.row_mut(line).neg_mut();
        }
        out
    }
}

/// Injections and the resulting normalized currents at time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub mu: Vec<f64>,
    pub mu_d: Vec<f64>,
    /// Deterministic contribution `C_D · μ_D`.
    pub y: DVector<f64>,
    /// Normalized currents `C · μ + y`.
    pub nu: DVector<f64>,
}

impl OperatingPoint {
    pub fn max_loading(&self) -> f64 {
        self.nu.amax()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn two_bus() -> GridNetwork {
        GridNetwork::new(2, vec![Line::new(0, 1, 1.0, 1.0, 0.5)]).unwrap()
    }

    pub(crate) fn wheel() -> GridNetwork {
        GridNetwork::new(
            3,
            vec![
                Line::new(0, 1, 1.0, 1.0, 0.5),
                Line::new(0, 2, 1.0, 1.0, 0.5),
                Line::new(1, 2, 1.0, 1.0, 0.5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn laplacian_small_graphs() {
        assert_eq!(
            two_bus().laplacian(),
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
        );
        assert_eq!(
            wheel().laplacian(),
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0])
        );
    }

    #[test]
    fn incidence_small_graphs() {
        assert_eq!(
            two_bus().incidence(),
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0])
        );
        assert_eq!(
            wheel().incidence(),
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0, -1.0])
        );
        let ones = DVector::from_element(3, 1.0);
        assert_eq!(wheel().incidence() * ones, DVector::zeros(3));
    }

    #[test]
    fn two_bus_flow() {
        let flow = DcFlowMatrices::build(&two_bus(), 1).unwrap();
        assert_relative_eq!(flow.stochastic_block()[(0, 0)], -1.0, epsilon = 1e-14);
        let op = flow.operating_point(&[0.5], &[]).unwrap();
        assert_relative_eq!(op.nu[0], -0.5, epsilon = 1e-14);
        let zero = flow.operating_point(&[0.0], &[]).unwrap();
        assert_eq!(zero.nu[0], 0.0);
    }

    #[test]
    fn wheel_flow() {
        let flow = DcFlowMatrices::build(&wheel(), 2).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            2,
            &[
                -2.0 / 3.0,
                -1.0 / 3.0,
                -1.0 / 3.0,
                -2.0 / 3.0,
                1.0 / 3.0,
                -1.0 / 3.0,
            ],
        );
        assert_relative_eq!(flow.stochastic_block(), expected, epsilon = 1e-14);
        assert!(flow.normalized().column(0).iter().all(|&x| x == 0.0));
        let op = flow.operating_point(&[0.3, 0.3], &[]).unwrap();
        assert_relative_eq!(
            op.nu,
            DVector::from_vec(vec![-0.3, -0.3, 0.0]),
            epsilon = 1e-14
        );
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let flow = DcFlowMatrices::build(&two_bus(), 1).unwrap();
        assert!(matches!(
            flow.operating_point(&[1.0], &[]),
            Err(Error::InfeasibleStart { line: 0, .. })
        ));
    }

    #[test]
    fn invalid_networks() {
        assert!(matches!(
            GridNetwork::new(3, vec![Line::new(0, 1, 1.0, 1.0, 1.0)]),
            Err(Error::Graph(_))
        ));
        assert!(GridNetwork::new(2, vec![Line::new(1, 0, 1.0, 1.0, 1.0)]).is_err());
        assert!(GridNetwork::new(2, vec![Line::new(0, 1, 0.0, 1.0, 1.0)]).is_err());
        assert!(GridNetwork::new(2, vec![Line::new(0, 1, 1.0, 0.0, 1.0)]).is_err());
        assert!(GridNetwork::new(
            3,
            vec![
                Line::new(0, 2, 1.0, 1.0, 1.0),
                Line::new(0, 1, 1.0, 1.0, 1.0)
            ]
        )
        .is_err());
    }

    #[test]
    fn unmonitored_line_has_zero_row() {
        let net = GridNetwork::new(
            3,
            vec![
                Line::new(0, 1, 1.0, 1.0, 0.5),
                Line::new(0, 2, 1.0, f64::INFINITY, 0.5),
                Line::new(1, 2, 1.0, 1.0, 0.5),
            ],
        )
        .unwrap();
        let flow = DcFlowMatrices::build(&net, 2).unwrap();
        assert!(flow.normalized().row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flipped_line_negates_row() {
        let flow = DcFlowMatrices::build(&wheel(), 2).unwrap();
        let flipped = flow.with_flipped_line(2);
        assert_eq!(flipped.stochastic_row(2), -flow.stochastic_row(2));
        assert_eq!(flipped.stochastic_row(0), flow.stochastic_row(0));
    }
}
