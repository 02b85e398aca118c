//! Python bindings: networks, decay rates, capacity regions and Monte Carlo.

use std::str::FromStr;

use ldcap_core::exact1d::{
    exact_decay_rate as solve_exact, multiplier_decay_rate, shooting_decay_rate, Exact1dProblem,
    ShootingOptions,
};
use ldcap_core::geometry::BoundingBox;
use ldcap_core::io::native::ZeroFlowPolicy;
use ldcap_core::io::{apply_imax_rule, parse_matpower, parse_native, ConversionParams};
use ldcap_core::montecarlo::{overload_probability, McConfig, McKind};
use ldcap_core::region::{risk_partition, Slice2D, SliceSpec};
use ldcap_core::{CapacityRegion, DecayRateReport, Error, RegionKind};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() || e.is_empty_result() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ldcap_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

type LineId = (u64, u64);

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct LineRates {
    line: LineId,
    nu: f64,
    psi_plus: f64,
    psi_minus: f64,
    alpha: f64,
    psi_alpha: f64,
    sigma2: f64,
    variance: f64,
}

#[pyclass(get_all, frozen)]
struct RateReport {
    current: f64,
    current_lines: Vec<LineId>,
    lower_bound: f64,
    lower_bound_lines: Vec<LineId>,
    taylor: Option<f64>,
    tau0: Option<f64>,
    lines: Vec<LineRates>,
    excluded: Vec<LineId>,
}

#[pymethods]
impl RateReport {
    fn __repr__(&self) -> String {
        format!(
            "RateReport(current={:.6}, lower_bound={:.6}, taylor={})",
            self.current,
            self.lower_bound,
            self.taylor
                .map_or("None".to_string(), |t| format!("{t:.6}"))
        )
    }
}

#[pyclass(get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct McEstimate {
    epsilon: f64,
    hits: u64,
    replicates: u64,
    p_hat: f64,
    ci_low: f64,
    ci_high: f64,
}

#[pymethods]
impl McEstimate {
    fn __repr__(&self) -> String {
        format!(
            "McEstimate(epsilon={}, p_hat={}, ci=({}, {}))",
            self.epsilon, self.p_hat, self.ci_low, self.ci_high
        )
    }
}

#[pyclass(get_all, frozen)]
struct PartitionRegion {
    lines: Vec<LineId>,
    cells: usize,
    area: f64,
    centroid: (f64, f64),
}

#[pyclass(get_all, frozen)]
struct Partition {
    regions: Vec<Py<PartitionRegion>>,
    central: Option<usize>,
}

/// A validated network with its flow matrices and OU parameters.
#[pyclass(frozen)]
struct Network {
    inner: ldcap_core::io::Network,
}

impl Network {
    fn lines(&self, idx: &[usize]) -> Vec<LineId> {
        idx.iter().map(|&l| self.inner.line_labels[l]).collect()
    }

    fn context(
        &self,
        epsilon: Option<f64>,
        horizon: Option<f64>,
    ) -> PyResult<ldcap_core::PsiContext> {
        let net = &self.inner;
        net.context(
            epsilon.unwrap_or(net.epsilon()),
            horizon.unwrap_or(net.horizon()),
        )
        .py()
    }

    fn slice_spec(&self, u: u64, v: u64, bbox: (f64, f64, f64, f64)) -> PyResult<SliceSpec> {
        let bbox = BoundingBox::new(bbox.0, bbox.1, bbox.2, bbox.3)
            .ok_or_else(|| PyValueError::new_err("bounding box needs min < max on both axes"))?;
        Ok(SliceSpec {
            free: (
                self.inner.internal_node(u).py()?,
                self.inner.internal_node(v).py()?,
            ),
            fixed: self.inner.injections(),
            bbox,
        })
    }
}

fn parse_kind(kind: &str) -> PyResult<RegionKind> {
    RegionKind::from_str(kind).py()
}

#[pymethods]
impl Network {
    /// Parse a native JSON network document.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = parse_native(text).py()?.build().py()?;
        Ok(Self { inner })
    }

    /// Convert a MATPOWER case, rating every line at `k` times its base flow.
    #[staticmethod]
    #[pyo3(signature = (text, k, stochastic, controllable = Vec::new(), gamma = 1.0, vol = 1.0, tau = 0.5, unmonitored_zero_flow = false))]
    #[allow(clippy::too_many_arguments)]
    fn from_matpower(
        text: &str,
        k: f64,
        stochastic: Vec<u64>,
        controllable: Vec<u64>,
        gamma: f64,
        vol: f64,
        tau: f64,
        unmonitored_zero_flow: bool,
    ) -> PyResult<Self> {
        let case = parse_matpower(text).py()?;
        let params = ConversionParams {
            gamma,
            vol,
            tau,
            zero_flow: if unmonitored_zero_flow {
                ZeroFlowPolicy::Unmonitored
            } else {
                ZeroFlowPolicy::Error
            },
            ..Default::default()
        };
        let doc = apply_imax_rule(&case, k, &stochastic, &controllable, &params).py()?;
        Ok(Self {
            inner: doc.build().py()?,
        })
    }

    /// Read a native JSON network document from disk.
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.document.to_json()
    }

    #[getter]
    fn node_ids(&self) -> Vec<u64> {
        self.inner.node_ids.clone()
    }

    #[getter]
    fn line_labels(&self) -> Vec<LineId> {
        self.inner.line_labels.clone()
    }

    #[getter]
    fn stochastic_count(&self) -> usize {
        self.inner.stochastic_count()
    }

    /// Normalized currents at the mean injections, in line-label order.
    fn currents(&self) -> PyResult<Vec<f64>> {
        let ctx = self.context(None, None)?;
        Ok(ctx.operating_point().nu.iter().cloned().collect())
    }

    /// Per-line rates and the network decay rates.
    #[pyo3(signature = (horizon = None, tau0 = None))]
    fn rates(&self, horizon: Option<f64>, tau0: Option<f64>) -> PyResult<RateReport> {
        let ctx = self.context(None, horizon)?;
        let report = DecayRateReport::compute(&ctx, tau0.or(self.inner.tau0())).py()?;
        let sign = &self.inner.line_sign;
        let lines = report
            .lines
            .iter()
            .map(|r| {
                let flipped = sign[r.line] < 0.0;
                LineRates {
                    line: self.inner.line_labels[r.line],
                    nu: sign[r.line] * r.nu,
                    psi_plus: if flipped { r.psi_minus } else { r.psi_plus },
                    psi_minus: if flipped { r.psi_plus } else { r.psi_minus },
                    alpha: r.alpha,
                    psi_alpha: r.psi_alpha,
                    sigma2: r.sigma2,
                    variance: r.variance,
                }
            })
            .collect();
        Ok(RateReport {
            current: report.current.value,
            current_lines: self.lines(&report.current.argmin),
            lower_bound: report.lower_bound.value,
            lower_bound_lines: self.lines(&report.lower_bound.argmin),
            taylor: report.taylor.map(|t| t.1),
            tau0: report.taylor.map(|t| t.0),
            lines,
            excluded: self.lines(&report.excluded),
        })
    }

    /// Bounds on `|ν_ℓ|` as `{(from, to): bound}`.
    #[pyo3(signature = (kind = "current", epsilon = None, p = None, horizon = None, tau0 = None))]
    fn region(
        &self,
        kind: &str,
        epsilon: Option<f64>,
        p: Option<f64>,
        horizon: Option<f64>,
        tau0: Option<f64>,
    ) -> PyResult<Vec<(LineId, f64)>> {
        let eps = epsilon.unwrap_or(self.inner.epsilon());
        let ctx = self.context(Some(eps), horizon)?;
        let region = CapacityRegion::build(
            &ctx,
            parse_kind(kind)?,
            eps,
            p.unwrap_or(self.inner.p()),
            tau0.or(self.inner.tau0()),
        )
        .py()?;
        Ok(self
            .inner
            .line_labels
            .iter()
            .cloned()
            .zip(region.bounds)
            .collect())
    }

    /// Counterclockwise polygon of a region in the plane of nodes `u` and `v`.
    #[pyo3(signature = (u, v, kind = "current", bbox = (-3.0, 3.0, -3.0, 3.0), epsilon = None, p = None, horizon = None, tau0 = None))]
    #[allow(clippy::too_many_arguments)]
    fn slice(
        &self,
        u: u64,
        v: u64,
        kind: &str,
        bbox: (f64, f64, f64, f64),
        epsilon: Option<f64>,
        p: Option<f64>,
        horizon: Option<f64>,
        tau0: Option<f64>,
    ) -> PyResult<Vec<(f64, f64)>> {
        let eps = epsilon.unwrap_or(self.inner.epsilon());
        let ctx = self.context(Some(eps), horizon)?;
        let region = CapacityRegion::build(
            &ctx,
            parse_kind(kind)?,
            eps,
            p.unwrap_or(self.inner.p()),
            tau0.or(self.inner.tau0()),
        )
        .py()?;
        let slice = Slice2D::new(&region, &self.inner.flow, &self.slice_spec(u, v, bbox)?).py()?;
        Ok(slice
            .polygon
            .vertices
            .iter()
            .map(|p| (p[0], p[1]))
            .collect())
    }

    /// Partition of the deterministic slice by most-at-risk line.
    #[pyo3(signature = (u, v, bbox = (-3.0, 3.0, -3.0, 3.0), resolution = 400))]
    fn partition(
        &self,
        py: Python<'_>,
        u: u64,
        v: u64,
        bbox: (f64, f64, f64, f64),
        resolution: usize,
    ) -> PyResult<Partition> {
        let ctx = self.context(None, None)?;
        let spec = self.slice_spec(u, v, bbox)?;
        let partition = py.detach(|| risk_partition(&ctx, &spec, resolution)).py()?;
        let regions = partition
            .regions
            .iter()
            .map(|r| {
                Py::new(
                    py,
                    PartitionRegion {
                        lines: self.lines(&r.lines),
                        cells: r.cells,
                        area: r.area,
                        centroid: (r.centroid[0], r.centroid[1]),
                    },
                )
            })
            .collect::<PyResult<_>>()?;
        Ok(Partition {
            regions,
            central: partition.central,
        })
    }

    /// Overload probabilities at each noise level.
    #[pyo3(signature = (epsilons, replicates = 10_000, seed = 0, kind = "current", steps = 1000, level = 1.0, threads = None))]
    #[allow(clippy::too_many_arguments)]
    fn monte_carlo(
        &self,
        py: Python<'_>,
        epsilons: Vec<f64>,
        replicates: usize,
        seed: u64,
        kind: &str,
        steps: usize,
        level: f64,
        threads: Option<usize>,
    ) -> PyResult<Vec<McEstimate>> {
        let ctx = self.context(None, None)?;
        let cfg = McConfig {
            kind: McKind::from_str(kind).py()?,
            replicates,
            steps,
            seed,
            level,
            epsilons: epsilons.clone(),
            threads,
        };
        let estimates = py
            .detach(|| {
                epsilons
                    .iter()
                    .map(|&eps| overload_probability(&ctx, &cfg, eps))
                    .collect::<ldcap_core::Result<Vec<_>>>()
            })
            .py()?;
        Ok(estimates
            .into_iter()
            .map(|e| McEstimate {
                epsilon: e.epsilon,
                hits: e.hits,
                replicates: e.replicates,
                p_hat: e.p_hat,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(nodes={}, lines={}, stochastic={})",
            self.inner.node_ids.len(),
            self.inner.line_labels.len(),
            self.inner.stochastic_count()
        )
    }
}

/// Exact temperature decay rate of one line fed by one OU injection.
#[pyfunction]
#[pyo3(signature = (mu, gamma, vol, tau, horizon = 1.0, method = "auto"))]
fn exact_decay_rate(
    py: Python<'_>,
    mu: f64,
    gamma: f64,
    vol: f64,
    tau: f64,
    horizon: f64,
    method: &str,
) -> PyResult<f64> {
    let problem = Exact1dProblem::new(mu, gamma, vol, tau, horizon).py()?;
    let opts = ShootingOptions::default();
    let solve = match method {
        "auto" => solve_exact,
        "shooting" => shooting_decay_rate,
        "multiplier" => multiplier_decay_rate,
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    Ok(py.detach(|| solve(&problem, &opts)).py()?.rate)
}

#[pymodule]
fn ldcap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<RateReport>()?;
    m.add_class::<LineRates>()?;
    m.add_class::<McEstimate>()?;
    m.add_class::<Partition>()?;
    m.add_class::<PartitionRegion>()?;
    m.add_function(wrap_pyfunction!(exact_decay_rate, m)?)?;
    Ok(())
}
