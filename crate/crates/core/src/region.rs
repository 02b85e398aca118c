//! Capacity regions: per-line bounds on normalized currents, 2-D slices, and
//! partitions of a slice by most-at-risk line.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point, Polygon};
use crate::grid::DcFlowMatrices;
use crate::rates::{min_with_ties, PsiContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Deterministic,
    Current,
    TemperatureLb,
    TemperatureTaylor,
}

impl RegionKind {
    pub const ALL: [RegionKind; 4] = [
        RegionKind::Deterministic,
        RegionKind::Current,
        RegionKind::TemperatureLb,
        RegionKind::TemperatureTaylor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::Deterministic => "deterministic",
            RegionKind::Current => "current",
            RegionKind::TemperatureLb => "lb",
            RegionKind::TemperatureTaylor => "taylor",
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(RegionKind::Deterministic),
            "current" => Ok(RegionKind::Current),
            "lb" | "temperature_lb" => Ok(RegionKind::TemperatureLb),
            "taylor" | "tl" | "temperature_taylor" => Ok(RegionKind::TemperatureTaylor),
            other => Err(Error::InvalidParameter(format!(
                "unknown region kind '{other}'"
            ))),
        }
    }
}

/// Parameters a region was built with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionParams {
    pub epsilon: f64,
    pub p: f64,
    pub horizon: f64,
    /// Thermal constant used by the Taylor kind.
    pub tau0: Option<f64>,
}

/// `{μ̄ : |ν_ℓ(μ̄)| < r_ℓ for every line}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRegion {
    pub kind: RegionKind,
    pub bounds: Vec<f64>,
    pub params: RegionParams,
}

/// Noise margin `η = √(ε log(1/p) C_ℓ M_T C_ℓᵀ)`.
pub fn noise_margin(variance: f64, epsilon: f64, p: f64) -> f64 {
    (epsilon * (1.0 / p).ln() * variance).sqrt()
}

/// Lower-bound region limit `δ = √(1 − η² e(1 − e)) − η(1 − e)` with `e = e^{−T/τ}`.
///
/// This is the `|ν|` at which `α(ν) − |ν| = η`. Returns NaN when the radicand
/// is negative.
pub fn lb_bound(eta: f64, tau: f64, horizon: f64) -> f64 {
    let e = (-horizon / tau).exp();
    let one_minus = -(-horizon / tau).exp_m1();
    let radicand = 1.0 - eta * eta * e * one_minus;
    if radicand < 0.0 {
        return f64::NAN;
    }
    radicand.sqrt() - eta * one_minus
}

/// Taylor region limit `1 − η / √(1 + 2τ₀γ)`.
pub fn taylor_bound(eta: f64, tau0: f64, gamma: f64) -> f64 {
    1.0 - eta / (1.0 + 2.0 * tau0 * gamma).sqrt()
}

impl CapacityRegion {
    /// Build a region. `tau0` overrides the thermal constant for the Taylor
    /// kind; otherwise the lines must share one.
    pub fn build(
        ctx: &PsiContext,
        kind: RegionKind,
        epsilon: f64,
        p: f64,
        tau0: Option<f64>,
    ) -> Result<Self> {
        if kind != RegionKind::Deterministic {
            if !(epsilon.is_finite() && epsilon > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "epsilon must be positive, got {epsilon}"
                )));
            }
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "p must lie in (0, 1), got {p}"
                )));
            }
        }
        let horizon = ctx.ou().horizon();
        let lines = ctx.flow().network().lines();
        let mut used_tau0 = None;
        let taylor = if kind == RegionKind::TemperatureTaylor {
            let gamma = ctx.ou().uniform_gamma().ok_or(Error::NonUniformGamma)?;
            let t0 = match tau0 {
                Some(t) => t,
                None => ctx.uniform_tau().ok_or(Error::NonUniformTau)?,
            };
            if !(t0.is_finite() && t0 >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "tau0 must be non-negative, got {t0}"
                )));
            }
            used_tau0 = Some(t0);
            Some((t0, gamma))
        } else {
            None
        };
        let mut bounds = Vec::with_capacity(lines.len());
        for (l, line) in lines.iter().enumerate() {
            if kind == RegionKind::Deterministic || !ctx.is_active(l) {
                bounds.push(1.0);
                continue;
            }
            let eta = noise_margin(ctx.line_variance(l), epsilon, p);
            let bound = match kind {
                RegionKind::Current => 1.0 - eta,
                RegionKind::TemperatureLb => lb_bound(eta, line.tau, horizon),
                RegionKind::TemperatureTaylor => {
                    let (t0, gamma) = taylor.unwrap();
                    taylor_bound(eta, t0, gamma)
                }
                RegionKind::Deterministic => unreachable!(),
            };
            if !(bound > 0.0) {
                return Err(Error::BoundCollapse { line: l, bound });
            }
            bounds.push(bound.min(1.0));
        }
        Ok(Self {
            kind,
            bounds,
            params: RegionParams {
                epsilon,
                p,
                horizon,
                tau0: used_tau0,
            },
        })
    }

    /// Strict membership for given normalized currents.
    pub fn contains_currents(&self, nu: &DVector<f64>) -> bool {
        nu.iter()
            .zip(&self.bounds)
            .all(|(v, r)| v.abs() < *r && v.abs() < 1.0)
    }

    pub fn contains(&self, flow: &DcFlowMatrices, mu: &[f64], mu_d: &[f64]) -> Result<bool> {
        if self.bounds.len() != flow.line_count() {
            return Err(Error::DimensionMismatch(format!(
                "region has {} lines, network has {}",
                self.bounds.len(),
                flow.line_count()
            )));
        }
        Ok(self.contains_currents(&flow.currents(mu, mu_d)?))
    }
}

/// A plane through injection space: two free nodes, everything else fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSpec {
    /// Free nodes, as indices `1..=N` into the injection vector.
    pub free: (usize, usize),
    /// Injections at nodes `1..=N` (stochastic first); free entries are ignored.
    pub fixed: Vec<f64>,
    pub bbox: BoundingBox,
}

/// Normalized currents as an affine function of the two free injections.
#[derive(Debug, Clone)]
struct AffineCurrents {
    base: Vec<f64>,
    du: Vec<f64>,
    dv: Vec<f64>,
}

impl AffineCurrents {
    fn new(flow: &DcFlowMatrices, spec: &SliceSpec) -> Result<Self> {
        let n = flow.network().node_count() - 1;
        let (u, v) = spec.free;
        if spec.fixed.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "slice needs {n} fixed injections, got {}",
                spec.fixed.len()
            )));
        }
        if u == v || !(1..=n).contains(&u) || !(1..=n).contains(&v) {
            return Err(Error::InvalidParameter(format!(
                "free nodes must be two distinct nodes in 1..={n}, got ({u}, {v})"
            )));
        }
        let mut injections = DVector::zeros(n + 1);
        for (i, &x) in spec.fixed.iter().enumerate() {
            injections[i + 1] = x;
        }
        injections[u] = 0.0;
        injections[v] = 0.0;
        let c = flow.normalized();
        let base = (c * injections).iter().cloned().collect();
        Ok(Self {
            base,
            du: c.column(u).iter().cloned().collect(),
            dv: c.column(v).iter().cloned().collect(),
        })
    }

    #[inline]
    fn at(&self, line: usize, p: Point) -> f64 {
        self.base[line] + self.du[line] * p[0] + self.dv[line] * p[1]
    }
}

/// Polygon of a region restricted to a slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub kind: RegionKind,
    pub free: (usize, usize),
    /// Counterclockwise vertices; the closing edge back to the first vertex is implicit.
    pub polygon: Polygon,
}

impl Slice2D {
    pub fn new(region: &CapacityRegion, flow: &DcFlowMatrices, spec: &SliceSpec) -> Result<Self> {
        let affine = AffineCurrents::new(flow, spec)?;
        let mut poly = spec.bbox.polygon();
        let scale = affine
            .du
            .iter()
            .chain(&affine.dv)
            .fold(0.0f64, |m, x| m.max(x.abs()));
        for (l, &r) in region.bounds.iter().enumerate() {
            let (a, b, c) = (affine.du[l], affine.dv[l], affine.base[l]);
            if a.abs().max(b.abs()) <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                if c.abs() >= r {
                    return Err(Error::EmptySlice);
                }
                continue;
            }
            poly = poly.clip(a, b, r - c).clip(-a, -b, r + c);
            if poly.is_empty() {
                return Err(Error::EmptySlice);
            }
        }
        if poly.signed_area() < 0.0 {
            poly.vertices.reverse();
        }
        Ok(Self {
            kind: region.kind,
            free: spec.free,
            polygon: poly,
        })
    }
}

/// Connected group of grid cells sharing the same most-at-risk lines.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRegion {
    /// Lines attaining the minimal decay rate (several on exact ties).
    pub lines: Vec<usize>,
    pub cells: usize,
    pub area: f64,
    pub centroid: Point,
    /// Boundary loops along cell edges; the outer boundary comes first.
    pub outline: Vec<Polygon>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskPartition {
    pub free: (usize, usize),
    pub bbox: BoundingBox,
    pub resolution: usize,
    pub regions: Vec<PartitionRegion>,
    /// Index of the region with the largest area.
    pub central: Option<usize>,
    /// Region index per cell, row-major with `v` as the row, `None` outside the slice.
    pub cell_regions: Vec<Option<usize>>,
}

impl RiskPartition {
    pub fn central_region(&self) -> Option<&PartitionRegion> {
        self.central.map(|i| &self.regions[i])
    }

    /// Distinct label sets appearing in the partition.
    pub fn label_sets(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<Vec<usize>> = self.regions.iter().map(|r| r.lines.clone()).collect();
        sets.sort();
        sets.dedup();
        sets
    }
}

/// Label the deterministic slice by the lines with the smallest current decay rate.
pub fn risk_partition(
    ctx: &PsiContext,
    spec: &SliceSpec,
    resolution: usize,
) -> Result<RiskPartition> {
    if resolution == 0 {
        return Err(Error::InvalidParameter(
            "resolution must be positive".into(),
        ));
    }
    let flow = ctx.flow();
    let affine = AffineCurrents::new(flow, spec)?;
    let active = ctx.active_lines();
    if active.is_empty() {
        return Err(Error::NoStochasticLines);
    }
    let variances = ctx.variances();
    let bbox = spec.bbox;
    let du = (bbox.u_max - bbox.u_min) / resolution as f64;
    let dv = (bbox.v_max - bbox.v_min) / resolution as f64;
    let center = |i: usize, j: usize| -> Point {
        [
            bbox.u_min + (i as f64 + 0.5) * du,
            bbox.v_min + (j as f64 + 0.5) * dv,
        ]
    };
    let lines = flow.line_count();

    let rows: Vec<Vec<Option<Vec<usize>>>> = (0..resolution)
        .into_par_iter()
        .map(|j| {
            (0..resolution)
                .map(|i| {
                    let p = center(i, j);
                    if (0..lines).any(|l| affine.at(l, p).abs() >= 1.0) {
                        return None;
                    }
                    min_with_ties(active.iter().map(|&l| {
                        let gap = 1.0 - affine.at(l, p).abs();
                        (l, gap * gap / variances[l])
                    }))
                    .map(|m| m.argmin)
                })
                .collect()
        })
        .collect();

    let mut label_ids: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut labels: Vec<Vec<usize>> = Vec::new();
    let mut cell_label = vec![None; resolution * resolution];
    for (j, row) in rows.into_iter().enumerate() {
        for (i, cell) in row.into_iter().enumerate() {
            if let Some(set) = cell {
                let next = labels.len();
                let id = *label_ids.entry(set.clone()).or_insert_with(|| {
                    labels.push(set);
                    next
                });
                cell_label[j * resolution + i] = Some(id);
            }
        }
    }

    let mut cell_regions = vec![None; resolution * resolution];
    let mut regions = Vec::new();
    for start in 0..cell_label.len() {
        let Some(label) = cell_label[start] else {
            continue;
        };
        if cell_regions[start].is_some() {
            continue;
        }
        let region_id = regions.len();
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        cell_regions[start] = Some(region_id);
        while let Some(idx) = queue.pop_front() {
            members.push(idx);
            let (i, j) = (idx % resolution, idx / resolution);
            let mut visit = |ni: usize, nj: usize| {
                let nidx = nj * resolution + ni;
                if cell_label[nidx] == Some(label) && cell_regions[nidx].is_none() {
                    cell_regions[nidx] = Some(region_id);
                    queue.push_back(nidx);
                }
            };
            if i > 0 {
                visit(i - 1, j);
            }
            if i + 1 < resolution {
                visit(i + 1, j);
            }
            if j > 0 {
                visit(i, j - 1);
            }
            if j + 1 < resolution {
                visit(i, j + 1);
            }
        }
        let (mut cu, mut cv) = (0.0, 0.0);
        for &idx in &members {
            let p = center(idx % resolution, idx / resolution);
            cu += p[0];
            cv += p[1];
        }
        let count = members.len();
        let outline = trace_outline(&members, &cell_regions, region_id, resolution)
            .into_iter()
            .map(|lp| {
                Polygon::new(
                    lp.into_iter()
                        .map(|(gi, gj)| [bbox.u_min + gi as f64 * du, bbox.v_min + gj as f64 * dv])
                        .collect(),
                )
            })
            .collect();
        regions.push(PartitionRegion {
            lines: labels[label].clone(),
            cells: count,
            area: count as f64 * du * dv,
            centroid: [cu / count as f64, cv / count as f64],
            outline,
        });
    }
    let central = regions
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cells.cmp(&b.1.cells))
        .map(|(i, _)| i);
    Ok(RiskPartition {
        free: spec.free,
        bbox,
        resolution,
        regions,
        central,
        cell_regions,
    })
}

/// Chain the boundary edges of a cell group into closed loops of grid vertices,
/// dropping collinear points. The loop with the largest area comes first.
fn trace_outline(
    members: &[usize],
    cell_regions: &[Option<usize>],
    region: usize,
    resolution: usize,
) -> Vec<Vec<(usize, usize)>> {
    let inside = |i: isize, j: isize| {
        i >= 0
            && j >= 0
            && (i as usize) < resolution
            && (j as usize) < resolution
            && cell_regions[j as usize * resolution + i as usize] == Some(region)
    };
    let mut next: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    for &idx in members {
        let (i, j) = (idx % resolution, idx / resolution);
        let (si, sj) = (i as isize, j as isize);
        // counterclockwise around the cell
        if !inside(si, sj - 1) {
            next.entry((i, j)).or_default().push((i + 1, j));
        }
        if !inside(si + 1, sj) {
            next.entry((i + 1, j)).or_default().push((i + 1, j + 1));
        }
        if !inside(si, sj + 1) {
            next.entry((i + 1, j + 1)).or_default().push((i, j + 1));
        }
        if !inside(si - 1, sj) {
            next.entry((i, j + 1)).or_default().push((i, j));
        }
    }
    let mut starts: Vec<(usize, usize)> = next.keys().cloned().collect();
    starts.sort();
    let mut loops = Vec::new();
    for start in starts {
        while next.get(&start).is_some_and(|v| !v.is_empty()) {
            let mut lp = vec![start];
            let mut at = start;
            while let Some(to) = next.get_mut(&at).and_then(|v| v.pop()) {
                if to == start {
                    break;
                }
                lp.push(to);
                at = to;
            }
            loops.push(simplify(lp));
        }
    }
    let area = |lp: &Vec<(usize, usize)>| {
        let n = lp.len();
        (0..n)
            .map(|k| {
                let (a, b) = (lp[k], lp[(k + 1) % n]);
                a.0 as f64 * b.1 as f64 - b.0 as f64 * a.1 as f64
            })
            .sum::<f64>()
            .abs()
    };
    loops.sort_by(|a, b| area(b).total_cmp(&area(a)));
    loops
}

fn simplify(lp: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let n = lp.len();
    if n < 3 {
        return lp;
    }
    (0..n)
        .filter(|&k| {
            let (a, b, c) = (lp[(k + n - 1) % n], lp[k], lp[(k + 1) % n]);
            let cross = (b.0 as i64 - a.0 as i64) * (c.1 as i64 - b.1 as i64)
                - (b.1 as i64 - a.1 as i64) * (c.0 as i64 - b.0 as i64);
            cross != 0
        })
        .map(|k| lp[k])
        .collect()
}
