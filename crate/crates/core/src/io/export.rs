//! JSON and CSV output for reports, regions, slices, partitions and Monte Carlo runs.
//!
//! Floats are written with 17 significant digits, so every value parses back
//! to the same bits. Non-finite values become `null` in JSON and `inf`/`nan`
//! in CSV. Nodes and lines are written with their original ids and
//! orientation.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::exact1d::ExactRate;
use crate::geometry::Polygon;
use crate::grid::DcFlowMatrices;
use crate::montecarlo::{McEstimate, SlopeFit};
use crate::rates::{DecayRateReport, RateMin};
use crate::region::{CapacityRegion, RegionKind, RegionParams, RiskPartition, Slice2D};

/// Maps internal indices back to the ids and orientation of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    /// Original id of each internal node.
    pub nodes: Vec<u64>,
    /// Original `(from, to)` of each internal line.
    pub lines: Vec<(u64, u64)>,
    /// −1 where the original orientation is reversed.
    pub line_sign: Vec<f64>,
}

impl Labels {
    /// Internal numbering used as is.
    pub fn identity(flow: &DcFlowMatrices) -> Self {
        let net = flow.network();
        Self {
            nodes: (0..net.node_count() as u64).collect(),
            lines: net
                .lines()
                .iter()
                .map(|l| (l.from as u64, l.to as u64))
                .collect(),
            line_sign: vec![1.0; net.line_count()],
        }
    }
}

/// Serializes as a JSON number with 17 significant digits.
struct Num(f64);

impl Serialize for Num {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            RawValue::from_string(sci(self.0))
                .expect("formatted floats are valid JSON")
                .serialize(s)
        } else {
            s.serialize_none()
        }
    }
}

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV float with 17 significant digits.
pub fn csv_float(x: f64) -> String {
    if x.is_finite() {
        sci(x)
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("export types always serialize");
    text.push('\n');
    text
}

#[derive(Serialize)]
struct LineOut {
    from: u64,
    to: u64,
    nu: Num,
    psi_plus: Num,
    psi_minus: Num,
    alpha: Num,
    psi_alpha: Num,
    sigma2: Num,
    variance: Num,
}

#[derive(Serialize)]
struct LineRef {
    from: u64,
    to: u64,
}

#[derive(Serialize)]
struct RateOut {
    value: Num,
    argmin: Vec<LineRef>,
}

#[derive(Serialize)]
struct TaylorOut {
    tau0: Num,
    value: Num,
}

#[derive(Serialize)]
struct ReportOut {
    lines: Vec<LineOut>,
    excluded: Vec<LineRef>,
    current: RateOut,
    lower_bound: RateOut,
    taylor: Option<TaylorOut>,
}

fn line_ref(labels: &Labels, line: usize) -> LineRef {
    let (from, to) = labels.lines[line];
    LineRef { from, to }
}

fn rate_out(labels: &Labels, rate: &RateMin) -> RateOut {
    RateOut {
        value: Num(rate.value),
        argmin: rate.argmin.iter().map(|&l| line_ref(labels, l)).collect(),
    }
}

pub fn report_json(report: &DecayRateReport, labels: &Labels) -> String {
    let lines = report
        .lines
        .iter()
        .map(|r| {
            let (from, to) = labels.lines[r.line];
            let flip = labels.line_sign[r.line] < 0.0;
            let (plus, minus) = if flip {
                (r.psi_minus, r.psi_plus)
            } else {
                (r.psi_plus, r.psi_minus)
            };
            LineOut {
                from,
                to,
                nu: Num(labels.line_sign[r.line] * r.nu),
                psi_plus: Num(plus),
                psi_minus: Num(minus),
                alpha: Num(r.alpha),
                psi_alpha: Num(r.psi_alpha),
                sigma2: Num(r.sigma2),
                variance: Num(r.variance),
            }
        })
        .collect();
    to_json(&ReportOut {
        lines,
        excluded: report
            .excluded
            .iter()
            .map(|&l| line_ref(labels, l))
            .collect(),
        current: rate_out(labels, &report.current),
        lower_bound: rate_out(labels, &report.lower_bound),
        taylor: report.taylor.map(|(tau0, value)| TaylorOut {
            tau0: Num(tau0),
            value: Num(value),
        }),
    })
}

/// Per-line table; unmonitored or noise-free lines are omitted.
pub fn report_csv(report: &DecayRateReport, labels: &Labels) -> String {
    let mut out = String::from("from,to,nu,psi_plus,psi_minus,alpha,psi_alpha,sigma2,variance\n");
    for r in &report.lines {
        let (from, to) = labels.lines[r.line];
        let sign = labels.line_sign[r.line];
        let (plus, minus) = if sign < 0.0 {
            (r.psi_minus, r.psi_plus)
        } else {
            (r.psi_plus, r.psi_minus)
        };
        let values = [
            sign * r.nu,
            plus,
            minus,
            r.alpha,
            r.psi_alpha,
            r.sigma2,
            r.variance,
        ];
        let row: Vec<String> = values.iter().map(|&x| csv_float(x)).collect();
        let _ = writeln!(out, "{from},{to},{}", row.join(","));
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundIn {
    from: u64,
    to: u64,
    bound: f64,
}

#[derive(Serialize)]
struct BoundOut {
    from: u64,
    to: u64,
    bound: Num,
}

#[derive(Serialize)]
struct RegionOut {
    kind: &'static str,
    epsilon: Num,
    p: Num,
    horizon: Num,
    tau0: Option<Num>,
    lines: Vec<BoundOut>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionIn {
    kind: String,
    epsilon: f64,
    p: f64,
    horizon: f64,
    tau0: Option<f64>,
    lines: Vec<BoundIn>,
}

fn region_out(region: &CapacityRegion, labels: &Labels) -> RegionOut {
    let lines = region
        .bounds
        .iter()
        .enumerate()
        .map(|(l, &bound)| {
            let (from, to) = labels.lines[l];
            BoundOut {
                from,
                to,
                bound: Num(bound),
            }
        })
        .collect();
    let params = region.params;
    RegionOut {
        kind: region.kind.as_str(),
        epsilon: Num(params.epsilon),
        p: Num(params.p),
        horizon: Num(params.horizon),
        tau0: params.tau0.map(Num),
        lines,
    }
}

pub fn region_json(region: &CapacityRegion, labels: &Labels) -> String {
    to_json(&region_out(region, labels))
}

/// Several regions as a JSON array.
pub fn regions_json(regions: &[CapacityRegion], labels: &Labels) -> String {
    let items: Vec<RegionOut> = regions.iter().map(|r| region_out(r, labels)).collect();
    to_json(&items)
}

/// Read back a region written by [`region_json`]. Bounds keep the file's line order.
pub fn parse_region_json(text: &str) -> Result<CapacityRegion> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let parsed: RegionIn = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    let kind = RegionKind::from_str(&parsed.kind).map_err(|_| Error::Schema {
        path: "kind".into(),
        message: format!("unknown region kind '{}'", parsed.kind),
    })?;
    Ok(CapacityRegion {
        kind,
        bounds: parsed.lines.iter().map(|l| l.bound).collect(),
        params: RegionParams {
            epsilon: parsed.epsilon,
            p: parsed.p,
            horizon: parsed.horizon,
            tau0: parsed.tau0,
        },
    })
}

pub fn region_csv(region: &CapacityRegion, labels: &Labels) -> String {
    let mut out = String::from("from,to,bound\n");
    for (l, &b) in region.bounds.iter().enumerate() {
        let (from, to) = labels.lines[l];
        let _ = writeln!(out, "{from},{to},{}", csv_float(b));
    }
    out
}

pub fn regions_csv(regions: &[CapacityRegion], labels: &Labels) -> String {
    let mut out = String::from("kind,from,to,bound\n");
    for region in regions {
        for (l, &b) in region.bounds.iter().enumerate() {
            let (from, to) = labels.lines[l];
            let _ = writeln!(out, "{},{from},{to},{}", region.kind, csv_float(b));
        }
    }
    out
}

fn vertices(poly: &Polygon) -> Vec<[Num; 2]> {
    poly.vertices
        .iter()
        .map(|p| [Num(p[0]), Num(p[1])])
        .collect()
}

#[derive(Serialize)]
struct SliceOut {
    kind: &'static str,
    free: [u64; 2],
    area: Num,
    vertices: Vec<[Num; 2]>,
}

pub fn slice_json(slice: &Slice2D, labels: &Labels) -> String {
    to_json(&SliceOut {
        kind: slice.kind.as_str(),
        free: [labels.nodes[slice.free.0], labels.nodes[slice.free.1]],
        area: Num(slice.polygon.area()),
        vertices: vertices(&slice.polygon),
    })
}

/// `u,v` rows, counterclockwise, with the first vertex repeated at the end.
pub fn slice_csv(slice: &Slice2D) -> String {
    let mut out = String::from("u,v\n");
    let verts = &slice.polygon.vertices;
    for p in verts.iter().chain(verts.first()) {
        let _ = writeln!(out, "{},{}", csv_float(p[0]), csv_float(p[1]));
    }
    out
}

/// Several slices in one CSV, one `kind` per row.
pub fn slices_csv(slices: &[Slice2D]) -> String {
    let mut out = String::from("kind,u,v\n");
    for s in slices {
        let verts = &s.polygon.vertices;
        for p in verts.iter().chain(verts.first()) {
            let _ = writeln!(out, "{},{},{}", s.kind, csv_float(p[0]), csv_float(p[1]));
        }
    }
    out
}

pub fn slices_json(slices: &[Slice2D], labels: &Labels) -> String {
    let items: Vec<SliceOut> = slices
        .iter()
        .map(|s| SliceOut {
            kind: s.kind.as_str(),
            free: [labels.nodes[s.free.0], labels.nodes[s.free.1]],
            area: Num(s.polygon.area()),
            vertices: vertices(&s.polygon),
        })
        .collect();
    to_json(&items)
}

#[derive(Serialize)]
struct PartitionRegionOut {
    lines: Vec<LineRef>,
    cells: usize,
    area: Num,
    centroid: [Num; 2],
    outline: Vec<Vec<[Num; 2]>>,
}

#[derive(Serialize)]
struct PartitionOut {
    free: [u64; 2],
    bbox: [Num; 4],
    resolution: usize,
    central: Option<usize>,
    regions: Vec<PartitionRegionOut>,
}

pub fn partition_json(partition: &RiskPartition, labels: &Labels) -> String {
    let b = partition.bbox;
    to_json(&PartitionOut {
        free: [
            labels.nodes[partition.free.0],
            labels.nodes[partition.free.1],
        ],
        bbox: [Num(b.u_min), Num(b.u_max), Num(b.v_min), Num(b.v_max)],
        resolution: partition.resolution,
        central: partition.central,
        regions: partition
            .regions
            .iter()
            .map(|r| PartitionRegionOut {
                lines: r.lines.iter().map(|&l| line_ref(labels, l)).collect(),
                cells: r.cells,
                area: Num(r.area),
                centroid: [Num(r.centroid[0]), Num(r.centroid[1])],
                outline: r.outline.iter().map(vertices).collect(),
            })
            .collect(),
    })
}

/// One row per outline vertex; `lines` lists the region's labels as `from-to`
/// joined by `;`. Each loop is closed by repeating its first vertex.
pub fn partition_csv(partition: &RiskPartition, labels: &Labels) -> String {
    let mut out = String::from("region,lines,loop,u,v\n");
    for (k, r) in partition.regions.iter().enumerate() {
        let names: Vec<String> = r
            .lines
            .iter()
            .map(|&l| {
                let (f, t) = labels.lines[l];
                format!("{f}-{t}")
            })
            .collect();
        let names = names.join(";");
        for (j, lp) in r.outline.iter().enumerate() {
            for p in lp.vertices.iter().chain(lp.vertices.first()) {
                let _ = writeln!(
                    out,
                    "{k},{names},{j},{},{}",
                    csv_float(p[0]),
                    csv_float(p[1])
                );
            }
        }
    }
    out
}

#[derive(Serialize)]
struct EstimateOut {
    epsilon: Num,
    hits: u64,
    replicates: u64,
    p_hat: Num,
    ci_low: Num,
    ci_high: Num,
}

fn estimate_out(e: &McEstimate) -> EstimateOut {
    EstimateOut {
        epsilon: Num(e.epsilon),
        hits: e.hits,
        replicates: e.replicates,
        p_hat: Num(e.p_hat),
        ci_low: Num(e.ci_low),
        ci_high: Num(e.ci_high),
    }
}

#[derive(Serialize)]
struct McOut {
    kind: String,
    seed: u64,
    estimates: Vec<EstimateOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<FitOut>,
}

#[derive(Serialize)]
struct FitOut {
    slope: Num,
    intercept: Num,
    residual: Num,
}

/// Monte Carlo estimates, with the decay-slope fit when one was made.
pub fn mc_json(kind: &str, seed: u64, estimates: &[McEstimate], fit: Option<&SlopeFit>) -> String {
    to_json(&McOut {
        kind: kind.to_string(),
        seed,
        estimates: estimates.iter().map(estimate_out).collect(),
        fit: fit.map(|f| FitOut {
            slope: Num(f.slope),
            intercept: Num(f.intercept),
            residual: Num(f.residual),
        }),
    })
}

pub fn mc_csv(estimates: &[McEstimate]) -> String {
    let mut out = String::from("epsilon,hits,replicates,p_hat,ci_low,ci_high\n");
    for e in estimates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_float(e.epsilon),
            e.hits,
            e.replicates,
            csv_float(e.p_hat),
            csv_float(e.ci_low),
            csv_float(e.ci_high)
        );
    }
    out
}

#[derive(Serialize)]
struct ExactOut {
    rate: Num,
    current_rate: Num,
    slope: Num,
    curvature: Num,
    method: &'static str,
}

pub fn exact_json(rate: &ExactRate, current_rate: f64) -> String {
    to_json(&ExactOut {
        rate: Num(rate.rate),
        current_rate: Num(current_rate),
        slope: Num(rate.slope),
        curvature: Num(rate.curvature),
        method: rate.method.as_str(),
    })
}
