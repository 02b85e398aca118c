//! Read-only subset of the MATPOWER case format.
//!
//! Only `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch` are read, and of
//! those only the columns a DC model needs. Everything else is skipped and
//! reported in [`MatpowerCase::warnings`].

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};

use super::native::{
    AnalysisDefaults, LineSpec, NetworkDocument, NodeSpec, RatingKeyword, RatingRule, RatingSpec,
    ZeroFlowPolicy, FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bus {
    pub id: u64,
    /// MATPOWER bus type: 1 PQ, 2 PV, 3 reference, 4 isolated.
    pub kind: u8,
    /// Real power demand in MW.
    pub pd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Generator {
    pub bus: u64,
    /// Real power output in MW.
    pub pg: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: u64,
    pub to: u64,
    /// Series reactance in per unit.
    pub reactance: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn susceptance(&self) -> f64 {
        1.0 / self.reactance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatpowerCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub warnings: Vec<String>,
}

impl MatpowerCase {
    /// Tables only, ignoring warnings.
    pub fn same_tables(&self, other: &Self) -> bool {
        self.base_mva == other.base_mva
            && self.buses == other.buses
            && self.generators == other.generators
            && self.branches == other.branches
    }

    pub fn reference_bus(&self) -> Result<u64> {
        let refs: Vec<u64> = self
            .buses
            .iter()
            .filter(|b| b.kind == 3)
            .map(|b| b.id)
            .collect();
        match refs.as_slice() {
            [id] => Ok(*id),
            _ => Err(Error::Role(format!(
                "expected exactly one reference bus, found {}",
                refs.len()
            ))),
        }
    }

    /// Net injection `(Pg − Pd) / baseMVA` per bus, in per unit.
    pub fn net_injections(&self) -> BTreeMap<u64, f64> {
        let mut out: BTreeMap<u64, f64> = self.buses.iter().map(|b| (b.id, -b.pd)).collect();
        for g in self.generators.iter().filter(|g| g.in_service) {
            *out.entry(g.bus).or_default() += g.pg;
        }
        out.values_mut().for_each(|p| *p /= self.base_mva);
        out
    }
}

/// OU and thermal parameters used when converting a case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionParams {
    pub gamma: f64,
    pub vol: f64,
    pub tau: f64,
    pub zero_flow: ZeroFlowPolicy,
    pub defaults: AnalysisDefaults,
}

impl Default for ConversionParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            vol: 1.0,
            tau: 0.5,
            zero_flow: ZeroFlowPolicy::Error,
            defaults: AnalysisDefaults::default(),
        }
    }
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Table {
    Bus,
    Gen,
    Branch,
    Skipped,
}

struct Cell {
    value: f64,
    line: usize,
    column: usize,
}

fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_string = !in_string,
            '%' | '#' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Split matrix text into numeric cells; returns true once `]` closes the matrix.
fn scan_matrix(
    text: &str,
    line_no: usize,
    offset: usize,
    rows: &mut Vec<Vec<Cell>>,
    current: &mut Vec<Cell>,
) -> Result<bool> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == ']' {
            if !current.is_empty() {
                rows.push(std::mem::take(current));
            }
            let rest = text[i + 1..].trim();
            if !rest.is_empty() && rest != ";" {
                return Err(parse_error(
                    line_no,
                    offset + i + 2,
                    format!("unexpected '{rest}' after matrix"),
                ));
            }
            return Ok(true);
        }
        if c == ';' {
            if !current.is_empty() {
                rows.push(std::mem::take(current));
            }
            i += 1;
            continue;
        }
        if c.is_whitespace() || c == ',' {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && !matches!(bytes[i] as char, ' ' | '\t' | '\r' | ',' | ';' | ']') {
            i += 1;
        }
        let token = &text[start..i];
        let value = match token {
            "Inf" | "inf" => f64::INFINITY,
            "-Inf" | "-inf" => f64::NEG_INFINITY,
            _ => token.parse::<f64>().map_err(|_| {
                parse_error(
                    line_no,
                    offset + start + 1,
                    format!("expected a number, found '{token}'"),
                )
            })?,
        };
        current.push(Cell {
            value,
            line: line_no,
            column: offset + start + 1,
        });
    }
    // A newline also ends a matrix row.
    if !current.is_empty() {
        rows.push(std::mem::take(current));
    }
    Ok(false)
}

fn require_columns(rows: &[Vec<Cell>], min: usize, name: &str) -> Result<()> {
    for row in rows {
        if row.len() < min {
            let last = row.last().expect("rows are never empty");
            return Err(parse_error(
                last.line,
                last.column,
                format!("{name} row has {} columns, need at least {min}", row.len()),
            ));
        }
    }
    Ok(())
}

fn integer(cell: &Cell, what: &str) -> Result<u64> {
    if cell.value.fract() == 0.0 && cell.value >= 0.0 && cell.value < 2f64.powi(53) {
        Ok(cell.value as u64)
    } else {
        Err(parse_error(
            cell.line,
            cell.column,
            format!(
                "{what} must be a non-negative integer, found {}",
                cell.value
            ),
        ))
    }
}

/// Parse the body of a MATPOWER case function.
pub fn parse_matpower(text: &str) -> Result<MatpowerCase> {
    let mut warnings = Vec::new();
    let mut base_mva = None;
    let mut tables: HashMap<&'static str, Vec<Vec<Cell>>> = HashMap::new();
    let mut open: Option<(Table, Vec<Vec<Cell>>, Vec<Cell>)> = None;
    let mut skipping_cell = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = strip_comment(raw);
        if let Some((table, rows, current)) = open.as_mut() {
            let done = if *table == Table::Skipped {
                body.contains(']')
            } else {
                scan_matrix(body, line_no, 0, rows, current)?
            };
            if done {
                let (table, rows, _) = open.take().unwrap();
                let name = match table {
                    Table::Bus => "bus",
                    Table::Gen => "gen",
                    Table::Branch => "branch",
                    Table::Skipped => continue,
                };
                if tables.insert(name, rows).is_some() {
                    return Err(parse_error(line_no, 1, format!("mpc.{name} defined twice")));
                }
            }
            continue;
        }
        if skipping_cell {
            skipping_cell = !body.contains('}');
            continue;
        }
        let trimmed = body.trim();
        if trimmed.is_empty() || trimmed.starts_with("function") || trimmed == "end" {
            continue;
        }
        let indent = body.len() - body.trim_start().len();
        let Some((lhs, rhs)) = trimmed.split_once('=') else {
            return Err(parse_error(
                line_no,
                indent + 1,
                format!("unexpected statement '{trimmed}'"),
            ));
        };
        let lhs = lhs.trim();
        let Some(field) = lhs.strip_prefix("mpc.") else {
            return Err(parse_error(
                line_no,
                indent + 1,
                format!("expected an mpc field, found '{lhs}'"),
            ));
        };
        let rhs_offset = body.find('=').unwrap() + 1;
        let rhs_trim = rhs.trim_start();
        let rhs_col = rhs_offset + (rhs.len() - rhs_trim.len());
        let table = match field {
            "bus" => Some(Table::Bus),
            "gen" => Some(Table::Gen),
            "branch" => Some(Table::Branch),
            "baseMVA" => {
                let value = rhs_trim.trim_end().trim_end_matches(';').trim();
                let parsed = value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v > 0.0 && v.is_finite());
                base_mva = Some(parsed.ok_or_else(|| {
                    parse_error(
                        line_no,
                        rhs_col + 1,
                        format!("baseMVA must be a positive number, found '{value}'"),
                    )
                })?);
                None
            }
            _ => {
                warnings.push(format!(
                    "line {line_no}: unsupported field mpc.{field} ignored"
                ));
                if rhs_trim.starts_with('[') && !rhs_trim.contains(']') {
                    open = Some((Table::Skipped, Vec::new(), Vec::new()));
                } else if rhs_trim.starts_with('{') && !rhs_trim.contains('}') {
                    skipping_cell = true;
                }
                None
            }
        };
        if let Some(table) = table {
            let Some(inner) = rhs_trim.strip_prefix('[') else {
                return Err(parse_error(
                    line_no,
                    rhs_col + 1,
                    format!("mpc.{field} must be a matrix"),
                ));
            };
            let mut rows = Vec::new();
            let mut current = Vec::new();
            let done = scan_matrix(inner, line_no, rhs_col + 1, &mut rows, &mut current)?;
            open = Some((table, rows, current));
            if done {
                let (_, rows, _) = open.take().unwrap();
                if tables.insert(field_name(table), rows).is_some() {
                    return Err(parse_error(
                        line_no,
                        1,
                        format!("mpc.{field} defined twice"),
                    ));
                }
            }
        }
    }
    if let Some((table, _, _)) = open {
        let last = text.lines().count();
        let name = if table == Table::Skipped {
            "matrix"
        } else {
            field_name(table)
        };
        return Err(parse_error(last, 1, format!("unterminated {name}")));
    }
    let end = text.lines().count().max(1);
    let base_mva = base_mva.ok_or_else(|| parse_error(end, 1, "missing mpc.baseMVA"))?;
    let take = |tables: &mut HashMap<&str, Vec<Vec<Cell>>>, name: &str| {
        tables
            .remove(name)
            .ok_or_else(|| parse_error(end, 1, format!("missing mpc.{name}")))
    };
    let bus_rows = take(&mut tables, "bus")?;
    let gen_rows = take(&mut tables, "gen")?;
    let branch_rows = take(&mut tables, "branch")?;
    require_columns(&bus_rows, 3, "bus")?;
    require_columns(&gen_rows, 2, "gen")?;
    require_columns(&branch_rows, 4, "branch")?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut known = HashSet::new();
    for row in &bus_rows {
        let id = integer(&row[0], "bus number")?;
        if !known.insert(id) {
            return Err(parse_error(
                row[0].line,
                row[0].column,
                format!("duplicate bus {id}"),
            ));
        }
        let kind = integer(&row[1], "bus type")?;
        if !(1..=4).contains(&kind) {
            return Err(parse_error(
                row[1].line,
                row[1].column,
                format!("unknown bus type {kind}"),
            ));
        }
        buses.push(Bus {
            id,
            kind: kind as u8,
            pd: row[2].value,
        });
    }
    let bus_ref = |cell: &Cell| -> Result<u64> {
        let id = integer(cell, "bus number")?;
        if known.contains(&id) {
            Ok(id)
        } else {
            Err(parse_error(
                cell.line,
                cell.column,
                format!("unknown bus {id}"),
            ))
        }
    };

    let mut generators = Vec::with_capacity(gen_rows.len());
    for row in &gen_rows {
        generators.push(Generator {
            bus: bus_ref(&row[0])?,
            pg: row[1].value,
            in_service: row.get(7).is_none_or(|c| c.value > 0.0),
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for row in &branch_rows {
        let (from, to) = (bus_ref(&row[0])?, bus_ref(&row[1])?);
        let x = &row[3];
        if x.value == 0.0 || !x.value.is_finite() {
            return Err(parse_error(
                x.line,
                x.column,
                format!("zero reactance on branch {from}-{to}"),
            ));
        }
        if let Some(ratio) = row.get(8).filter(|c| c.value != 0.0 && c.value != 1.0) {
            warnings.push(format!(
                "line {}: tap ratio {} on branch {from}-{to} ignored",
                ratio.line, ratio.value
            ));
        }
        if let Some(shift) = row.get(9).filter(|c| c.value != 0.0) {
            warnings.push(format!(
                "line {}: phase shift {} on branch {from}-{to} ignored",
                shift.line, shift.value
            ));
        }
        branches.push(Branch {
            from,
            to,
            reactance: x.value,
            in_service: row.get(10).is_none_or(|c| c.value > 0.0),
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(MatpowerCase {
        base_mva,
        buses,
        generators,
        branches,
        warnings,
    })
}

fn field_name(table: Table) -> &'static str {
    match table {
        Table::Bus => "bus",
        Table::Gen => "gen",
        Table::Branch => "branch",
        Table::Skipped => "skipped",
    }
}

/// Turn a case into a native document with ratings `k · |base flow|`.
///
/// The reference bus becomes the slack. Stochastic buses get an OU injection
/// whose mean is the bus's net injection; all other buses keep their net
/// injection as a deterministic value. Parallel branches are merged.
pub fn apply_imax_rule(
    case: &MatpowerCase,
    k: f64,
    stochastic: &[u64],
    controllable: &[u64],
    params: &ConversionParams,
) -> Result<NetworkDocument> {
    if !(k > 1.0 && k.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "K must be greater than 1, got {k}"
        )));
    }
    let slack = case.reference_bus()?;
    let injections = case.net_injections();
    for id in stochastic.iter().chain(controllable) {
        if !injections.contains_key(id) {
            return Err(Error::InvalidParameter(format!("unknown bus {id}")));
        }
        if *id == slack {
            return Err(Error::Role(format!("bus {id} is the reference bus")));
        }
    }
    if let Some(id) = controllable.iter().find(|id| stochastic.contains(id)) {
        return Err(Error::Role(format!(
            "bus {id} cannot be both stochastic and controllable"
        )));
    }
    let mut nodes = Vec::with_capacity(case.buses.len());
    for bus in &case.buses {
        let p = injections[&bus.id];
        nodes.push(if bus.id == slack {
            NodeSpec::Slack { id: bus.id }
        } else if stochastic.contains(&bus.id) {
            NodeSpec::Stochastic {
                id: bus.id,
                gamma: params.gamma,
                vol: params.vol,
                mean: p,
            }
        } else {
            NodeSpec::Deterministic {
                id: bus.id,
                injection: p,
            }
        });
    }

    let mut merged: BTreeMap<(u64, u64), (u64, u64, f64)> = BTreeMap::new();
    for br in case.branches.iter().filter(|b| b.in_service) {
        let key = (br.from.min(br.to), br.from.max(br.to));
        merged
            .entry(key)
            .and_modify(|e| {
                log::warn!("parallel branches {}-{} merged", br.from, br.to);
                e.2 += br.susceptance();
            })
            .or_insert((br.from, br.to, br.susceptance()));
    }
    // Keep the case's branch order for the first occurrence of each pair.
    let mut seen = HashSet::new();
    let lines: Vec<LineSpec> = case
        .branches
        .iter()
        .filter(|b| b.in_service)
        .filter(|b| seen.insert((b.from.min(b.to), b.from.max(b.to))))
        .map(|b| {
            let (from, to, susceptance) = merged[&(b.from.min(b.to), b.from.max(b.to))];
            LineSpec {
                from,
                to,
                susceptance,
                rating: RatingSpec::Keyword(RatingKeyword::Auto),
                tau: Some(params.tau),
            }
        })
        .collect();

    let mut doc = NetworkDocument {
        version: FORMAT_VERSION,
        name: None,
        nodes,
        lines,
        controllable: (!controllable.is_empty()).then(|| controllable.to_vec()),
        rating_rule: Some(RatingRule {
            k,
            zero_flow: params.zero_flow,
            base: None,
        }),
        defaults: params.defaults,
    };
    let ratings = doc.build()?.ratings();
    for (idx, line) in doc.lines.iter_mut().enumerate() {
        let r = ratings[&idx];
        line.rating = if r.is_finite() {
            RatingSpec::Value(r)
        } else {
            RatingSpec::Keyword(RatingKeyword::Unlimited)
        };
    }
    doc.rating_rule = None;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "function mpc = tiny
% a comment
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0 0;
    2 1 50 0;
    3 2 10 0;
];
mpc.gen = [
    1 0 0 0 0 0 0 1;
    3 70 0 0 0 0 0 1;
];
mpc.branch = [1 2 0.01 0.1; 2 3 0 0.2;
    1 3 0 0.25];
mpc.bus_name = {
    'one';
};
";

    #[test]
    fn tiny_case() {
        let case = parse_matpower(TINY).unwrap();
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.buses.len(), 3);
        assert_eq!(case.generators.len(), 2);
        assert_eq!(case.branches.len(), 3);
        assert_eq!(case.branches[1].susceptance(), 5.0);
        assert_eq!(case.warnings.len(), 2);
        let inj = case.net_injections();
        assert_eq!(inj[&2], -0.5);
        assert_eq!(inj[&3], 0.6);
    }

    #[test]
    fn zero_reactance() {
        let text = TINY.replace("2 3 0 0.2", "2 3 0 0");
        match parse_matpower(&text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 14);
                assert!(message.contains("zero reactance"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_has_position() {
        let text = TINY.replace("2 1 50 0", "2 1 5x0 0");
        assert_eq!(
            parse_matpower(&text).unwrap_err(),
            Error::Parse {
                line: 7,
                column: 9,
                message: "expected a number, found '5x0'".into()
            }
        );
    }

    #[test]
    fn unknown_bus_reference() {
        let text = TINY.replace("1 3 0 0.25", "1 4 0 0.25");
        assert!(matches!(
            parse_matpower(&text),
            Err(Error::Parse { line: 15, .. })
        ));
    }

    #[test]
    fn conversion_normalizes_base_flows() {
        let case = parse_matpower(TINY).unwrap();
        let doc = apply_imax_rule(&case, 2.0, &[2], &[3], &ConversionParams::default()).unwrap();
        let net = doc.build().unwrap();
        let op = net.flow.operating_point(&net.mu, &net.mu_d).unwrap();
        for nu in op.nu.iter() {
            assert!((nu.abs() - 0.5).abs() < 1e-12);
        }
        assert!(apply_imax_rule(&case, 1.0, &[2], &[], &ConversionParams::default()).is_err());
    }
}
