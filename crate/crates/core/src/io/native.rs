//! Versioned JSON network documents.
//!
//! ```json
//! {
//!   "version": 1,
//!   "nodes": [
//!     {"role": "slack", "id": 0},
//!     {"role": "stochastic", "id": 1, "gamma": 0.5, "vol": 1.0, "mean": 0.5},
//!     {"role": "deterministic", "id": 2, "injection": 0.1}
//!   ],
//!   "lines": [
//!     {"from": 0, "to": 1, "susceptance": 1.0, "rating": 1.0, "tau": 0.6},
//!     {"from": 1, "to": 2, "susceptance": 2.0, "rating": "auto"}
//!   ],
//!   "rating_rule": {"k": 1.5, "zero_flow": "error"},
//!   "defaults": {"epsilon": 0.1, "p": 1e-4, "horizon": 1.0, "tau0": 0.5}
//! }
//! ```
//!
//! Ratings are a number, `"auto"` (K times the absolute base flow, needs
//! `rating_rule`), or `"unlimited"` (the line is not monitored). A line
//! without `tau` takes `defaults.tau0`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DcFlowMatrices, GridNetwork, Line};
use crate::injections::OuModel;
use crate::rates::PsiContext;

pub const FORMAT_VERSION: u32 = 1;

/// Fallbacks for analysis parameters a document does not set.
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_P: f64 = 1e-4;
pub const DEFAULT_HORIZON: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase", deny_unknown_fields)]
pub enum NodeSpec {
    Slack {
        id: u64,
    },
    Stochastic {
        id: u64,
        gamma: f64,
        vol: f64,
        mean: f64,
    },
    Deterministic {
        id: u64,
        #[serde(default)]
        injection: f64,
    },
}

impl NodeSpec {
    pub fn id(&self) -> u64 {
        match *self {
            NodeSpec::Slack { id }
            | NodeSpec::Stochastic { id, .. }
            | NodeSpec::Deterministic { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingKeyword {
    Auto,
    Unlimited,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RatingSpec {
    Value(f64),
    Keyword(RatingKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: u64,
    pub to: u64,
    pub susceptance: f64,
    pub rating: RatingSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

/// What to do with an `"auto"` line whose base flow is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroFlowPolicy {
    #[default]
    Error,
    /// Treat the line as unmonitored.
    Unmonitored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseInjection {
    pub node: u64,
    pub injection: f64,
}

/// `rating = k · |base flow|` for lines rated `"auto"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingRule {
    pub k: f64,
    #[serde(default, skip_serializing_if = "is_default_policy")]
    pub zero_flow: ZeroFlowPolicy,
    /// Base injections; nodes not listed use their mean or injection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<BaseInjection>>,
}

fn is_default_policy(p: &ZeroFlowPolicy) -> bool {
    *p == ZeroFlowPolicy::Error
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
}

impl AnalysisDefaults {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub nodes: Vec<NodeSpec>,
    pub lines: Vec<LineSpec>,
    /// Deterministic nodes whose injections can be steered (default slice axes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controllable: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating_rule: Option<RatingRule>,
    #[serde(default, skip_serializing_if = "AnalysisDefaults::is_empty")]
    pub defaults: AnalysisDefaults,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Parse and validate a native document.
pub fn parse_native(text: &str) -> Result<NetworkDocument> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: NetworkDocument = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    doc.validate()?;
    Ok(doc)
}

impl NetworkDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("documents always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(schema(
                "version",
                format!(
                    "unsupported version {}, expected {FORMAT_VERSION}",
                    self.version
                ),
            ));
        }
        let slacks = self
            .nodes
            .iter()
            .filter(|n| matches!(n, NodeSpec::Slack { .. }))
            .count();
        if slacks != 1 {
            return Err(Error::Role(format!(
                "expected exactly one slack node, found {slacks}"
            )));
        }
        let mut seen = HashMap::new();
        for (k, node) in self.nodes.iter().enumerate() {
            if let Some(prev) = seen.insert(node.id(), k) {
                return Err(schema(
                    format!("nodes[{k}].id"),
                    format!("duplicate node id {} (also nodes[{prev}])", node.id()),
                ));
            }
            match *node {
                NodeSpec::Stochastic {
                    gamma, vol, mean, ..
                } => {
                    if !(gamma.is_finite() && gamma > 0.0) {
                        return Err(schema(format!("nodes[{k}].gamma"), "must be positive"));
                    }
                    if !(vol.is_finite() && vol > 0.0) {
                        return Err(schema(format!("nodes[{k}].vol"), "must be positive"));
                    }
                    if !mean.is_finite() {
                        return Err(schema(format!("nodes[{k}].mean"), "must be finite"));
                    }
                }
                NodeSpec::Deterministic { injection, .. } if !injection.is_finite() => {
                    return Err(schema(format!("nodes[{k}].injection"), "must be finite"));
                }
                _ => {}
            }
        }
        if !self
            .nodes
            .iter()
            .any(|n| matches!(n, NodeSpec::Stochastic { .. }))
        {
            return Err(Error::Role(
                "at least one stochastic node is required".into(),
            ));
        }
        let mut pairs = HashMap::new();
        for (k, line) in self.lines.iter().enumerate() {
            for (end, id) in [("from", line.from), ("to", line.to)] {
                if !seen.contains_key(&id) {
                    return Err(schema(
                        format!("lines[{k}].{end}"),
                        format!("unknown node {id}"),
                    ));
                }
            }
            if line.from == line.to {
                return Err(Error::Graph(format!(
                    "lines[{k}] is a self-loop at node {}",
                    line.from
                )));
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if let Some(prev) = pairs.insert(key, k) {
                return Err(Error::Graph(format!(
                    "lines[{k}] duplicates lines[{prev}] between nodes {} and {}",
                    key.0, key.1
                )));
            }
            if !(line.susceptance.is_finite() && line.susceptance > 0.0) {
                return Err(schema(
                    format!("lines[{k}].susceptance"),
                    "must be positive",
                ));
            }
            match line.rating {
                RatingSpec::Value(r) if !(r > 0.0) => {
                    return Err(schema(format!("lines[{k}].rating"), "must be positive"));
                }
                RatingSpec::Keyword(RatingKeyword::Auto) if self.rating_rule.is_none() => {
                    return Err(schema(
                        format!("lines[{k}].rating"),
                        "\"auto\" needs a rating_rule",
                    ));
                }
                _ => {}
            }
            match line.tau.or(self.defaults.tau0) {
                Some(t) if t.is_finite() && t > 0.0 => {}
                Some(_) => return Err(schema(format!("lines[{k}].tau"), "must be positive")),
                None => {
                    return Err(schema(
                        format!("lines[{k}].tau"),
                        "missing and no defaults.tau0 to fall back on",
                    ))
                }
            }
        }
        if let Some(rule) = &self.rating_rule {
            if !(rule.k > 1.0 && rule.k.is_finite()) {
                return Err(schema("rating_rule.k", "must be greater than 1"));
            }
            for (k, b) in rule.base.iter().flatten().enumerate() {
                if !seen.contains_key(&b.node) {
                    return Err(schema(
                        format!("rating_rule.base[{k}].node"),
                        format!("unknown node {}", b.node),
                    ));
                }
            }
        }
        if let Some(ctrl) = &self.controllable {
            for (k, id) in ctrl.iter().enumerate() {
                match seen.get(id).map(|&i| &self.nodes[i]) {
                    Some(NodeSpec::Deterministic { .. }) => {}
                    Some(_) => {
                        return Err(Error::Role(format!(
                            "controllable node {id} must be deterministic"
                        )))
                    }
                    None => {
                        return Err(schema(
                            format!("controllable[{k}]"),
                            format!("unknown node {id}"),
                        ))
                    }
                }
            }
        }
        let d = &self.defaults;
        if d.epsilon.is_some_and(|e| !(e > 0.0)) {
            return Err(schema("defaults.epsilon", "must be positive"));
        }
        if d.p.is_some_and(|p| !(p > 0.0 && p < 1.0)) {
            return Err(schema("defaults.p", "must lie in (0, 1)"));
        }
        if d.horizon.is_some_and(|t| !(t > 0.0)) {
            return Err(schema("defaults.horizon", "must be positive"));
        }
        Ok(())
    }

    /// Resolve roles, ratings and orientation into an analysable network.
    pub fn build(&self) -> Result<Network> {
        self.validate()?;
        let mut order: Vec<usize> = Vec::with_capacity(self.nodes.len());
        let rank = |n: &NodeSpec| match n {
            NodeSpec::Slack { .. } => 0,
            NodeSpec::Stochastic { .. } => 1,
            NodeSpec::Deterministic { .. } => 2,
        };
        for pass in 0..3 {
            order.extend((0..self.nodes.len()).filter(|&k| rank(&self.nodes[k]) == pass));
        }
        let node_ids: Vec<u64> = order.iter().map(|&k| self.nodes[k].id()).collect();
        let internal: HashMap<u64, usize> = node_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();

        let (mut gamma, mut vol, mut mean, mut mu_d) = (vec![], vec![], vec![], vec![]);
        for &k in &order {
            match self.nodes[k] {
                NodeSpec::Stochastic {
                    gamma: g,
                    vol: l,
                    mean: m,
                    ..
                } => {
                    gamma.push(g);
                    vol.push(l);
                    mean.push(m);
                }
                NodeSpec::Deterministic { injection, .. } => mu_d.push(injection),
                NodeSpec::Slack { .. } => {}
            }
        }
        let m = mean.len();

        let mut entries: Vec<(usize, usize, usize)> = self
            .lines
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let (a, b) = (internal[&l.from], internal[&l.to]);
                (a.min(b), a.max(b), k)
            })
            .collect();
        entries.sort();
        let tau_default = self.defaults.tau0;
        let lines: Vec<Line> = entries
            .iter()
            .map(|&(i, j, k)| {
                let spec = &self.lines[k];
                let rating = match spec.rating {
                    RatingSpec::Value(r) => r,
                    RatingSpec::Keyword(RatingKeyword::Unlimited) => f64::INFINITY,
                    RatingSpec::Keyword(RatingKeyword::Auto) => 1.0,
                };
                Line::new(
                    i,
                    j,
                    spec.susceptance,
                    rating,
                    spec.tau.or(tau_default).unwrap(),
                )
            })
            .collect();
        let grid = GridNetwork::new(node_ids.len(), lines)?;
        let mut flow = DcFlowMatrices::build(&grid, m)?;

        let auto: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, &(_, _, k))| {
                self.lines[k].rating == RatingSpec::Keyword(RatingKeyword::Auto)
            })
            .map(|(idx, _)| idx)
            .collect();
        if !auto.is_empty() {
            let rule = self.rating_rule.as_ref().expect("validated");
            let mut base = nalgebra::DVector::zeros(node_ids.len());
            for (i, x) in mean.iter().chain(&mu_d).enumerate() {
                base[i + 1] = *x;
            }
            for b in rule.base.iter().flatten() {
                base[internal[&b.node]] = b.injection;
            }
            let flows = flow.branch_currents(&base);
            let scale = flows.amax();
            let mut ratings: Vec<f64> = grid.lines().iter().map(|l| l.rating).collect();
            for &l in &auto {
                let f = flows[l].abs();
                if f <= 1e-12 * scale || f == 0.0 {
                    match rule.zero_flow {
                        ZeroFlowPolicy::Error => {
                            let k = entries[l].2;
                            log::warn!(
                                "line {}-{} carries no base flow",
                                self.lines[k].from,
                                self.lines[k].to
                            );
                            return Err(Error::ZeroBaseFlow { line: k });
                        }
                        ZeroFlowPolicy::Unmonitored => ratings[l] = f64::INFINITY,
                    }
                } else {
                    ratings[l] = rule.k * f;
                }
            }
            flow = DcFlowMatrices::build(&grid.with_ratings(&ratings)?, m)?;
        }

        let line_labels = entries
            .iter()
            .map(|&(_, _, k)| (self.lines[k].from, self.lines[k].to))
            .collect();
        let line_sign = entries
            .iter()
            .map(|&(i, _, k)| {
                if internal[&self.lines[k].from] == i {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        Ok(Network {
            document: self.clone(),
            flow,
            node_ids,
            line_labels,
            line_source: entries.iter().map(|e| e.2).collect(),
            line_sign,
            gamma,
            vol,
            mu: mean,
            mu_d,
        })
    }
}

/// A document resolved into internal numbering, ready for analysis.
///
/// Internally the slack is node 0, stochastic nodes follow in document order,
/// then deterministic nodes. Lines are oriented from the lower to the higher
/// internal index and sorted.
#[derive(Debug, Clone)]
pub struct Network {
    pub document: NetworkDocument,
    pub flow: DcFlowMatrices,
    /// Original node id of each internal node.
    pub node_ids: Vec<u64>,
    /// `(from, to)` of each internal line as written in the document.
    pub line_labels: Vec<(u64, u64)>,
    /// Index into `document.lines` of each internal line.
    pub line_source: Vec<usize>,
    /// +1 when the document orientation matches the internal one, −1 otherwise.
    pub line_sign: Vec<f64>,
    pub gamma: Vec<f64>,
    pub vol: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu_d: Vec<f64>,
}

impl Network {
    pub fn stochastic_count(&self) -> usize {
        self.mu.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.document.defaults.epsilon.unwrap_or(DEFAULT_EPSILON)
    }

    pub fn p(&self) -> f64 {
        self.document.defaults.p.unwrap_or(DEFAULT_P)
    }

    pub fn horizon(&self) -> f64 {
        self.document.defaults.horizon.unwrap_or(DEFAULT_HORIZON)
    }

    pub fn tau0(&self) -> Option<f64> {
        self.document.defaults.tau0
    }

    pub fn ou_model(&self, epsilon: f64, horizon: f64) -> Result<OuModel> {
        OuModel::new(
            self.gamma.clone(),
            self.vol.clone(),
            self.mu.clone(),
            epsilon,
            horizon,
        )
    }

    /// Decay-rate context at the document's injections.
    pub fn context(&self, epsilon: f64, horizon: f64) -> Result<PsiContext> {
        PsiContext::at_mean(
            self.flow.clone(),
            self.ou_model(epsilon, horizon)?,
            &self.mu_d,
        )
    }

    /// Override every line's thermal constant.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        let taus = vec![tau; self.flow.line_count()];
        let grid = self.flow.network().with_taus(&taus)?;
        Ok(Self {
            flow: DcFlowMatrices::build(&grid, self.stochastic_count())?,
            ..self.clone()
        })
    }

    /// Internal index of an original node id.
    pub fn internal_node(&self, id: u64) -> Result<usize> {
        self.node_ids
            .iter()
            .position(|&n| n == id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown node {id}")))
    }

    /// Internal index of the line between two original node ids, in either order.
    pub fn internal_line(&self, a: u64, b: u64) -> Option<usize> {
        self.line_labels
            .iter()
            .position(|&(f, t)| (f, t) == (a, b) || (t, f) == (a, b))
    }

    /// Injections at internal nodes `1..=N`.
    pub fn injections(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.mu_d).cloned().collect()
    }

    pub fn labels(&self) -> super::export::Labels {
        super::export::Labels {
            nodes: self.node_ids.clone(),
            lines: self.line_labels.clone(),
            line_sign: self.line_sign.clone(),
        }
    }

    /// Current ratings keyed by document line index (infinite when unmonitored).
    pub fn ratings(&self) -> BTreeMap<usize, f64> {
        self.line_source
            .iter()
            .zip(self.flow.network().lines())
            .map(|(&k, l)| (k, l.rating))
            .collect()
    }
}
