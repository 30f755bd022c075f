//! JSON documents for instances and solutions.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Edge, HypothesisGraph, Labeling, Node, DEFAULT_INDICATOR_COST};

pub const FORMAT_VERSION: u32 = 1;

fn default_indicator() -> f64 {
    DEFAULT_INDICATOR_COST
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    frame: usize,
    #[serde(default = "default_indicator")]
    birth_cost: f64,
    #[serde(default = "default_indicator")]
    termination_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    id: usize,
    u: usize,
    v: usize,
    cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    format_version: u32,
    num_frames: usize,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

impl InstanceDoc {
    fn of(g: &HypothesisGraph) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            num_frames: g.num_frames(),
            nodes: g
                .nodes()
                .iter()
                .enumerate()
                .map(|(id, n)| NodeRecord { id, frame: n.frame, birth_cost: n.birth_cost, termination_cost: n.termination_cost })
                .collect(),
            edges: g.edges().iter().enumerate().map(|(id, e)| EdgeRecord { id, u: e.u, v: e.v, cost: e.cost }).collect(),
        }
    }
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse { line: e.line(), column: e.column(), message: e.to_string() }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Parse { line: 0, column: 0, message: format!("unsupported format_version {v}") });
    }
    Ok(())
}

/// Pretty-printed instance document.
pub fn instance_to_string(g: &HypothesisGraph) -> String {
    let mut s = serde_json::to_string_pretty(&InstanceDoc::of(g)).expect("instances serialize");
    s.push('\n');
    s
}

pub fn parse_instance(text: &str) -> Result<HypothesisGraph> {
    let doc: InstanceDoc = serde_json::from_str(text).map_err(parse_error)?;
    check_version(doc.format_version)?;
    for (i, n) in doc.nodes.iter().enumerate() {
        if n.id != i {
            return Err(Error::NonDenseId { expected: i, found: n.id });
        }
    }
    for (i, e) in doc.edges.iter().enumerate() {
        if e.id != i {
            return Err(Error::NonDenseId { expected: i, found: e.id });
        }
    }
    let nodes = doc
        .nodes
        .into_iter()
        .map(|n| Node { frame: n.frame, birth_cost: n.birth_cost, termination_cost: n.termination_cost })
        .collect();
    let edges = doc.edges.into_iter().map(|e| Edge { u: e.u, v: e.v, cost: e.cost }).collect();
    HypothesisGraph::new(doc.num_frames, nodes, edges)
}

/// Hex SHA-256 of the compact canonical instance document.
pub fn instance_hash(g: &HypothesisGraph) -> String {
    let canonical = serde_json::to_string(&InstanceDoc::of(g)).expect("instances serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// A labeling together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub instance_hash: String,
    pub labeling: Labeling,
    pub objective: f64,
    pub algorithm: String,
    pub wall_time_s: f64,
    pub trace: Option<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionDoc {
    format_version: u32,
    instance_hash: String,
    edge_labels: Vec<Value>,
    birth: Vec<Value>,
    termination: Vec<Value>,
    objective: f64,
    algorithm: String,
    wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trace: Option<Value>,
}

/// 0/1 values are written as integers, everything else as floats.
fn encode(values: &[f64]) -> Vec<Value> {
    values
        .iter()
        .map(|&x| if x == 0.0 || x == 1.0 { Value::from(x as u8) } else { Value::from(x) })
        .collect()
}

fn decode(values: &[Value], what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64().ok_or_else(|| Error::Parse { line: 0, column: 0, message: format!("{what}[{i}] is not a number") })
        })
        .collect()
}

impl Solution {
    pub fn new(g: &HypothesisGraph, labeling: Labeling, objective: f64, algorithm: &str) -> Self {
        Self {
            instance_hash: instance_hash(g),
            labeling,
            objective,
            algorithm: algorithm.to_string(),
            wall_time_s: 0.0,
            trace: None,
        }
    }

    /// Fails unless the solution was computed for `g`.
    pub fn check_instance(&self, g: &HypothesisGraph) -> Result<()> {
        let found = instance_hash(g);
        if found != self.instance_hash {
            return Err(Error::HashMismatch { expected: self.instance_hash.clone(), found });
        }
        self.labeling.check_dimensions(g)
    }

    pub fn to_json_string(&self) -> String {
        let doc = SolutionDoc {
            format_version: FORMAT_VERSION,
            instance_hash: self.instance_hash.clone(),
            edge_labels: encode(&self.labeling.edge_labels),
            birth: encode(&self.labeling.birth),
            termination: encode(&self.labeling.termination),
            objective: self.objective,
            algorithm: self.algorithm.clone(),
            wall_time_s: self.wall_time_s,
            trace: self.trace.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("solutions serialize");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: SolutionDoc = serde_json::from_str(text).map_err(parse_error)?;
        check_version(doc.format_version)?;
        let edge_labels = decode(&doc.edge_labels, "edge_labels")?;
        let birth = decode(&doc.birth, "birth")?;
        let termination = decode(&doc.termination, "termination")?;
        let integral = edge_labels.iter().chain(&birth).chain(&termination).all(|&x| x == 0.0 || x == 1.0);
        let labeling = if integral {
            Labeling::integral(edge_labels, birth, termination)?
        } else {
            Labeling::fractional(edge_labels, birth, termination)?
        };
        Ok(Self {
            instance_hash: doc.instance_hash,
            labeling,
            objective: doc.objective,
            algorithm: doc.algorithm,
            wall_time_s: doc.wall_time_s,
            trace: doc.trace,
        })
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn read_instance(path: &Path) -> Result<HypothesisGraph> {
    parse_instance(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
}

pub fn write_instance(path: &Path, g: &HypothesisGraph) -> Result<()> {
    std::fs::write(path, instance_to_string(g)).map_err(|e| io_error(path, e))
}

pub fn read_solution(path: &Path) -> Result<Solution> {
    Solution::parse(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
}

pub fn write_solution(path: &Path, s: &Solution) -> Result<()> {
    std::fs::write(path, s.to_json_string()).map_err(|e| io_error(path, e))
}
