//! Hypothesis graph, cost model and edge labelings.
//!
//! A hypothesis graph is split into frames. Every edge is either intra-frame
//! (both endpoints in frame `t`) or inter-frame (endpoints in `t` and `t + 1`).
//! Cut costs are paid for edges labeled 1; birth and termination costs are paid
//! for nodes whose indicator is set.

use std::collections::HashSet;

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type EdgeId = usize;

/// Tolerance used for every objective comparison in the solvers.
pub const EPSILON: f64 = 1e-9;

/// Default birth and termination cost when an instance does not specify one.
pub const DEFAULT_INDICATOR_COST: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub frame: usize,
    pub birth_cost: f64,
    pub termination_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub cost: f64,
}

/// Where an edge sits in the frame structure. Inter-frame edges carry the
/// lower frame index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Intra(usize),
    Inter(usize),
}

/// Frame-structured graph with costs. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisGraph {
    num_frames: usize,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    kinds: Vec<EdgeKind>,
    frame_nodes: Vec<Vec<NodeId>>,
    intra_edges: Vec<Vec<EdgeId>>,
    inter_edges: Vec<Vec<EdgeId>>,
    adjacency: Vec<Vec<(NodeId, EdgeId)>>,
}

impl HypothesisGraph {
    /// Builds a graph from node and edge lists. Ids are the list positions.
    pub fn new(num_frames: usize, nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::NoFrames);
        }
        let mut frame_nodes = vec![Vec::new(); num_frames];
        for (id, node) in nodes.iter().enumerate() {
            if node.frame >= num_frames {
                return Err(Error::NodeFrameOutOfRange { node: id, frame: node.frame, num_frames });
            }
            for (what, value) in [("birth_cost", node.birth_cost), ("termination_cost", node.termination_cost)] {
                if !value.is_finite() || value < 0.0 {
                    return Err(Error::InvalidCost { what: format!("node {id} {what}"), value });
                }
            }
            frame_nodes[node.frame].push(id);
        }

        let mut seen = HashSet::with_capacity(edges.len());
        let mut kinds = Vec::with_capacity(edges.len());
        let mut intra_edges = vec![Vec::new(); num_frames];
        let mut inter_edges = vec![Vec::new(); num_frames];
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (id, edge) in edges.iter().enumerate() {
            for endpoint in [edge.u, edge.v] {
                if endpoint >= nodes.len() {
                    return Err(Error::DanglingNodeReference { edge: id, node: endpoint, num_nodes: nodes.len() });
                }
            }
            if edge.u == edge.v {
                return Err(Error::SelfLoop { edge: id, node: edge.u });
            }
            if !edge.cost.is_finite() {
                return Err(Error::InvalidCost { what: format!("edge {id} cost"), value: edge.cost });
            }
            let key = (edge.u.min(edge.v), edge.u.max(edge.v));
            if !seen.insert(key) {
                return Err(Error::DuplicateEdge { edge: id, u: edge.u, v: edge.v });
            }
            let (fu, fv) = (nodes[edge.u].frame, nodes[edge.v].frame);
            let kind = match fu.abs_diff(fv) {
                0 => EdgeKind::Intra(fu),
                1 => EdgeKind::Inter(fu.min(fv)),
                _ => return Err(Error::FrameGap { edge: id, from: fu, to: fv }),
            };
            match kind {
                EdgeKind::Intra(t) => intra_edges[t].push(id),
                EdgeKind::Inter(t) => inter_edges[t].push(id),
            }
            kinds.push(kind);
            adjacency[edge.u].push((edge.v, id));
            adjacency[edge.v].push((edge.u, id));
        }

        Ok(Self { num_frames, nodes, edges, kinds, frame_nodes, intra_edges, inter_edges, adjacency })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, v: NodeId) -> &Node {
        &self.nodes[v]
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    pub fn frame(&self, v: NodeId) -> usize {
        self.nodes[v].frame
    }

    pub fn kind(&self, e: EdgeId) -> EdgeKind {
        self.kinds[e]
    }

    pub fn is_intra(&self, e: EdgeId) -> bool {
        matches!(self.kinds[e], EdgeKind::Intra(_))
    }

    pub fn frame_nodes(&self, t: usize) -> &[NodeId] {
        &self.frame_nodes[t]
    }

    /// Edges of `E_t`.
    pub fn intra_edges(&self, t: usize) -> &[EdgeId] {
        &self.intra_edges[t]
    }

    /// Edges of `E_{t,t+1}`; empty for the last frame.
    pub fn inter_edges(&self, t: usize) -> &[EdgeId] {
        &self.inter_edges[t]
    }

    /// `(neighbor, edge)` pairs incident to `v`, in edge insertion order.
    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, EdgeId)] {
        &self.adjacency[v]
    }

    pub fn last_frame(&self) -> usize {
        self.num_frames - 1
    }

    /// Whether `e` belongs to `G_t^+`, the subgraph spanned by frames `t` and `t + 1`.
    pub fn in_frame_pair(&self, e: EdgeId, t: usize) -> bool {
        match self.kinds[e] {
            EdgeKind::Intra(s) => s == t || s == t + 1,
            EdgeKind::Inter(s) => s == t,
        }
    }

    /// The other endpoint of `e`.
    pub fn opposite(&self, e: EdgeId, v: NodeId) -> NodeId {
        let edge = &self.edges[e];
        if edge.u == v {
            edge.v
        } else {
            edge.u
        }
    }

    /// Looks up the edge joining `u` and `v`, if any.
    pub fn find_edge(&self, u: NodeId, v: NodeId) -> Option<EdgeId> {
        let (a, b) = if self.adjacency[u].len() <= self.adjacency[v].len() { (u, v) } else { (v, u) };
        self.adjacency[a].iter().find(|&&(w, _)| w == b).map(|&(_, e)| e)
    }

    /// Sum of cut costs over all inter-frame edges; the constant of the
    /// objective decomposition.
    pub fn inter_cost_total(&self) -> f64 {
        self.inter_edges.iter().flatten().map(|&e| self.edges[e].cost).sum()
    }
}

/// 0/1 edge labels (1 = cut) with birth and termination indicators.
///
/// Labels may be fractional when the labeling is explicitly marked so; the
/// cycle and odd-wheel separators accept such inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    pub edge_labels: Vec<f64>,
    pub birth: Vec<f64>,
    pub termination: Vec<f64>,
    fractional: bool,
}

impl Labeling {
    /// Integral labeling from boolean vectors.
    pub fn from_bools(edges: &[bool], birth: &[bool], termination: &[bool]) -> Self {
        let conv = |xs: &[bool]| xs.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self { edge_labels: conv(edges), birth: conv(birth), termination: conv(termination), fractional: false }
    }

    /// Integral labeling; rejects values other than 0 and 1.
    pub fn integral(edge_labels: Vec<f64>, birth: Vec<f64>, termination: Vec<f64>) -> Result<Self> {
        let l = Self { edge_labels, birth, termination, fractional: false };
        l.check_values(|x| x == 0.0 || x == 1.0)?;
        Ok(l)
    }

    /// Labeling with values in `[0, 1]`.
    pub fn fractional(edge_labels: Vec<f64>, birth: Vec<f64>, termination: Vec<f64>) -> Result<Self> {
        let l = Self { edge_labels, birth, termination, fractional: true };
        l.check_values(|x| (0.0..=1.0).contains(&x))?;
        Ok(l)
    }

    /// All-zero labeling sized for `g`.
    pub fn zeros(g: &HypothesisGraph) -> Self {
        Self {
            edge_labels: vec![0.0; g.num_edges()],
            birth: vec![0.0; g.num_nodes()],
            termination: vec![0.0; g.num_nodes()],
            fractional: false,
        }
    }

    fn check_values(&self, ok: impl Fn(f64) -> bool) -> Result<()> {
        let all = self.edge_labels.iter().chain(&self.birth).chain(&self.termination);
        for (index, &value) in all.enumerate() {
            if !ok(value) {
                return Err(Error::InvalidLabel { index, value });
            }
        }
        Ok(())
    }

    pub fn is_fractional(&self) -> bool {
        self.fractional
    }

    /// True when every value is exactly 0 or 1, regardless of the marker.
    pub fn has_integral_values(&self) -> bool {
        self.edge_labels.iter().chain(&self.birth).chain(&self.termination).all(|&x| x == 0.0 || x == 1.0)
    }

    pub fn is_cut(&self, e: EdgeId) -> bool {
        self.edge_labels[e] > 0.5
    }

    pub fn has_birth(&self, v: NodeId) -> bool {
        self.birth[v] > 0.5
    }

    pub fn has_termination(&self, v: NodeId) -> bool {
        self.termination[v] > 0.5
    }

    pub fn check_dimensions(&self, g: &HypothesisGraph) -> Result<()> {
        let checks = [
            ("edge_labels", g.num_edges(), self.edge_labels.len()),
            ("birth", g.num_nodes(), self.birth.len()),
            ("termination", g.num_nodes(), self.termination.len()),
        ];
        for (what, expected, found) in checks {
            if expected != found {
                return Err(Error::DimensionMismatch { what, expected, found });
            }
        }
        Ok(())
    }

    /// Integral and dimensionally valid for `g`.
    pub(crate) fn require_integral(&self, g: &HypothesisGraph) -> Result<()> {
        self.check_dimensions(g)?;
        if self.fractional || !self.has_integral_values() {
            return Err(Error::FractionalInput);
        }
        Ok(())
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`, marked fractional.
    pub fn blend(&self, other: &Labeling, alpha: f64) -> Labeling {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
        Labeling {
            edge_labels: mix(&self.edge_labels, &other.edge_labels),
            birth: mix(&self.birth, &other.birth),
            termination: mix(&self.termination, &other.termination),
            fractional: true,
        }
    }
}

/// Three-way split of the objective: the constant sum over all inter-frame
/// costs, the intra-frame part, and the branching part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub constant: f64,
    pub intra: f64,
    pub mcbp: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.constant + self.intra + self.mcbp
    }
}

/// `Σ c_e x_e + Σ c⁺_v x⁺_v + Σ c⁻_v x⁻_v`.
pub fn objective(g: &HypothesisGraph, l: &Labeling) -> Result<f64> {
    l.check_dimensions(g)?;
    let edges: f64 = g.edges().iter().zip(&l.edge_labels).map(|(e, x)| e.cost * x).sum();
    let indicators: f64 = g
        .nodes()
        .iter()
        .zip(l.birth.iter().zip(&l.termination))
        .map(|(n, (b, t))| n.birth_cost * b + n.termination_cost * t)
        .sum();
    Ok(edges + indicators)
}

pub fn decompose_objective(g: &HypothesisGraph, l: &Labeling) -> Result<ObjectiveParts> {
    let total = objective(g, l)?;
    let constant = g.inter_cost_total();
    let intra: f64 = (0..g.num_frames())
        .flat_map(|t| g.intra_edges(t).iter())
        .map(|&e| g.edge(e).cost * l.edge_labels[e])
        .sum();
    Ok(ObjectiveParts { constant, intra, mcbp: total - constant - intra })
}

/// The two-frame fixture used throughout the tests and docs: a cell `{0, 1}`
/// dividing into `{2}` and `{3}` at the optimum.
pub fn fixture_i3() -> HypothesisGraph {
    let node = |frame| Node { frame, birth_cost: 5.0, termination_cost: 5.0 };
    let edge = |u, v, cost| Edge { u, v, cost };
    HypothesisGraph::new(
        2,
        vec![node(0), node(0), node(1), node(1)],
        vec![edge(0, 1, 2.0), edge(2, 3, -3.0), edge(0, 2, -1.0), edge(1, 3, -1.0)],
    )
    .expect("fixture is valid")
}
