//! Feasibility checks for labelings and the canonical labeling of a
//! partition plus branching.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use petgraph::unionfind::UnionFind;

use crate::branching::Branching;
use crate::error::{Error, Result};
use crate::graph::{EdgeId, EdgeKind, HypothesisGraph, Labeling, NodeId};
use crate::quotient::{intra_components, FramePartition, QuotientGraph};

/// Upper bound on violations reported per call.
pub const MAX_VIOLATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    SpaceCycle,
    SpaceTimeCycle,
    Morality,
    Bifurcation,
    Birth,
    Termination,
    Consistency,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::SpaceCycle => "space_cycle",
            ViolationKind::SpaceTimeCycle => "space_time_cycle",
            ViolationKind::Morality => "morality",
            ViolationKind::Bifurcation => "bifurcation",
            ViolationKind::Birth => "birth",
            ViolationKind::Termination => "termination",
            ViolationKind::Consistency => "consistency",
        }
    }
}

/// A violated constraint with the edges and nodes that witness it.
///
/// Witness shapes: cycle kinds list the cut edge first, followed by an
/// uncut path joining its endpoints; morality lists two uncut inter-frame
/// edges into one cell from different parent cells; bifurcation lists one
/// uncut inter-frame edge per child cell; indicator kinds list the node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub edges: Vec<EdgeId>,
    pub nodes: Vec<NodeId>,
    pub frame: usize,
}

/// Checks space cycles, space-time cycles, morality and bifurcation.
pub fn check_lineage(g: &HypothesisGraph, l: &Labeling) -> Result<Vec<Violation>> {
    l.require_integral(g)?;
    let mut out = Vec::new();
    let cell = intra_components(g, &l.edge_labels);

    for (e, edge) in g.edges().iter().enumerate() {
        if out.len() >= MAX_VIOLATIONS {
            return Ok(out);
        }
        if let EdgeKind::Intra(t) = g.kind(e) {
            if l.is_cut(e) && cell[edge.u] == cell[edge.v] {
                let mut edges = vec![e];
                edges.extend(uncut_path(g, l, edge.u, edge.v, |f| g.kind(f) == EdgeKind::Intra(t)));
                out.push(Violation { kind: ViolationKind::SpaceCycle, edges, nodes: vec![edge.u, edge.v], frame: t });
            }
        }
    }

    for t in 0..g.num_frames().saturating_sub(1) {
        let mut uf = UnionFind::<usize>::new(g.num_nodes());
        for &e in g.intra_edges(t).iter().chain(g.intra_edges(t + 1)).chain(g.inter_edges(t)) {
            if !l.is_cut(e) {
                uf.union(g.edge(e).u, g.edge(e).v);
            }
        }
        for &e in g.inter_edges(t) {
            if out.len() >= MAX_VIOLATIONS {
                return Ok(out);
            }
            let edge = g.edge(e);
            if l.is_cut(e) && uf.equiv(edge.u, edge.v) {
                let mut edges = vec![e];
                edges.extend(uncut_path(g, l, edge.u, edge.v, |f| g.in_frame_pair(f, t)));
                out.push(Violation {
                    kind: ViolationKind::SpaceTimeCycle,
                    edges,
                    nodes: vec![edge.u, edge.v],
                    frame: t,
                });
            }
        }

        // Uncut links between cells: child -> (parent cell -> witness edge).
        let mut parents: BTreeMap<usize, BTreeMap<usize, EdgeId>> = BTreeMap::new();
        let mut children: BTreeMap<usize, BTreeMap<usize, EdgeId>> = BTreeMap::new();
        for &e in g.inter_edges(t) {
            if l.is_cut(e) {
                continue;
            }
            let (lo, hi) = oriented(g, e, t);
            parents.entry(cell[hi]).or_default().entry(cell[lo]).or_insert(e);
            children.entry(cell[lo]).or_default().entry(cell[hi]).or_insert(e);
        }
        for ps in parents.values() {
            if ps.len() >= 2 && out.len() < MAX_VIOLATIONS {
                let edges: Vec<EdgeId> = ps.values().copied().collect();
                let nodes = edges.iter().map(|&e| oriented(g, e, t).0).collect();
                out.push(Violation { kind: ViolationKind::Morality, edges, nodes, frame: t + 1 });
            }
        }
        for cs in children.values() {
            if cs.len() > 2 && out.len() < MAX_VIOLATIONS {
                let edges: Vec<EdgeId> = cs.values().copied().collect();
                let nodes = edges.iter().map(|&e| oriented(g, e, t).0).collect();
                out.push(Violation { kind: ViolationKind::Bifurcation, edges, nodes, frame: t });
            }
        }
    }
    Ok(out)
}

/// Endpoints of an inter-frame edge of `E_{t,t+1}` as `(frame t, frame t+1)`.
pub(crate) fn oriented(g: &HypothesisGraph, e: EdgeId, t: usize) -> (NodeId, NodeId) {
    let edge = g.edge(e);
    if g.frame(edge.u) == t {
        (edge.u, edge.v)
    } else {
        (edge.v, edge.u)
    }
}

/// Shortest uncut path (by hops) from `s` to `d` using edges accepted by `allow`.
pub(crate) fn uncut_path(
    g: &HypothesisGraph,
    l: &Labeling,
    s: NodeId,
    d: NodeId,
    allow: impl Fn(EdgeId) -> bool,
) -> Vec<EdgeId> {
    let mut via: BTreeMap<NodeId, EdgeId> = BTreeMap::new();
    let mut seen = BTreeSet::from([s]);
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        if v == d {
            break;
        }
        for &(w, e) in g.neighbors(v) {
            if !l.is_cut(e) && allow(e) && seen.insert(w) {
                via.insert(w, e);
                queue.push_back(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut cur = d;
    while cur != s {
        let Some(&e) = via.get(&cur) else { return Vec::new() };
        path.push(e);
        cur = g.opposite(e, cur);
    }
    path.reverse();
    path
}

/// Per cell: does it have an uncut edge to the previous / next frame?
fn cell_links(g: &HypothesisGraph, l: &Labeling, cell: &[usize]) -> (Vec<bool>, Vec<bool>) {
    let n = cell.iter().map(|&c| c + 1).max().unwrap_or(0);
    let mut has_parent = vec![false; n];
    let mut has_child = vec![false; n];
    for t in 0..g.num_frames().saturating_sub(1) {
        for &e in g.inter_edges(t) {
            if !l.is_cut(e) {
                let (lo, hi) = oriented(g, e, t);
                has_child[cell[lo]] = true;
                has_parent[cell[hi]] = true;
            }
        }
    }
    (has_parent, has_child)
}

/// Checks birth and termination constraints and per-cell agreement of the
/// indicators. Requires a lineage cut.
pub fn check_indicators(g: &HypothesisGraph, l: &Labeling) -> Result<Vec<Violation>> {
    let lineage = check_lineage(g, l)?;
    if !lineage.is_empty() {
        return Err(Error::InfeasibleBase(lineage.len()));
    }
    let cell = intra_components(g, &l.edge_labels);
    let (has_parent, has_child) = cell_links(g, l, &cell);
    let last = g.last_frame();
    let mut out = Vec::new();
    let mut push = |v: Violation| {
        if out.len() < MAX_VIOLATIONS {
            out.push(v);
        }
    };
    for v in 0..g.num_nodes() {
        let t = g.frame(v);
        if t > 0 && !l.has_birth(v) && !has_parent[cell[v]] {
            push(Violation { kind: ViolationKind::Birth, edges: vec![], nodes: vec![v], frame: t });
        }
        if t < last && !l.has_termination(v) && !has_child[cell[v]] {
            push(Violation { kind: ViolationKind::Termination, edges: vec![], nodes: vec![v], frame: t });
        }
    }
    let mut first: BTreeMap<usize, NodeId> = BTreeMap::new();
    for v in 0..g.num_nodes() {
        let rep = *first.entry(cell[v]).or_insert(v);
        if rep != v && (l.has_birth(rep) != l.has_birth(v) || l.has_termination(rep) != l.has_termination(v)) {
            push(Violation { kind: ViolationKind::Consistency, edges: vec![], nodes: vec![rep, v], frame: g.frame(v) });
        }
    }
    Ok(out)
}

/// Both checks; empty iff the labeling is feasible.
pub fn check_all(g: &HypothesisGraph, l: &Labeling) -> Result<Vec<Violation>> {
    let lineage = check_lineage(g, l)?;
    if !lineage.is_empty() {
        return Ok(lineage);
    }
    check_indicators(g, l)
}

/// Minimal indicators implied by edge labels: a birth for every cell
/// without an uncut parent edge, a termination for every cell without an
/// uncut child edge, except in the first and last frames respectively.
pub fn implied_indicators(g: &HypothesisGraph, edge_labels: Vec<f64>) -> Labeling {
    let mut l = Labeling::zeros(g);
    l.edge_labels = edge_labels;
    let cell = intra_components(g, &l.edge_labels);
    let (has_parent, has_child) = cell_links(g, &l, &cell);
    let last = g.last_frame();
    for v in 0..g.num_nodes() {
        let t = g.frame(v);
        l.birth[v] = if t > 0 && !has_parent[cell[v]] { 1.0 } else { 0.0 };
        l.termination[v] = if t < last && !has_child[cell[v]] { 1.0 } else { 0.0 };
    }
    l
}

/// The labeling induced by a partition and a branching of its quotient.
pub fn labeling_from_partition(g: &HypothesisGraph, p: &FramePartition, b: &Branching) -> Result<Labeling> {
    let q = QuotientGraph::build(g, p)?;
    labeling_from_quotient(g, &q, b)
}

/// As [`labeling_from_partition`] with a prebuilt quotient.
pub fn labeling_from_quotient(g: &HypothesisGraph, q: &QuotientGraph, b: &Branching) -> Result<Labeling> {
    let p = q.partition();
    if p.cell_map().len() != g.num_nodes() {
        return Err(Error::PartitionGraphMismatch("node count differs".into()));
    }
    if b.active.len() != q.arcs().len() || b.cell_birth.len() != q.num_cells() {
        return Err(Error::PartitionGraphMismatch("branching does not fit the quotient".into()));
    }
    let mut l = Labeling::zeros(g);
    for (e, edge) in g.edges().iter().enumerate() {
        if g.is_intra(e) {
            l.edge_labels[e] = if p.cell_of(edge.u) != p.cell_of(edge.v) { 1.0 } else { 0.0 };
        } else {
            l.edge_labels[e] = 1.0;
        }
    }
    for (arc, &on) in q.arcs().iter().zip(&b.active) {
        if on {
            for &e in &arc.edges {
                l.edge_labels[e] = 0.0;
            }
        }
    }
    for v in 0..g.num_nodes() {
        let c = p.cell_of(v);
        l.birth[v] = if b.cell_birth[c] { 1.0 } else { 0.0 };
        l.termination[v] = if b.cell_termination[c] { 1.0 } else { 0.0 };
    }
    Ok(l)
}

/// Partition and branching read off a feasible labeling.
pub fn decompose_labeling(g: &HypothesisGraph, l: &Labeling) -> Result<(QuotientGraph, Branching)> {
    let p = FramePartition::from_labeling(g, l)?;
    let q = QuotientGraph::build(g, &p)?;
    let b = Branching::from_labeling(&q, l);
    Ok((q, b))
}
