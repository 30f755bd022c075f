//! Separation of violated inequalities for a given labeling.
//!
//! Cycle and odd-wheel separation accept fractional labelings. Morality and
//! indicator separation need 0/1 input and read cells off the uncut intra
//! edges.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feasibility::{check_lineage, oriented, uncut_path, Violation, ViolationKind};
use crate::graph::{EdgeId, EdgeKind, HypothesisGraph, Labeling, NodeId, EPSILON};
use crate::par::{self, Execution};
use crate::quotient::intra_components;

/// Most inequalities returned per family and call.
pub const BATCH_CAP: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Edge(EdgeId),
    Birth(NodeId),
    Termination(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SpaceCycle,
    SpaceTimeCycle,
    CycleChordless,
    MoralityOriginal,
    MoralityReduced,
    BirthOriginal,
    BirthReduced,
    TerminationOriginal,
    TerminationReduced,
    IndicatorConsistency,
    OddWheel,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::SpaceCycle => "space_cycle",
            Family::SpaceTimeCycle => "space_time_cycle",
            Family::CycleChordless => "cycle_chordless",
            Family::MoralityOriginal => "morality_original",
            Family::MoralityReduced => "morality_reduced",
            Family::BirthOriginal => "birth_original",
            Family::BirthReduced => "birth_reduced",
            Family::TerminationOriginal => "termination_original",
            Family::TerminationReduced => "termination_reduced",
            Family::IndicatorConsistency => "indicator_consistency",
            Family::OddWheel => "odd_wheel",
        }
    }
}

/// `Σ coefficient · variable ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inequality {
    pub terms: Vec<(Variable, f64)>,
    pub rhs: f64,
    pub family: Family,
}

impl Inequality {
    /// Merges repeated variables and drops zero coefficients.
    pub fn new(terms: impl IntoIterator<Item = (Variable, f64)>, rhs: f64, family: Family) -> Self {
        let mut acc: BTreeMap<Variable, f64> = BTreeMap::new();
        for (v, c) in terms {
            *acc.entry(v).or_insert(0.0) += c;
        }
        let terms = acc.into_iter().filter(|&(_, c)| c != 0.0).collect();
        Self { terms, rhs, family }
    }

    pub fn lhs(&self, l: &Labeling) -> f64 {
        self.terms
            .iter()
            .map(|&(v, c)| {
                c * match v {
                    Variable::Edge(e) => l.edge_labels[e],
                    Variable::Birth(n) => l.birth[n],
                    Variable::Termination(n) => l.termination[n],
                }
            })
            .sum()
    }

    /// `lhs − rhs`; positive means violated.
    pub fn violation(&self, l: &Labeling) -> f64 {
        self.lhs(l) - self.rhs
    }

    pub fn is_violated(&self, l: &Labeling) -> bool {
        self.violation(l) > EPSILON
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, NodeId);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest `s`–`d` path by `Σ x_e` over edges accepted by `allow`, skipping
/// `skip`. Gives up once every open path costs at least `limit`.
fn shortest_path(
    g: &HypothesisGraph,
    l: &Labeling,
    s: NodeId,
    d: NodeId,
    skip: EdgeId,
    limit: f64,
    allow: &dyn Fn(EdgeId) -> bool,
) -> Option<(f64, Vec<EdgeId>)> {
    let mut dist: BTreeMap<NodeId, f64> = BTreeMap::from([(s, 0.0)]);
    let mut via: BTreeMap<NodeId, EdgeId> = BTreeMap::new();
    let mut done = BTreeSet::new();
    let mut heap = BinaryHeap::from([Entry(0.0, s)]);
    while let Some(Entry(dv, v)) = heap.pop() {
        if dv >= limit {
            return None;
        }
        if !done.insert(v) {
            continue;
        }
        if v == d {
            let mut path = Vec::new();
            let mut cur = d;
            while cur != s {
                let e = via[&cur];
                path.push(e);
                cur = g.opposite(e, cur);
            }
            path.reverse();
            return Some((dv, path));
        }
        for &(w, e) in g.neighbors(v) {
            if e == skip || !allow(e) || done.contains(&w) {
                continue;
            }
            let nd = dv + l.edge_labels[e].max(0.0);
            if dist.get(&w).is_none_or(|&old| nd < old) {
                dist.insert(w, nd);
                via.insert(w, e);
                heap.push(Entry(nd, w));
            }
        }
    }
    None
}

/// Replaces path segments by chords while `x_e − Σ_P x` stays above
/// `EPSILON`. `path` runs from `s` to the other endpoint of `e`.
fn shortcut(
    g: &HypothesisGraph,
    l: &Labeling,
    e: EdgeId,
    s: NodeId,
    mut path: Vec<EdgeId>,
    allow: &dyn Fn(EdgeId) -> bool,
) -> Vec<EdgeId> {
    loop {
        let mut nodes = vec![s];
        for &f in &path {
            nodes.push(g.opposite(f, *nodes.last().expect("path starts at s")));
        }
        let sum: f64 = path.iter().map(|&f| l.edge_labels[f]).sum();
        let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut found = None;
        'scan: for (i, &v) in nodes.iter().enumerate() {
            for &(w, f) in g.neighbors(v) {
                if f == e || !allow(f) {
                    continue;
                }
                let Some(&j) = index.get(&w) else { continue };
                if j <= i + 1 {
                    continue;
                }
                let seg: f64 = path[i..j].iter().map(|&h| l.edge_labels[h]).sum();
                if l.edge_labels[e] - (sum - seg + l.edge_labels[f]) > EPSILON {
                    found = Some((i, j, f));
                    break 'scan;
                }
            }
        }
        match found {
            Some((i, j, f)) => {
                path.splice(i..j, [f]);
            }
            None => return path,
        }
    }
}

fn cycle_inequality(e: EdgeId, path: &[EdgeId], family: Family) -> Inequality {
    Inequality::new(
        std::iter::once((Variable::Edge(e), 1.0)).chain(path.iter().map(|&f| (Variable::Edge(f), -1.0))),
        0.0,
        family,
    )
}

/// Violated cycle inequalities `x_e ≤ Σ_P x`, one per edge at most.
///
/// With `chordless`, paths are searched in the two-frame graph of the edge
/// and shortened along chords. Otherwise intra-frame edges use paths within
/// their own frame and inter-frame edges use paths within their frame pair.
pub fn separate_cycles(g: &HypothesisGraph, l: &Labeling, chordless: bool) -> Result<Vec<Inequality>> {
    separate_cycles_with(g, l, chordless, Execution::default())
}

pub fn separate_cycles_with(g: &HypothesisGraph, l: &Labeling, chordless: bool, exec: Execution) -> Result<Vec<Inequality>> {
    l.check_dimensions(g)?;
    let candidates: Vec<EdgeId> = (0..g.num_edges()).filter(|&e| l.edge_labels[e] > EPSILON).collect();
    let found = par::map(exec, &candidates, |&e| -> Option<Inequality> {
        let edge = g.edge(e);
        let kind = g.kind(e);
        // Frames t and t+1 only: a path through the previous frame would
        // forbid divisions.
        let window = match kind {
            EdgeKind::Intra(t) | EdgeKind::Inter(t) => t,
        };
        let pair = |f: EdgeId| g.in_frame_pair(f, window);
        let frame_only = |f: EdgeId| g.kind(f) == kind;
        let (allow, family): (&dyn Fn(EdgeId) -> bool, Family) = match (chordless, kind) {
            (true, _) => (&pair, Family::CycleChordless),
            (false, EdgeKind::Intra(_)) => (&frame_only, Family::SpaceCycle),
            (false, EdgeKind::Inter(_)) => (&pair, Family::SpaceTimeCycle),
        };
        let x = l.edge_labels[e];
        let (_, path) = shortest_path(g, l, edge.u, edge.v, e, x - EPSILON, allow)?;
        let path = if chordless { shortcut(g, l, e, edge.u, path, allow) } else { path };
        let ineq = cycle_inequality(e, &path, family);
        ineq.is_violated(l).then_some(ineq)
    });
    Ok(found.into_iter().flatten().take(BATCH_CAP).collect())
}

/// Cells of an integral labeling whose intra labels form a multicut.
fn multicut_cells(g: &HypothesisGraph, l: &Labeling) -> Result<Vec<usize>> {
    l.require_integral(g)?;
    let cell = intra_components(g, &l.edge_labels);
    for t in 0..g.num_frames() {
        if g.intra_edges(t).iter().any(|&e| l.is_cut(e) && cell[g.edge(e).u] == cell[g.edge(e).v]) {
            return Err(Error::IntraMulticutInvalid(t));
        }
    }
    Ok(cell)
}

/// Intra edges of frame `t` leaving the cell `c`.
fn intra_boundary(g: &HypothesisGraph, cell: &[usize], t: usize, c: usize) -> Vec<EdgeId> {
    g.intra_edges(t)
        .iter()
        .copied()
        .filter(|&e| (cell[g.edge(e).u] == c) != (cell[g.edge(e).v] == c))
        .collect()
}

/// `Σ_S x − Σ_P x − Σ_extra x ≤ |S| − 1`.
fn cut_inequality(s: &[EdgeId], minus: impl IntoIterator<Item = EdgeId>, family: Family) -> Inequality {
    Inequality::new(
        s.iter().map(|&e| (Variable::Edge(e), 1.0)).chain(minus.into_iter().map(|e| (Variable::Edge(e), -1.0))),
        s.len() as f64 - 1.0,
        family,
    )
}

/// Violated morality inequalities for two parent cells sharing a child.
///
/// The reduced form emits one inequality per child cell and pair of parent
/// cells: a cycle inequality when the parents touch along an intra edge,
/// otherwise a cut inequality over the boundary of the first parent. The
/// original form emits one inequality per pair of uncut links.
pub fn separate_morality(g: &HypothesisGraph, l: &Labeling, reduced: bool) -> Result<Vec<Inequality>> {
    let cell = multicut_cells(g, l)?;
    let mut out = Vec::new();
    for t in 0..g.num_frames().saturating_sub(1) {
        // child cell -> parent cell -> uncut links (lower, upper, edge)
        let mut links: BTreeMap<usize, BTreeMap<usize, Vec<(NodeId, NodeId, EdgeId)>>> = BTreeMap::new();
        for &e in g.inter_edges(t) {
            if !l.is_cut(e) {
                let (lo, hi) = oriented(g, e, t);
                links.entry(cell[hi]).or_default().entry(cell[lo]).or_default().push((lo, hi, e));
            }
        }
        for parents in links.values().filter(|p| p.len() >= 2) {
            let ids: Vec<usize> = parents.keys().copied().collect();
            for (i, &a1) in ids.iter().enumerate() {
                for &a2 in &ids[i + 1..] {
                    if out.len() >= BATCH_CAP {
                        return Ok(out);
                    }
                    if reduced {
                        out.push(reduced_morality(g, l, &cell, t, a1, a2, &parents[&a1][0], &parents[&a2][0]));
                    } else {
                        for &(_, h1, e1) in &parents[&a1] {
                            for &(_, h2, e2) in &parents[&a2] {
                                if out.len() >= BATCH_CAP {
                                    return Ok(out);
                                }
                                let s = intra_boundary(g, &cell, t, a1);
                                let p = uncut_path(g, l, h1, h2, |f| g.kind(f) == EdgeKind::Intra(t + 1));
                                let minus = [e1, e2].into_iter().chain(p);
                                out.push(cut_inequality(&s, minus, Family::MoralityOriginal));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn reduced_morality(
    g: &HypothesisGraph,
    l: &Labeling,
    cell: &[usize],
    t: usize,
    a1: usize,
    a2: usize,
    link1: &(NodeId, NodeId, EdgeId),
    link2: &(NodeId, NodeId, EdgeId),
) -> Inequality {
    let pair = |f: EdgeId| g.in_frame_pair(f, t);
    let touching = g.intra_edges(t).iter().copied().find(|&e| {
        let (cu, cv) = (cell[g.edge(e).u], cell[g.edge(e).v]);
        (cu == a1 && cv == a2) || (cu == a2 && cv == a1)
    });
    if let Some(f) = touching {
        let (p, q) = (g.edge(f).u, g.edge(f).v);
        let path = uncut_path(g, l, p, q, pair);
        let path = shortcut(g, l, f, p, path, &pair);
        cycle_inequality(f, &path, Family::MoralityReduced)
    } else {
        let s = intra_boundary(g, cell, t, a1);
        let path = uncut_path(g, l, link1.0, link2.0, pair);
        cut_inequality(&s, path, Family::MoralityReduced)
    }
}

/// Lineage cut apart from bifurcation, as the indicator families need.
fn require_lineage(g: &HypothesisGraph, l: &Labeling) -> Result<()> {
    let bad = check_lineage(g, l)?.into_iter().filter(|v| v.kind != ViolationKind::Bifurcation).count();
    if bad > 0 {
        return Err(Error::InfeasibleBase(bad));
    }
    Ok(())
}

/// Violated birth and termination inequalities `Σ_S x − x^± ≤ |S| − 1`.
///
/// `S` holds the cut edges around a cell inside the frame pair towards its
/// missing parent (or child). The reduced form drops links from `v`'s
/// neighbours in the other frame to the rest of the cell.
pub fn separate_birth_termination(g: &HypothesisGraph, l: &Labeling, reduced: bool) -> Result<Vec<Inequality>> {
    l.require_integral(g)?;
    require_lineage(g, l)?;
    let cell = intra_components(g, &l.edge_labels);
    let cells = cell.iter().map(|&c| c + 1).max().unwrap_or(0);
    let mut has_parent = vec![false; cells];
    let mut has_child = vec![false; cells];
    for t in 0..g.num_frames().saturating_sub(1) {
        for &e in g.inter_edges(t) {
            if !l.is_cut(e) {
                let (lo, hi) = oriented(g, e, t);
                has_child[cell[lo]] = true;
                has_parent[cell[hi]] = true;
            }
        }
    }
    let (mut births, mut terminations) = (Vec::new(), Vec::new());
    for v in 0..g.num_nodes() {
        let t = g.frame(v);
        let c = cell[v];
        if t > 0 && !l.has_birth(v) && !has_parent[c] && births.len() < BATCH_CAP {
            births.push(indicator_inequality(g, &cell, v, t - 1, true, reduced));
        }
        if t < g.last_frame() && !l.has_termination(v) && !has_child[c] && terminations.len() < BATCH_CAP {
            terminations.push(indicator_inequality(g, &cell, v, t, false, reduced));
        }
    }
    births.extend(terminations);
    Ok(births)
}

/// Inequality for node `v` in window `(t, t+1)`; `birth` picks the side.
fn indicator_inequality(g: &HypothesisGraph, cell: &[usize], v: NodeId, t: usize, birth: bool, reduced: bool) -> Inequality {
    let c = cell[v];
    let own = if birth { t + 1 } else { t };
    // Neighbours of v across the window.
    let across: BTreeSet<NodeId> =
        g.neighbors(v).iter().filter(|&&(_, e)| g.in_frame_pair(e, t) && !g.is_intra(e)).map(|&(w, _)| w).collect();
    let mut s = intra_boundary(g, cell, own, c);
    for &e in g.inter_edges(t) {
        let (lo, hi) = oriented(g, e, t);
        let (mine, other) = if birth { (hi, lo) } else { (lo, hi) };
        if cell[mine] != c {
            continue;
        }
        if reduced && mine != v && across.contains(&other) {
            continue;
        }
        s.push(e);
    }
    s.sort_unstable();
    let (var, family) = match (birth, reduced) {
        (true, true) => (Variable::Birth(v), Family::BirthReduced),
        (true, false) => (Variable::Birth(v), Family::BirthOriginal),
        (false, true) => (Variable::Termination(v), Family::TerminationReduced),
        (false, false) => (Variable::Termination(v), Family::TerminationOriginal),
    };
    Inequality::new(
        s.iter().map(|&e| (Variable::Edge(e), 1.0)).chain([(var, -1.0)]),
        s.len() as f64 - 1.0,
        family,
    )
}

/// `x_u^± − x_w^± − x_uw ≤ 0` for uncut intra edges whose endpoints disagree.
pub fn separate_indicator_consistency(g: &HypothesisGraph, l: &Labeling) -> Result<Vec<Inequality>> {
    l.check_dimensions(g)?;
    let mut out = Vec::new();
    for (e, edge) in g.edges().iter().enumerate() {
        if !g.is_intra(e) {
            continue;
        }
        for (vals, var) in [(&l.birth, Variable::Birth as fn(NodeId) -> Variable), (&l.termination, Variable::Termination)] {
            let (hi, lo) = if vals[edge.u] >= vals[edge.v] { (edge.u, edge.v) } else { (edge.v, edge.u) };
            let ineq = Inequality::new(
                [(var(hi), 1.0), (var(lo), -1.0), (Variable::Edge(e), -1.0)],
                0.0,
                Family::IndicatorConsistency,
            );
            if ineq.is_violated(l) && out.len() < BATCH_CAP {
                out.push(ineq);
            }
        }
    }
    Ok(out)
}

/// Violated 3-wheel inequalities with the centre one frame after the rim.
pub fn separate_odd_wheels(g: &HypothesisGraph, l: &Labeling) -> Result<Vec<Inequality>> {
    l.check_dimensions(g)?;
    let mut out = Vec::new();
    for t in 0..g.num_frames().saturating_sub(1) {
        for &w in g.frame_nodes(t + 1) {
            let spokes: BTreeMap<NodeId, EdgeId> = g
                .neighbors(w)
                .iter()
                .filter(|&&(v, _)| g.frame(v) == t)
                .map(|&(v, e)| (v, e))
                .collect();
            let rim: Vec<NodeId> = spokes.keys().copied().collect();
            for (i, &a) in rim.iter().enumerate() {
                for (j, &b) in rim.iter().enumerate().skip(i + 1) {
                    let Some(ab) = g.find_edge(a, b) else { continue };
                    for &c in &rim[j + 1..] {
                        let (Some(bc), Some(ca)) = (g.find_edge(b, c), g.find_edge(c, a)) else { continue };
                        let ineq = Inequality::new(
                            [ab, bc, ca].map(|e| (Variable::Edge(e), 1.0)).into_iter().chain(
                                [a, b, c].map(|v| (Variable::Edge(spokes[&v]), -1.0)),
                            ),
                            1.0,
                            Family::OddWheel,
                        );
                        if ineq.is_violated(l) {
                            out.push(ineq);
                            if out.len() >= BATCH_CAP {
                                return Ok(out);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Cells with three or more child cells.
pub fn check_bifurcation(g: &HypothesisGraph, l: &Labeling) -> Result<Vec<Violation>> {
    Ok(check_lineage(g, l)?.into_iter().filter(|v| v.kind == ViolationKind::Bifurcation).collect())
}

/// Runs the families that apply to an integral labeling: cycles always,
/// morality once the intra labels are a multicut, indicator families once
/// the labeling is a lineage cut. Empty iff the labeling is feasible up to
/// bifurcation. `reduced` selects the strengthened forms throughout.
pub fn separate_integral(g: &HypothesisGraph, l: &Labeling, reduced: bool) -> Result<Vec<Inequality>> {
    l.require_integral(g)?;
    let mut out = separate_cycles(g, l, reduced)?;
    let morality = match separate_morality(g, l, reduced) {
        Ok(m) => m,
        Err(Error::IntraMulticutInvalid(_)) => return Ok(out),
        Err(e) => return Err(e),
    };
    let lineage_ok = out.is_empty() && morality.is_empty();
    out.extend(morality);
    if lineage_ok {
        out.extend(separate_birth_termination(g, l, reduced)?);
        out.extend(separate_indicator_consistency(g, l)?);
    }
    Ok(out)
}
