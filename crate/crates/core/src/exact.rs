//! Exact solvers for desk-scale instances, and the optimality gap.
//!
//! [`exact_solve`] enumerates connected partitions of every frame and runs a
//! dynamic program over consecutive frames: once the partitions of `t` and
//! `t + 1` are fixed, the branching cost of that pair no longer depends on
//! any other frame. [`exhaustive_labeling_solve`] is an independent oracle
//! that walks all 0/1 edge labelings.

use std::collections::BTreeMap;

use crate::branching::{solve_mcb, solve_pair, LeftCell, PairArc, PairProblem};
use crate::error::{Error, Result};
use crate::feasibility::{check_lineage, implied_indicators, labeling_from_quotient};
use crate::graph::{objective, HypothesisGraph, Labeling, NodeId, EPSILON};
use crate::par::{self, Execution};
use crate::quotient::{intra_components, FramePartition, QuotientGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactLimits {
    pub max_nodes_per_frame: usize,
    pub max_edges: usize,
    /// Upper bound on frame-pair subproblems the partition DP may solve.
    pub max_pair_evaluations: usize,
}

impl Default for ExactLimits {
    fn default() -> Self {
        Self { max_nodes_per_frame: 8, max_edges: 16, max_pair_evaluations: 4_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solved {
    pub labeling: Labeling,
    pub objective: f64,
}

/// All partitions of `V_t` into connected cells, as a cell index per node
/// of `g.frame_nodes(t)`. Cells are numbered in order of first appearance.
pub fn connected_partitions(g: &HypothesisGraph, t: usize) -> Vec<Vec<u8>> {
    let nodes = g.frame_nodes(t);
    let n = nodes.len();
    let local: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut adj = vec![Vec::new(); n];
    for &e in g.intra_edges(t) {
        let (a, b) = (local[&g.edge(e).u], local[&g.edge(e).v]);
        adj[a].push(b);
        adj[b].push(a);
    }

    // A block can still become connected only through unassigned nodes.
    let viable = |labels: &[u8], block: u8| -> bool {
        let k = labels.len();
        let inside = |i: usize| i >= k || labels[i] == block;
        let Some(start) = labels.iter().position(|&c| c == block) else { return true };
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] && inside(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        labels.iter().enumerate().all(|(i, &c)| c != block || seen[i])
    };

    fn rec(n: usize, labels: &mut Vec<u8>, blocks: u8, viable: &dyn Fn(&[u8], u8) -> bool, out: &mut Vec<Vec<u8>>) {
        if labels.len() == n {
            out.push(labels.clone());
            return;
        }
        for c in 0..=blocks {
            labels.push(c);
            if (0..blocks.max(c + 1)).all(|b| viable(labels, b)) {
                rec(n, labels, blocks.max(c + 1), viable, out);
            }
            labels.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, &mut Vec::with_capacity(n), 0, &viable, &mut out);
    out
}

struct FrameData {
    partitions: Vec<Vec<u8>>,
    intra: Vec<f64>,
}

/// Cost of the branching between two fixed frame partitions.
fn pair_value(g: &HypothesisGraph, t: usize, left: &[u8], right: &[u8], pos: &[usize]) -> Result<f64> {
    let nl = left.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let nr = right.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut problem = PairProblem {
        left: vec![LeftCell { capacity: 2, termination_cost: 0.0 }; nl],
        right_birth: vec![0.0; nr],
        arcs: Vec::new(),
    };
    for (i, &v) in g.frame_nodes(t).iter().enumerate() {
        problem.left[left[i] as usize].termination_cost += g.node(v).termination_cost;
    }
    for (i, &v) in g.frame_nodes(t + 1).iter().enumerate() {
        problem.right_birth[right[i] as usize] += g.node(v).birth_cost;
    }
    let mut arcs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &e in g.inter_edges(t) {
        let edge = g.edge(e);
        let (lo, hi) = if g.frame(edge.u) == t { (edge.u, edge.v) } else { (edge.v, edge.u) };
        *arcs.entry((left[pos[lo]] as usize, right[pos[hi]] as usize)).or_insert(0.0) -= edge.cost;
    }
    problem.arcs = arcs.into_iter().map(|((left, right), cost)| PairArc { left, right, cost }).collect();
    Ok(solve_pair(&problem)?.value)
}

/// Certified optimum by partition enumeration per frame plus a chain DP.
pub fn exact_solve(g: &HypothesisGraph, limits: &ExactLimits) -> Result<Solved> {
    exact_solve_with(g, limits, Execution::default())
}

pub fn exact_solve_with(g: &HypothesisGraph, limits: &ExactLimits, exec: Execution) -> Result<Solved> {
    for t in 0..g.num_frames() {
        let n = g.frame_nodes(t).len();
        if n > limits.max_nodes_per_frame {
            return Err(Error::InstanceTooLarge(format!(
                "frame {t} has {n} nodes, limit is {}",
                limits.max_nodes_per_frame
            )));
        }
    }
    let mut pos = vec![0; g.num_nodes()];
    for t in 0..g.num_frames() {
        for (i, &v) in g.frame_nodes(t).iter().enumerate() {
            pos[v] = i;
        }
    }
    let frames: Vec<FrameData> = (0..g.num_frames())
        .map(|t| {
            let partitions = connected_partitions(g, t);
            let intra = partitions
                .iter()
                .map(|p| {
                    g.intra_edges(t)
                        .iter()
                        .filter(|&&e| p[pos[g.edge(e).u]] != p[pos[g.edge(e).v]])
                        .map(|&e| g.edge(e).cost)
                        .sum()
                })
                .collect();
            FrameData { partitions, intra }
        })
        .collect();
    let evaluations: usize = frames.windows(2).map(|w| w[0].partitions.len() * w[1].partitions.len()).sum();
    if evaluations > limits.max_pair_evaluations {
        return Err(Error::InstanceTooLarge(format!(
            "{evaluations} frame-pair subproblems exceed the limit of {}",
            limits.max_pair_evaluations
        )));
    }

    // best[t][k]: optimum over frames 0..=t with frame t in partition k.
    let mut best: Vec<Vec<f64>> = vec![frames[0].intra.clone()];
    let mut argmin: Vec<Vec<usize>> = vec![vec![0; frames[0].partitions.len()]];
    for t in 1..g.num_frames() {
        let (prev, cur) = (&frames[t - 1], &frames[t]);
        let prev_best = &best[t - 1];
        let rows = par::map_range(exec, cur.partitions.len(), |k| -> Result<(f64, usize)> {
            let mut choice = (f64::INFINITY, 0);
            for (j, lp) in prev.partitions.iter().enumerate() {
                let v = prev_best[j] + pair_value(g, t - 1, lp, &cur.partitions[k], &pos)?;
                if v < choice.0 {
                    choice = (v, j);
                }
            }
            Ok((choice.0 + cur.intra[k], choice.1))
        });
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        best.push(rows.iter().map(|r| r.0).collect());
        argmin.push(rows.iter().map(|r| r.1).collect());
    }

    let last = g.num_frames() - 1;
    let mut k = 0;
    for (i, &v) in best[last].iter().enumerate() {
        if v < best[last][k] {
            k = i;
        }
    }
    let expected = best[last][k] + g.inter_cost_total();
    let mut groups = Vec::new();
    for t in (0..=last).rev() {
        let labels = &frames[t].partitions[k];
        let cells = labels.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); cells];
        for (i, &v) in g.frame_nodes(t).iter().enumerate() {
            members[labels[i] as usize].push(v);
        }
        groups.extend(members);
        k = argmin[t][k];
    }
    let p = FramePartition::from_groups(g, &groups)?;
    let q = QuotientGraph::build(g, &p)?;
    let b = solve_mcb(&q)?;
    let labeling = labeling_from_quotient(g, &q, &b)?;
    let obj = objective(g, &labeling)?;
    debug_assert!((obj - expected).abs() <= 1e-6 * (1.0 + obj.abs()), "dp {expected} vs labeling {obj}");
    Ok(Solved { labeling, objective: obj })
}

fn check_edge_limit(g: &HypothesisGraph, limits: &ExactLimits) -> Result<()> {
    if g.num_edges() > limits.max_edges || g.num_edges() >= usize::BITS as usize {
        return Err(Error::InstanceTooLarge(format!("{} edges, limit is {}", g.num_edges(), limits.max_edges)));
    }
    Ok(())
}

fn labels_of(mask: u64, m: usize) -> Vec<f64> {
    (0..m).map(|e| if mask >> e & 1 == 1 { 1.0 } else { 0.0 }).collect()
}

/// Minimum over all 0/1 edge labelings that form a lineage cut, each with
/// its cheapest admissible indicators.
pub fn exhaustive_labeling_solve(g: &HypothesisGraph, limits: &ExactLimits) -> Result<Solved> {
    check_edge_limit(g, limits)?;
    let m = g.num_edges();
    let mut best: Option<Solved> = None;
    for mask in 0..1u64 << m {
        let l = implied_indicators(g, labels_of(mask, m));
        if !check_lineage(g, &l)?.is_empty() {
            continue;
        }
        let obj = objective(g, &l)?;
        if best.as_ref().is_none_or(|b| obj < b.objective) {
            best = Some(Solved { labeling: l, objective: obj });
        }
    }
    // All-cut is always a lineage cut, so the loop found something.
    Ok(best.expect("the all-cut labeling is feasible"))
}

/// A feasible edge labeling together with the indicator freedom left.
///
/// `labeling` carries the minimal indicators. Any subset of the groups in
/// `optional_birth` / `optional_termination` may be switched to 1 as a
/// whole; every feasible labeling arises this way exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePoint {
    pub labeling: Labeling,
    pub optional_birth: Vec<Vec<NodeId>>,
    pub optional_termination: Vec<Vec<NodeId>>,
}

/// Every feasible edge labeling of a small graph.
pub fn feasible_points(g: &HypothesisGraph, limits: &ExactLimits) -> Result<Vec<FeasiblePoint>> {
    check_edge_limit(g, limits)?;
    let m = g.num_edges();
    let mut out = Vec::new();
    for mask in 0..1u64 << m {
        let l = implied_indicators(g, labels_of(mask, m));
        if !check_lineage(g, &l)?.is_empty() {
            continue;
        }
        let cell = intra_components(g, &l.edge_labels);
        let cells = cell.iter().map(|&c| c + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); cells];
        for v in 0..g.num_nodes() {
            members[cell[v]].push(v);
        }
        let optional_birth = members.iter().filter(|ms| l.birth[ms[0]] < 0.5).cloned().collect();
        let optional_termination = members.iter().filter(|ms| l.termination[ms[0]] < 0.5).cloned().collect();
        out.push(FeasiblePoint { labeling: l, optional_birth, optional_termination });
    }
    Ok(out)
}

/// Relative gap `(objective − bound) / |bound|`; zero when the two agree.
pub fn gap(objective: f64, bound: f64) -> Result<f64> {
    if !objective.is_finite() || !bound.is_finite() || bound > objective + EPSILON * (1.0 + objective.abs()) {
        return Err(Error::InvalidBound { objective, bound });
    }
    if objective - bound <= EPSILON * (1.0 + objective.abs()) {
        return Ok(0.0);
    }
    if bound == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((objective - bound) / bound.abs())
}
