//! Synthetic instances with a known lineage.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::implied_indicators;
use crate::graph::{Edge, HypothesisGraph, Labeling, Node, NodeId, DEFAULT_INDICATOR_COST};

/// Cost margin between "keep together" and "separate" edges.
pub const THETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Cells on a line; neighbourhoods stay local along one axis.
    Strip,
    /// Cells on a square grid.
    #[default]
    Plane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub frames: usize,
    pub cells_per_frame: usize,
    pub fragments_per_cell: usize,
    pub division_prob: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub layout: Layout,
    /// Each fragment links to this many nearest fragments of its frame.
    pub intra_neighbors: usize,
    /// Each fragment links to this many nearest fragments of the previous frame.
    pub temporal_neighbors: usize,
    /// Divisions stop once a frame holds this many cells (default: twice the
    /// initial count).
    pub max_cells_per_frame: Option<usize>,
    pub birth_cost: f64,
    pub termination_cost: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            frames: 3,
            cells_per_frame: 2,
            fragments_per_cell: 2,
            division_prob: 0.1,
            noise_sigma: 0.5,
            seed: 1,
            layout: Layout::Plane,
            intra_neighbors: 2,
            temporal_neighbors: 2,
            max_cells_per_frame: None,
            birth_cost: DEFAULT_INDICATOR_COST,
            termination_cost: DEFAULT_INDICATOR_COST,
        }
    }
}

/// A generated instance together with its lineage.
#[derive(Debug, Clone)]
pub struct Generated {
    pub graph: HypothesisGraph,
    pub ground_truth: Labeling,
    /// True cell of every node; cell ids are global across frames.
    pub true_cell: Vec<usize>,
    /// Parent cell of every true cell, if any.
    pub true_parent: Vec<Option<usize>>,
}

struct Cell {
    pos: (f64, f64),
    scale: f64,
    parent: Option<usize>,
}

/// Simulates a lineage forest and scores fragment pairs against it.
pub fn generate(params: &GeneratorParams) -> Result<Generated> {
    validate(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let spacing = 4.0;
    let cap = params.max_cells_per_frame.unwrap_or(2 * params.cells_per_frame);

    let mut cells: Vec<Cell> = Vec::new();
    let mut frame_cells: Vec<Vec<usize>> = Vec::with_capacity(params.frames);
    let side = (params.cells_per_frame as f64).sqrt().ceil() as usize;
    let first: Vec<usize> = (0..params.cells_per_frame)
        .map(|i| {
            let pos = match params.layout {
                Layout::Strip => (i as f64 * spacing, 0.0),
                Layout::Plane => ((i % side) as f64 * spacing, (i / side) as f64 * spacing),
            };
            cells.push(Cell { pos, scale: 1.0, parent: None });
            cells.len() - 1
        })
        .collect();
    frame_cells.push(first);
    for t in 1..params.frames {
        let prev = frame_cells[t - 1].clone();
        let mut count = prev.len();
        let mut next = Vec::with_capacity(prev.len());
        for (k, &c) in prev.iter().enumerate() {
            let (pos, scale) = (cells[c].pos, cells[c].scale);
            let divide = params.division_prob > 0.0 && rng.random_bool(params.division_prob) && count < cap;
            if divide {
                count += 1;
                let off = 0.25 * spacing * scale;
                let vertical = params.layout == Layout::Plane && (t + k) % 2 == 1;
                let shifts = if vertical { [(0.0, -off), (0.0, off)] } else { [(-off, 0.0), (off, 0.0)] };
                for (dx, dy) in shifts {
                    cells.push(Cell { pos: (pos.0 + dx, pos.1 + dy), scale: scale * 0.5, parent: Some(c) });
                    next.push(cells.len() - 1);
                }
            } else {
                cells.push(Cell { pos, scale, parent: Some(c) });
                next.push(cells.len() - 1);
            }
        }
        frame_cells.push(next);
    }

    // Fragments on a small ring around their cell's centre.
    let f = params.fragments_per_cell;
    let mut nodes = Vec::new();
    let mut true_cell = Vec::new();
    let mut pos = Vec::new();
    let mut frame_nodes: Vec<Vec<NodeId>> = vec![Vec::new(); params.frames];
    let mut first_fragment = vec![0; cells.len()];
    for (t, list) in frame_cells.iter().enumerate() {
        for &c in list {
            first_fragment[c] = nodes.len();
            let r = 0.1 * spacing * cells[c].scale;
            for k in 0..f {
                let angle = std::f64::consts::TAU * k as f64 / f as f64;
                let p = if f == 1 { cells[c].pos } else { (cells[c].pos.0 + r * angle.cos(), cells[c].pos.1 + r * angle.sin()) };
                frame_nodes[t].push(nodes.len());
                nodes.push(Node { frame: t, birth_cost: params.birth_cost, termination_cost: params.termination_cost });
                true_cell.push(c);
                pos.push(p);
            }
        }
    }

    let mut pairs: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut add = |a: NodeId, b: NodeId| {
        pairs.insert((a.min(b), a.max(b)));
    };
    for (t, list) in frame_cells.iter().enumerate() {
        for &c in list {
            for k in 1..f {
                add(first_fragment[c] + k - 1, first_fragment[c] + k);
            }
            if let Some(p) = cells[c].parent {
                add(first_fragment[p], first_fragment[c]);
            }
        }
        for &v in &frame_nodes[t] {
            for w in nearest(&pos, &frame_nodes[t], v, params.intra_neighbors) {
                add(v, w);
            }
            if t > 0 {
                for w in nearest(&pos, &frame_nodes[t - 1], v, params.temporal_neighbors) {
                    add(v, w);
                }
            }
        }
    }

    let mut edges = Vec::with_capacity(pairs.len());
    for (u, v) in pairs {
        let (cu, cv) = (true_cell[u], true_cell[v]);
        let together = if nodes[u].frame == nodes[v].frame {
            cu == cv
        } else {
            cells[cu].parent == Some(cv) || cells[cv].parent == Some(cu)
        };
        let mean = if together { THETA } else { -THETA };
        let noise: f64 = StandardNormal.sample(&mut rng);
        edges.push(Edge { u, v, cost: mean + params.noise_sigma * noise });
    }

    let graph = HypothesisGraph::new(params.frames, nodes, edges)?;
    let labels = graph
        .edges()
        .iter()
        .map(|e| {
            let (cu, cv) = (true_cell[e.u], true_cell[e.v]);
            let uncut = cu == cv || cells[cu].parent == Some(cv) || cells[cv].parent == Some(cu);
            if uncut { 0.0 } else { 1.0 }
        })
        .collect();
    let ground_truth = implied_indicators(&graph, labels);
    let true_parent = cells.iter().map(|c| c.parent).collect();
    Ok(Generated { graph, ground_truth, true_cell, true_parent })
}

fn validate(p: &GeneratorParams) -> Result<()> {
    let bad = |msg: &str| Err(Error::DegenerateParams(msg.to_string()));
    if p.frames == 0 || p.cells_per_frame == 0 || p.fragments_per_cell == 0 {
        return bad("frames, cells_per_frame and fragments_per_cell must be positive");
    }
    if !(0.0..=1.0).contains(&p.division_prob) {
        return bad("division_prob must lie in [0, 1]");
    }
    if !p.noise_sigma.is_finite() || p.noise_sigma < 0.0 {
        return bad("noise_sigma must be finite and non-negative");
    }
    if !(p.birth_cost >= 0.0 && p.termination_cost >= 0.0 && p.birth_cost.is_finite() && p.termination_cost.is_finite()) {
        return bad("birth and termination costs must be finite and non-negative");
    }
    Ok(())
}

/// The `k` nodes of `candidates` closest to `v` (excluding `v`), ties by id.
fn nearest(pos: &[(f64, f64)], candidates: &[NodeId], v: NodeId, k: usize) -> Vec<NodeId> {
    if k == 0 {
        return Vec::new();
    }
    let d = |w: NodeId| (pos[w].0 - pos[v].0).powi(2) + (pos[w].1 - pos[v].1).powi(2);
    let mut scored: Vec<(f64, NodeId)> = candidates.iter().filter(|&&w| w != v).map(|&w| (d(w), w)).collect();
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    scored.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, w)| w).collect()
}

/// Parameters for small random graphs with integer costs, used by oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomGraphParams {
    pub frames: usize,
    pub max_nodes_per_frame: usize,
    pub intra_prob: f64,
    pub inter_prob: f64,
    pub max_edges: usize,
    /// Cut costs are drawn uniformly from `-cost_range..=cost_range`.
    pub cost_range: i64,
    /// Indicator costs are drawn uniformly from `0..=indicator_range`.
    pub indicator_range: i64,
}

impl Default for RandomGraphParams {
    fn default() -> Self {
        Self { frames: 3, max_nodes_per_frame: 5, intra_prob: 0.5, inter_prob: 0.4, max_edges: 16, cost_range: 5, indicator_range: 5 }
    }
}

/// Random frame-structured graph; at most `max_edges` edges are kept, in
/// random order.
pub fn random_graph(rng: &mut impl Rng, p: &RandomGraphParams) -> HypothesisGraph {
    let mut nodes = Vec::new();
    let mut frame_nodes = Vec::new();
    for t in 0..p.frames {
        let n = rng.random_range(1..=p.max_nodes_per_frame);
        let ids: Vec<NodeId> = (nodes.len()..nodes.len() + n).collect();
        for _ in 0..n {
            nodes.push(Node {
                frame: t,
                birth_cost: rng.random_range(0..=p.indicator_range) as f64,
                termination_cost: rng.random_range(0..=p.indicator_range) as f64,
            });
        }
        frame_nodes.push(ids);
    }
    let mut candidates = Vec::new();
    for t in 0..p.frames {
        let here = &frame_nodes[t];
        for i in 0..here.len() {
            for j in i + 1..here.len() {
                if rng.random_bool(p.intra_prob) {
                    candidates.push((here[i], here[j]));
                }
            }
            if t + 1 < p.frames {
                for &w in &frame_nodes[t + 1] {
                    if rng.random_bool(p.inter_prob) {
                        candidates.push((here[i], w));
                    }
                }
            }
        }
    }
    for i in (1..candidates.len()).rev() {
        let j = rng.random_range(0..=i);
        candidates.swap(i, j);
    }
    candidates.truncate(p.max_edges);
    candidates.sort_unstable();
    let edges = candidates
        .into_iter()
        .map(|(u, v)| Edge { u, v, cost: rng.random_range(-p.cost_range..=p.cost_range) as f64 })
        .collect();
    HypothesisGraph::new(p.frames, nodes, edges).expect("random graphs respect the frame rules")
}
