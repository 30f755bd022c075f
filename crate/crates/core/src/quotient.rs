//! Cells of a per-frame partition and the directed quotient graph over them.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::hash::BuildHasherDefault;
use std::collections::hash_map::DefaultHasher;

use crate::error::{Error, Result};
use crate::graph::{EdgeId, EdgeKind, HypothesisGraph, Labeling, NodeId};

pub type CellId = usize;
pub type ArcId = usize;

/// Hash map with a fixed hasher so iteration order is reproducible.
pub(crate) type DetMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

/// Decomposition of every frame into connected cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePartition {
    cell_of: Vec<CellId>,
    members: Vec<Vec<NodeId>>,
    cell_frame: Vec<usize>,
    frame_cells: Vec<Vec<CellId>>,
}

impl FramePartition {
    /// Validates a node-to-cell map. Cell ids must be dense; every cell must
    /// lie in one frame and be connected in `G_t`.
    pub fn from_cell_of(g: &HypothesisGraph, cell_of: Vec<CellId>) -> Result<Self> {
        if cell_of.len() != g.num_nodes() {
            return Err(Error::PartitionGraphMismatch(format!(
                "partition covers {} nodes, graph has {}",
                cell_of.len(),
                g.num_nodes()
            )));
        }
        let num_cells = cell_of.iter().map(|&c| c + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); num_cells];
        for (v, &c) in cell_of.iter().enumerate() {
            members[c].push(v);
        }
        let mut cell_frame = Vec::with_capacity(num_cells);
        let mut frame_cells = vec![Vec::new(); g.num_frames()];
        for (c, nodes) in members.iter().enumerate() {
            let Some(&first) = nodes.first() else {
                return Err(Error::InvalidPartition(format!("cell id {c} is unused; ids must be dense")));
            };
            let t = g.frame(first);
            if let Some(&v) = nodes.iter().find(|&&v| g.frame(v) != t) {
                return Err(Error::InvalidPartition(format!("cell {c} spans frames {t} and {}", g.frame(v))));
            }
            if !is_connected(g, nodes, |v| cell_of[v] == c) {
                return Err(Error::InvalidPartition(format!("cell {c} is not connected in its frame")));
            }
            cell_frame.push(t);
            frame_cells[t].push(c);
        }
        Ok(Self { cell_of, members, cell_frame, frame_cells })
    }

    /// Builds a partition from explicit node groups; group `i` becomes cell `i`.
    pub fn from_groups(g: &HypothesisGraph, groups: &[Vec<NodeId>]) -> Result<Self> {
        let mut cell_of = vec![usize::MAX; g.num_nodes()];
        for (c, group) in groups.iter().enumerate() {
            for &v in group {
                if v >= g.num_nodes() {
                    return Err(Error::PartitionGraphMismatch(format!("node {v} does not exist")));
                }
                if cell_of[v] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("node {v} appears in two cells")));
                }
                cell_of[v] = c;
            }
        }
        if let Some(v) = cell_of.iter().position(|&c| c == usize::MAX) {
            return Err(Error::InvalidPartition(format!("node {v} is not covered")));
        }
        Self::from_cell_of(g, cell_of)
    }

    /// Every node in its own cell; cell ids equal node ids.
    pub fn singletons(g: &HypothesisGraph) -> Self {
        Self::from_cell_of(g, (0..g.num_nodes()).collect()).expect("singletons are always valid")
    }

    /// Connected components of the uncut intra-frame edges, numbered by their
    /// lowest node id.
    pub fn from_labeling(g: &HypothesisGraph, l: &Labeling) -> Result<Self> {
        l.check_dimensions(g)?;
        Self::from_cell_of(g, intra_components(g, &l.edge_labels))
    }

    pub fn num_cells(&self) -> usize {
        self.members.len()
    }

    pub fn cell_of(&self, v: NodeId) -> CellId {
        self.cell_of[v]
    }

    pub fn cell_map(&self) -> &[CellId] {
        &self.cell_of
    }

    /// Members of `c` in increasing node order.
    pub fn members(&self, c: CellId) -> &[NodeId] {
        &self.members[c]
    }

    pub fn frame_of_cell(&self, c: CellId) -> usize {
        self.cell_frame[c]
    }

    pub fn frame_cells(&self, t: usize) -> &[CellId] {
        &self.frame_cells[t]
    }

    /// Member sets in a form independent of cell numbering.
    pub fn canonical_cells(&self) -> BTreeSet<Vec<NodeId>> {
        self.members.iter().cloned().collect()
    }
}

/// Components of uncut intra edges (label < 0.5), numbered by lowest node.
pub fn intra_components(g: &HypothesisGraph, edge_labels: &[f64]) -> Vec<CellId> {
    let mut uf = petgraph::unionfind::UnionFind::<usize>::new(g.num_nodes());
    for (e, edge) in g.edges().iter().enumerate() {
        if g.is_intra(e) && edge_labels[e] < 0.5 {
            uf.union(edge.u, edge.v);
        }
    }
    let mut id_of_root = vec![usize::MAX; g.num_nodes()];
    let mut next = 0;
    (0..g.num_nodes())
        .map(|v| {
            let r = uf.find_mut(v);
            if id_of_root[r] == usize::MAX {
                id_of_root[r] = next;
                next += 1;
            }
            id_of_root[r]
        })
        .collect()
}

/// Whether `nodes` induce a connected subgraph, where membership is given by
/// `inside` and only intra-frame edges count.
pub(crate) fn is_connected(g: &HypothesisGraph, nodes: &[NodeId], inside: impl Fn(NodeId) -> bool) -> bool {
    let Some(&start) = nodes.first() else { return true };
    let mut seen = DetMap::default();
    seen.insert(start, ());
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &(w, e) in g.neighbors(v) {
            if g.is_intra(e) && inside(w) && seen.insert(w, ()).is_none() {
                stack.push(w);
            }
        }
    }
    seen.len() == nodes.len()
}

/// Splits `nodes` into connected components of the intra edges they induce.
/// Components come out ordered by their lowest node, members sorted.
pub fn connected_groups(g: &HypothesisGraph, nodes: &[NodeId]) -> Vec<Vec<NodeId>> {
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    let index: DetMap<NodeId, usize> = sorted.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut comp = vec![usize::MAX; sorted.len()];
    let mut groups = Vec::new();
    for start in 0..sorted.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        comp[start] = id;
        let mut group = vec![sorted[start]];
        let mut stack = vec![sorted[start]];
        while let Some(v) = stack.pop() {
            for &(w, e) in g.neighbors(v) {
                if !g.is_intra(e) {
                    continue;
                }
                if let Some(&i) = index.get(&w) {
                    if comp[i] == usize::MAX {
                        comp[i] = id;
                        group.push(w);
                        stack.push(w);
                    }
                }
            }
        }
        group.sort_unstable();
        groups.push(group);
    }
    groups
}

/// A bundle of inter-frame edges from a cell at `t` to a cell at `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub a: CellId,
    pub b: CellId,
    pub edges: Vec<EdgeId>,
    /// `-Σ c_e` over the bundled edges.
    pub cost: f64,
}

/// Directed acyclic graph over the cells of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientGraph {
    partition: FramePartition,
    num_frames: usize,
    arcs: Vec<Arc>,
    out_arcs: Vec<Vec<ArcId>>,
    in_arcs: Vec<Vec<ArcId>>,
    birth_cost: Vec<f64>,
    termination_cost: Vec<f64>,
}

impl QuotientGraph {
    /// Aggregates arcs and indicator costs. Arcs are ordered by `(a, b)` and
    /// their edge lists by edge id.
    pub fn build(g: &HypothesisGraph, p: &FramePartition) -> Result<Self> {
        if p.cell_map().len() != g.num_nodes() {
            return Err(Error::PartitionGraphMismatch("node count differs".into()));
        }
        let mut bundles: std::collections::BTreeMap<(CellId, CellId), Vec<EdgeId>> = Default::default();
        for (e, edge) in g.edges().iter().enumerate() {
            if let EdgeKind::Inter(t) = g.kind(e) {
                let (lo, hi) = if g.frame(edge.u) == t { (edge.u, edge.v) } else { (edge.v, edge.u) };
                bundles.entry((p.cell_of(lo), p.cell_of(hi))).or_default().push(e);
            }
        }
        let n = p.num_cells();
        let mut arcs = Vec::with_capacity(bundles.len());
        let mut out_arcs = vec![Vec::new(); n];
        let mut in_arcs = vec![Vec::new(); n];
        for ((a, b), edges) in bundles {
            let cost = -edges.iter().map(|&e| g.edge(e).cost).sum::<f64>();
            out_arcs[a].push(arcs.len());
            in_arcs[b].push(arcs.len());
            arcs.push(Arc { a, b, edges, cost });
        }
        let sum = |c: CellId, f: &dyn Fn(NodeId) -> f64| p.members(c).iter().map(|&v| f(v)).sum::<f64>();
        let birth_cost = (0..n).map(|c| sum(c, &|v| g.node(v).birth_cost)).collect();
        let termination_cost = (0..n).map(|c| sum(c, &|v| g.node(v).termination_cost)).collect();
        Ok(Self { partition: p.clone(), num_frames: g.num_frames(), arcs, out_arcs, in_arcs, birth_cost, termination_cost })
    }

    pub fn partition(&self) -> &FramePartition {
        &self.partition
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_cells(&self) -> usize {
        self.partition.num_cells()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, id: ArcId) -> &Arc {
        &self.arcs[id]
    }

    pub fn out_arcs(&self, c: CellId) -> &[ArcId] {
        &self.out_arcs[c]
    }

    pub fn in_arcs(&self, c: CellId) -> &[ArcId] {
        &self.in_arcs[c]
    }

    pub fn birth_cost(&self, c: CellId) -> f64 {
        self.birth_cost[c]
    }

    pub fn termination_cost(&self, c: CellId) -> f64 {
        self.termination_cost[c]
    }

    pub fn frame_of_cell(&self, c: CellId) -> usize {
        self.partition.frame_of_cell(c)
    }

    pub fn find_arc(&self, a: CellId, b: CellId) -> Option<ArcId> {
        self.out_arcs[a].iter().copied().find(|&id| self.arcs[id].b == b)
    }

    /// Whether a cell may pay a birth cost (not in the first frame).
    pub fn birth_eligible(&self, c: CellId) -> bool {
        self.frame_of_cell(c) > 0
    }

    /// Whether a cell may pay a termination cost (not in the last frame).
    pub fn termination_eligible(&self, c: CellId) -> bool {
        self.frame_of_cell(c) + 1 < self.num_frames
    }

    /// Cells of frames `t` and `t + 1` and the arcs between them.
    pub fn frame_pair_subgraph(&self, t: usize) -> Result<FramePairView> {
        if t + 1 >= self.num_frames {
            return Err(Error::FrameOutOfRange { frame: t, num_frames: self.num_frames });
        }
        let left = self.partition.frame_cells(t).to_vec();
        let right = self.partition.frame_cells(t + 1).to_vec();
        let arcs = left.iter().flat_map(|&a| self.out_arcs[a].iter().copied()).collect();
        Ok(FramePairView { t, left, right, arcs })
    }

    /// Cells within `d_hops` undirected arc hops of the seeds, restricted to
    /// the frames adjacent to the seeds. `None` means unbounded.
    pub fn local_neighborhood(&self, seeds: &[CellId], d_hops: Option<usize>) -> Result<BTreeSet<CellId>> {
        for &s in seeds {
            if s >= self.num_cells() {
                return Err(Error::UnknownCell(s));
            }
        }
        let frames: BTreeSet<usize> = seeds.iter().map(|&s| self.frame_of_cell(s)).collect();
        let in_range = |c: CellId| {
            let f = self.frame_of_cell(c);
            frames.iter().any(|&t| f + 1 >= t && f <= t + 1)
        };
        bounded_bfs(seeds, d_hops, in_range, |c, out: &mut Vec<CellId>| {
            out.extend(self.out_arcs[c].iter().map(|&a| self.arcs[a].b));
            out.extend(self.in_arcs[c].iter().map(|&a| self.arcs[a].a));
        })
    }
}

/// Breadth-first search up to `d_hops` layers through cells accepted by `keep`.
pub(crate) fn bounded_bfs(
    seeds: &[CellId],
    d_hops: Option<usize>,
    keep: impl Fn(CellId) -> bool,
    mut adjacent: impl FnMut(CellId, &mut Vec<CellId>),
) -> Result<BTreeSet<CellId>> {
    let mut seen: BTreeSet<CellId> = seeds.iter().copied().collect();
    let mut queue: VecDeque<(CellId, usize)> = seeds.iter().map(|&s| (s, 0)).collect();
    let mut buf = Vec::new();
    while let Some((c, depth)) = queue.pop_front() {
        if d_hops.is_some_and(|d| depth >= d) {
            continue;
        }
        buf.clear();
        adjacent(c, &mut buf);
        for &n in &buf {
            if keep(n) && seen.insert(n) {
                queue.push_back((n, depth + 1));
            }
        }
    }
    Ok(seen)
}

/// The part of a quotient graph spanned by frames `t` and `t + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePairView {
    pub t: usize,
    pub left: Vec<CellId>,
    pub right: Vec<CellId>,
    pub arcs: Vec<ArcId>,
}

/// Aggregated cost and multiplicity of the edges between two cells.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bundle {
    /// `Σ c_e` over the edges (not negated).
    pub cost: f64,
    pub count: u32,
}

impl Bundle {
    fn add(&mut self, cost: f64) {
        self.cost += cost;
        self.count += 1;
    }
}

/// Quotient structure under local edits. Cell ids are never reused; replaced
/// cells stay allocated but empty.
#[derive(Debug, Clone)]
pub struct DynamicQuotient<'g> {
    g: &'g HypothesisGraph,
    cell_of: Vec<CellId>,
    members: Vec<Vec<NodeId>>,
    frame: Vec<usize>,
    intra: Vec<DetMap<CellId, Bundle>>,
    out: Vec<DetMap<CellId, Bundle>>,
    inn: Vec<DetMap<CellId, Bundle>>,
    birth_cost: Vec<f64>,
    termination_cost: Vec<f64>,
    frame_alive: Vec<BTreeSet<CellId>>,
}

impl<'g> DynamicQuotient<'g> {
    pub fn new(g: &'g HypothesisGraph, p: &FramePartition) -> Self {
        let mut dq = Self {
            g,
            cell_of: vec![usize::MAX; g.num_nodes()],
            members: Vec::new(),
            frame: Vec::new(),
            intra: Vec::new(),
            out: Vec::new(),
            inn: Vec::new(),
            birth_cost: Vec::new(),
            termination_cost: Vec::new(),
            frame_alive: vec![BTreeSet::new(); g.num_frames()],
        };
        let groups: Vec<Vec<NodeId>> = (0..p.num_cells()).map(|c| p.members(c).to_vec()).collect();
        dq.insert_cells(groups);
        dq
    }

    pub fn graph(&self) -> &'g HypothesisGraph {
        self.g
    }

    /// Upper bound on cell ids handed out so far.
    pub fn id_bound(&self) -> usize {
        self.members.len()
    }

    pub fn is_alive(&self, c: CellId) -> bool {
        c < self.members.len() && !self.members[c].is_empty()
    }

    pub fn cell_of(&self, v: NodeId) -> CellId {
        self.cell_of[v]
    }

    pub fn members(&self, c: CellId) -> &[NodeId] {
        &self.members[c]
    }

    pub fn frame(&self, c: CellId) -> usize {
        self.frame[c]
    }

    /// Live cells of frame `t` in increasing id order.
    pub fn frame_cells(&self, t: usize) -> impl Iterator<Item = CellId> + '_ {
        self.frame_alive[t].iter().copied()
    }

    pub fn alive_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        self.frame_alive.iter().flat_map(|s| s.iter().copied())
    }

    /// Same-frame neighbours with the summed cost of the joining edges.
    pub fn intra_neighbors(&self, c: CellId) -> &DetMap<CellId, Bundle> {
        &self.intra[c]
    }

    /// Cells of the next frame reachable by an arc.
    pub fn successors(&self, c: CellId) -> &DetMap<CellId, Bundle> {
        &self.out[c]
    }

    /// Cells of the previous frame with an arc into `c`.
    pub fn predecessors(&self, c: CellId) -> &DetMap<CellId, Bundle> {
        &self.inn[c]
    }

    /// Arc cost `c_ab = -Σ c_e`, if the arc exists.
    pub fn arc_cost(&self, a: CellId, b: CellId) -> Option<f64> {
        self.out[a].get(&b).map(|bundle| -bundle.cost)
    }

    pub fn birth_cost(&self, c: CellId) -> f64 {
        self.birth_cost[c]
    }

    pub fn termination_cost(&self, c: CellId) -> f64 {
        self.termination_cost[c]
    }

    /// Replaces `old` cells by `groups` (all in one frame, covering exactly
    /// the old members). Each group becomes the connected components it
    /// induces. Returns the new cell ids.
    pub fn replace(&mut self, old: &[CellId], groups: Vec<Vec<NodeId>>) -> Vec<CellId> {
        for &c in old {
            self.remove_cell(c);
        }
        let split: Vec<Vec<NodeId>> =
            groups.into_iter().filter(|gr| !gr.is_empty()).flat_map(|gr| connected_groups(self.g, &gr)).collect();
        self.insert_cells(split)
    }

    /// Merges two same-frame cells into one.
    pub fn merge(&mut self, a: CellId, b: CellId) -> CellId {
        let mut nodes = self.members[a].clone();
        nodes.extend_from_slice(&self.members[b]);
        self.replace(&[a, b], vec![nodes])[0]
    }

    /// Moves `v` to cell `target` of the same frame, re-splitting the source
    /// cell if it disconnects. Returns the new ids for (target, source parts).
    pub fn move_node(&mut self, v: NodeId, target: CellId) -> Vec<CellId> {
        let source = self.cell_of[v];
        let mut to = self.members[target].clone();
        to.push(v);
        let from: Vec<NodeId> = self.members[source].iter().copied().filter(|&w| w != v).collect();
        self.replace(&[target, source], vec![to, from])
    }

    /// Splits `c` into the given groups.
    pub fn split(&mut self, c: CellId, groups: Vec<Vec<NodeId>>) -> Vec<CellId> {
        self.replace(&[c], groups)
    }

    fn remove_cell(&mut self, c: CellId) {
        let intra = std::mem::take(&mut self.intra[c]);
        for n in intra.keys() {
            self.intra[*n].remove(&c);
        }
        let out = std::mem::take(&mut self.out[c]);
        for n in out.keys() {
            self.inn[*n].remove(&c);
        }
        let inn = std::mem::take(&mut self.inn[c]);
        for n in inn.keys() {
            self.out[*n].remove(&c);
        }
        self.frame_alive[self.frame[c]].remove(&c);
        self.members[c].clear();
    }

    fn insert_cells(&mut self, groups: Vec<Vec<NodeId>>) -> Vec<CellId> {
        let first = self.members.len();
        let ids: Vec<CellId> = (first..first + groups.len()).collect();
        for (mut nodes, &c) in groups.into_iter().zip(&ids) {
            nodes.sort_unstable();
            let t = self.g.frame(nodes[0]);
            for &v in &nodes {
                self.cell_of[v] = c;
            }
            self.birth_cost.push(nodes.iter().map(|&v| self.g.node(v).birth_cost).sum());
            self.termination_cost.push(nodes.iter().map(|&v| self.g.node(v).termination_cost).sum());
            self.members.push(nodes);
            self.frame.push(t);
            self.intra.push(DetMap::default());
            self.out.push(DetMap::default());
            self.inn.push(DetMap::default());
            self.frame_alive[t].insert(c);
        }
        for &c in &ids {
            for i in 0..self.members[c].len() {
                let v = self.members[c][i];
                for &(w, e) in self.g.neighbors(v) {
                    let cw = self.cell_of[w];
                    if cw == c {
                        continue;
                    }
                    let cost = self.g.edge(e).cost;
                    let fresh = cw >= first;
                    let (tv, tw) = (self.frame[c], self.frame[cw]);
                    if tv == tw {
                        self.intra[c].entry(cw).or_default().add(cost);
                        if !fresh {
                            self.intra[cw].entry(c).or_default().add(cost);
                        }
                    } else if tw == tv + 1 {
                        self.out[c].entry(cw).or_default().add(cost);
                        if !fresh {
                            self.inn[cw].entry(c).or_default().add(cost);
                        }
                    } else {
                        self.inn[c].entry(cw).or_default().add(cost);
                        if !fresh {
                            self.out[cw].entry(c).or_default().add(cost);
                        }
                    }
                }
            }
        }
        ids
    }

    /// Compact partition with cells numbered by lowest member node.
    pub fn to_partition(&self) -> FramePartition {
        let mut cells: Vec<&Vec<NodeId>> = self.members.iter().filter(|m| !m.is_empty()).collect();
        cells.sort_by_key(|m| m[0]);
        let mut cell_of = vec![0; self.g.num_nodes()];
        for (i, m) in cells.iter().enumerate() {
            for &v in m.iter() {
                cell_of[v] = i;
            }
        }
        FramePartition::from_cell_of(self.g, cell_of).expect("dynamic cells stay connected")
    }

    /// Arcs keyed by member sets, for comparison with a rebuilt quotient.
    pub fn canonical_arcs(&self) -> Vec<(Vec<NodeId>, Vec<NodeId>, u32, f64)> {
        let mut arcs: Vec<_> = self
            .alive_cells()
            .flat_map(|a| {
                self.out[a].iter().map(move |(&b, bundle)| {
                    (self.members[a].clone(), self.members[b].clone(), bundle.count, -bundle.cost)
                })
            })
            .collect();
        arcs.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
        arcs
    }
}

impl QuotientGraph {
    /// Arcs keyed by member sets, for comparison with a dynamic quotient.
    pub fn canonical_arcs(&self) -> Vec<(Vec<NodeId>, Vec<NodeId>, u32, f64)> {
        let p = &self.partition;
        let mut arcs: Vec<_> = self
            .arcs
            .iter()
            .map(|arc| (p.members(arc.a).to_vec(), p.members(arc.b).to_vec(), arc.edges.len() as u32, arc.cost))
            .collect();
        arcs.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
        arcs
    }
}
