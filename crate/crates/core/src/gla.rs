//! Greedy lineage agglomeration.
//!
//! Starts from the all-singleton labeling (every edge cut, every eligible
//! birth and termination paid) and repeatedly applies the best of three
//! transformations: merging two adjacent cells of one frame, giving a
//! parentless cell a parent, or moving a cell to another parent. Candidate
//! transformations live in a priority queue; entries are invalidated lazily
//! through per-key version counters.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{objective, EdgeKind, HypothesisGraph, Labeling, EPSILON};
use crate::quotient::{CellId, DetMap};

#[derive(Debug, Clone, Copy)]
pub struct GlaConfig {
    pub epsilon: f64,
    /// Stop after this many applied transformations.
    pub max_steps: Option<usize>,
    /// Recompute the objective from scratch after every step and record it.
    pub audit: bool,
}

impl Default for GlaConfig {
    fn default() -> Self {
        Self { epsilon: EPSILON, max_steps: None, audit: false }
    }
}

/// Variant order doubles as the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Merge,
    SetParent,
    ChangeParent,
}

/// A queued transformation. For parent changes `a` is the new parent and
/// `b` the child; `new_parent` repeats `a` for readability of traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transformation {
    pub kind: TransformKind,
    pub a: CellId,
    pub b: CellId,
    pub new_parent: Option<CellId>,
    pub delta: f64,
    pub version: u64,
}

impl Eq for Transformation {}

impl Ord for Transformation {
    fn cmp(&self, other: &Self) -> Ordering {
        self.delta
            .total_cmp(&other.delta)
            .then(self.kind.cmp(&other.kind))
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
            .then(self.version.cmp(&other.version))
    }
}

impl PartialOrd for Transformation {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub kind: TransformKind,
    pub a: CellId,
    pub b: CellId,
    /// Parent given up by `b` in a parent change.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub old_parent: Option<CellId>,
    pub delta: f64,
    /// Tracked objective after the step.
    pub objective: f64,
    /// Objective recomputed from the labeling, when auditing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audited: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GlaResult {
    pub labeling: Labeling,
    pub objective: f64,
    pub initial_objective: f64,
    pub trace: Vec<TraceStep>,
}

/// Cells, their aggregated edge costs, and the current lineage links.
#[derive(Debug, Clone)]
pub struct GlaState<'g> {
    g: &'g HypothesisGraph,
    forward: Vec<CellId>,
    alive: Vec<bool>,
    frame: Vec<usize>,
    birth: Vec<f64>,
    termination: Vec<f64>,
    parent: Vec<Option<CellId>>,
    children: Vec<Vec<CellId>>,
    intra: Vec<DetMap<CellId, f64>>,
    out: Vec<DetMap<CellId, f64>>,
    inn: Vec<DetMap<CellId, f64>>,
    objective: f64,
}

impl<'g> GlaState<'g> {
    /// All-singleton state; cell ids equal node ids.
    pub fn new(g: &'g HypothesisGraph) -> Self {
        let n = g.num_nodes();
        let last = g.last_frame();
        let mut intra = vec![DetMap::default(); n];
        let mut out = vec![DetMap::default(); n];
        let mut inn = vec![DetMap::default(); n];
        let mut objective = 0.0;
        for (e, edge) in g.edges().iter().enumerate() {
            objective += edge.cost;
            match g.kind(e) {
                EdgeKind::Intra(_) => {
                    *intra[edge.u].entry(edge.v).or_insert(0.0) += edge.cost;
                    *intra[edge.v].entry(edge.u).or_insert(0.0) += edge.cost;
                }
                EdgeKind::Inter(t) => {
                    let (lo, hi) = if g.frame(edge.u) == t { (edge.u, edge.v) } else { (edge.v, edge.u) };
                    *out[lo].entry(hi).or_insert(0.0) += edge.cost;
                    *inn[hi].entry(lo).or_insert(0.0) += edge.cost;
                }
            }
        }
        let frame: Vec<usize> = (0..n).map(|v| g.frame(v)).collect();
        let birth: Vec<f64> = g.nodes().iter().map(|x| x.birth_cost).collect();
        let termination: Vec<f64> = g.nodes().iter().map(|x| x.termination_cost).collect();
        for v in 0..n {
            if frame[v] > 0 {
                objective += birth[v];
            }
            if frame[v] < last {
                objective += termination[v];
            }
        }
        Self {
            g,
            forward: (0..n).collect(),
            alive: vec![true; n],
            frame,
            birth,
            termination,
            parent: vec![None; n],
            children: vec![Vec::new(); n],
            intra,
            out,
            inn,
            objective,
        }
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn is_alive(&self, c: CellId) -> bool {
        c < self.alive.len() && self.alive[c]
    }

    pub fn parent(&self, c: CellId) -> Option<CellId> {
        self.parent[c]
    }

    pub fn children(&self, c: CellId) -> &[CellId] {
        &self.children[c]
    }

    /// Cell currently containing node `v`.
    pub fn cell_of(&mut self, v: usize) -> CellId {
        let mut root = v;
        while self.forward[root] != root {
            root = self.forward[root];
        }
        let mut cur = v;
        while self.forward[cur] != root {
            let next = self.forward[cur];
            self.forward[cur] = root;
            cur = next;
        }
        root
    }

    fn check_cell(&self, c: CellId) -> Result<()> {
        if self.is_alive(c) {
            Ok(())
        } else {
            Err(Error::UnknownCell(c))
        }
    }

    /// Change in objective from merging `a` and `b`, or `None` when the
    /// merged cell would have two parents or more than two children.
    pub fn delta_merge(&self, a: CellId, b: CellId) -> Result<Option<f64>> {
        self.check_cell(a)?;
        self.check_cell(b)?;
        if a == b || self.frame[a] != self.frame[b] {
            return Err(Error::NotSameFrame(a, b));
        }
        let Some(&joint) = self.intra[a].get(&b) else {
            return Err(Error::NotAdjacent(a, b));
        };
        let (pa, pb) = (self.parent[a], self.parent[b]);
        if matches!((pa, pb), (Some(x), Some(y)) if x != y) {
            return Ok(None);
        }
        if self.children[a].len() + self.children[b].len() > 2 {
            return Ok(None);
        }
        let mut delta = -joint;
        match (pa, pb) {
            (Some(p), None) => delta -= self.out[p].get(&b).copied().unwrap_or(0.0) + self.birth[b],
            (None, Some(p)) => delta -= self.out[p].get(&a).copied().unwrap_or(0.0) + self.birth[a],
            _ => {}
        }
        for &d in &self.children[a] {
            delta -= self.out[b].get(&d).copied().unwrap_or(0.0);
        }
        for &d in &self.children[b] {
            delta -= self.out[a].get(&d).copied().unwrap_or(0.0);
        }
        match (self.children[a].is_empty(), self.children[b].is_empty()) {
            (false, true) => delta -= self.termination[b],
            (true, false) => delta -= self.termination[a],
            _ => {}
        }
        Ok(Some(delta))
    }

    /// Change from making `a` the parent of the parentless cell `b`.
    pub fn delta_set_parent(&self, a: CellId, b: CellId) -> Result<Option<f64>> {
        self.check_cell(a)?;
        self.check_cell(b)?;
        let Some(&bundle) = self.out[a].get(&b) else {
            return Err(Error::NoSuchArc(a, b));
        };
        if self.parent[b].is_some() || self.children[a].len() >= 2 {
            return Ok(None);
        }
        let mut delta = -bundle - self.birth[b];
        if self.children[a].is_empty() {
            delta -= self.termination[a];
        }
        Ok(Some(delta))
    }

    /// Change from moving `b` from its parent `c` to `a`.
    pub fn delta_change_parent(&self, a: CellId, b: CellId, c: CellId) -> Result<Option<f64>> {
        self.check_cell(a)?;
        self.check_cell(b)?;
        self.check_cell(c)?;
        let Some(&bundle) = self.out[a].get(&b) else {
            return Err(Error::NoSuchArc(a, b));
        };
        if self.parent[b] != Some(c) {
            return Err(Error::ArcNotActive(c, b));
        }
        if a == c || self.children[a].len() >= 2 {
            return Ok(None);
        }
        let mut delta = -bundle + self.out[c][&b];
        if self.children[a].is_empty() {
            delta -= self.termination[a];
        }
        if self.children[c].len() == 1 {
            delta += self.termination[c];
        }
        Ok(Some(delta))
    }

    /// Delta of the transformation keyed by `(kind, a, b)` in this state.
    pub fn delta(&self, kind: TransformKind, a: CellId, b: CellId) -> Result<Option<f64>> {
        match kind {
            TransformKind::Merge => self.delta_merge(a, b),
            TransformKind::SetParent => self.delta_set_parent(a, b),
            TransformKind::ChangeParent => match self.parent[b] {
                Some(c) => self.delta_change_parent(a, b, c),
                None => Ok(None),
            },
        }
    }

    /// Applies an admissible transformation and returns its delta.
    pub fn apply(&mut self, kind: TransformKind, a: CellId, b: CellId) -> Result<f64> {
        let delta = self.delta(kind, a, b)?.ok_or_else(|| Error::InvalidBranching(format!("{kind:?}({a}, {b}) is inadmissible")))?;
        match kind {
            TransformKind::Merge => self.merge(a.min(b), a.max(b)),
            TransformKind::SetParent => {
                self.parent[b] = Some(a);
                self.children[a].push(b);
            }
            TransformKind::ChangeParent => {
                let c = self.parent[b].expect("checked by delta");
                self.children[c].retain(|&x| x != b);
                self.parent[b] = Some(a);
                self.children[a].push(b);
            }
        }
        self.objective += delta;
        Ok(delta)
    }

    fn merge(&mut self, s: CellId, r: CellId) {
        self.forward[r] = s;
        self.alive[r] = false;
        self.birth[s] += self.birth[r];
        self.termination[s] += self.termination[r];

        let intra = std::mem::take(&mut self.intra[r]);
        self.intra[s].remove(&r);
        for (n, c) in intra {
            if n == s {
                continue;
            }
            self.intra[n].remove(&r);
            *self.intra[n].entry(s).or_insert(0.0) += c;
            *self.intra[s].entry(n).or_insert(0.0) += c;
        }
        let out = std::mem::take(&mut self.out[r]);
        for (n, c) in out {
            self.inn[n].remove(&r);
            *self.inn[n].entry(s).or_insert(0.0) += c;
            *self.out[s].entry(n).or_insert(0.0) += c;
        }
        let inn = std::mem::take(&mut self.inn[r]);
        for (n, c) in inn {
            self.out[n].remove(&r);
            *self.out[n].entry(s).or_insert(0.0) += c;
            *self.inn[s].entry(n).or_insert(0.0) += c;
        }

        match (self.parent[s], self.parent[r]) {
            (Some(_), Some(p)) => self.children[p].retain(|&x| x != r),
            (None, Some(p)) => {
                for x in self.children[p].iter_mut() {
                    if *x == r {
                        *x = s;
                    }
                }
                self.parent[s] = Some(p);
            }
            _ => {}
        }
        self.parent[r] = None;
        let moved = std::mem::take(&mut self.children[r]);
        for &d in &moved {
            self.parent[d] = Some(s);
        }
        self.children[s].extend(moved);
        self.children[s].sort_unstable();
    }

    /// Labeling of the current state.
    pub fn labeling(&mut self) -> Labeling {
        let g = self.g;
        let mut l = Labeling::zeros(g);
        let cells: Vec<CellId> = (0..g.num_nodes()).map(|v| self.cell_of(v)).collect();
        for (e, edge) in g.edges().iter().enumerate() {
            let (cu, cv) = (cells[edge.u], cells[edge.v]);
            let uncut = match g.kind(e) {
                EdgeKind::Intra(_) => cu == cv,
                EdgeKind::Inter(t) => {
                    let (lo, hi) = if g.frame(edge.u) == t { (cu, cv) } else { (cv, cu) };
                    self.parent[hi] == Some(lo)
                }
            };
            l.edge_labels[e] = if uncut { 0.0 } else { 1.0 };
        }
        let last = g.last_frame();
        for v in 0..g.num_nodes() {
            let c = cells[v];
            let t = g.frame(v);
            l.birth[v] = if t > 0 && self.parent[c].is_none() { 1.0 } else { 0.0 };
            l.termination[v] = if t < last && self.children[c].is_empty() { 1.0 } else { 0.0 };
        }
        l
    }

    /// Keys of every transformation touching cell `x`.
    fn keys_around(&self, x: CellId, keys: &mut BTreeSet<(TransformKind, CellId, CellId)>) {
        for &n in self.intra[x].keys() {
            keys.insert((TransformKind::Merge, x.min(n), x.max(n)));
        }
        for &b in self.out[x].keys() {
            keys.insert(self.parent_key(x, b));
        }
        for &p in self.inn[x].keys() {
            keys.insert(self.parent_key(p, x));
        }
    }

    fn parent_key(&self, a: CellId, b: CellId) -> (TransformKind, CellId, CellId) {
        if self.parent[b].is_some() {
            (TransformKind::ChangeParent, a, b)
        } else {
            (TransformKind::SetParent, a, b)
        }
    }
}

struct Queue {
    heap: BinaryHeap<Reverse<Transformation>>,
    versions: DetMap<(TransformKind, CellId, CellId), u64>,
    counter: u64,
    epsilon: f64,
}

impl Queue {
    /// Re-evaluates a key; any older entry for it becomes stale.
    fn refresh(&mut self, state: &GlaState, key: (TransformKind, CellId, CellId)) {
        self.counter += 1;
        self.versions.insert(key, self.counter);
        let (kind, a, b) = key;
        if let Ok(Some(delta)) = state.delta(kind, a, b) {
            if delta < -self.epsilon {
                let new_parent = (kind != TransformKind::Merge).then_some(a);
                self.heap.push(Reverse(Transformation { kind, a, b, new_parent, delta, version: self.counter }));
            }
        }
    }
}

/// Runs greedy agglomeration from the all-singleton state.
pub fn gla_solve(g: &HypothesisGraph, config: &GlaConfig) -> Result<GlaResult> {
    let mut state = GlaState::new(g);
    let initial_objective = state.objective;
    let mut queue = Queue { heap: BinaryHeap::new(), versions: DetMap::default(), counter: 0, epsilon: config.epsilon };
    let mut keys = BTreeSet::new();
    for x in 0..g.num_nodes() {
        state.keys_around(x, &mut keys);
    }
    for key in std::mem::take(&mut keys) {
        queue.refresh(&state, key);
    }

    let mut trace = Vec::new();
    while let Some(Reverse(entry)) = queue.heap.pop() {
        if config.max_steps.is_some_and(|m| trace.len() >= m) {
            break;
        }
        let key = (entry.kind, entry.a, entry.b);
        if queue.versions.get(&key) != Some(&entry.version) || !state.is_alive(entry.a) || !state.is_alive(entry.b) {
            continue;
        }
        match state.delta(entry.kind, entry.a, entry.b) {
            Ok(Some(d)) if d == entry.delta => {}
            _ => {
                queue.refresh(&state, key);
                continue;
            }
        }
        let old_parent = match entry.kind {
            TransformKind::ChangeParent => state.parent[entry.b],
            _ => None,
        };
        let delta = state.apply(entry.kind, entry.a, entry.b)?;

        let mut touched = vec![entry.a.min(entry.b)];
        if entry.kind != TransformKind::Merge {
            touched = vec![entry.a, entry.b];
            touched.extend(old_parent);
        }
        let mut affected = BTreeSet::new();
        for &x in &touched {
            affected.insert(x);
            affected.extend(state.parent[x]);
            affected.extend(state.children[x].iter().copied());
            affected.extend(state.intra[x].keys().copied());
        }
        for &x in &affected {
            state.keys_around(x, &mut keys);
        }
        for key in std::mem::take(&mut keys) {
            queue.refresh(&state, key);
        }

        let audited = if config.audit { Some(objective(g, &state.labeling())?) } else { None };
        trace.push(TraceStep {
            kind: entry.kind,
            a: entry.a,
            b: entry.b,
            old_parent,
            delta,
            objective: state.objective,
            audited,
        });
    }

    let labeling = state.labeling();
    let objective = objective(g, &labeling)?;
    Ok(GlaResult { labeling, objective, initial_objective, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::check_all;
    use crate::graph::{fixture_i3, Edge, Node};

    #[test]
    fn initial_set_parent_delta_on_i3() {
        let g = fixture_i3();
        let s = GlaState::new(&g);
        assert_eq!(s.objective(), 17.0);
        assert_eq!(s.delta_set_parent(0, 2).unwrap(), Some(-9.0));
        assert!(matches!(s.delta_set_parent(0, 3), Err(Error::NoSuchArc(0, 3))));
        assert!(matches!(s.delta_merge(0, 2), Err(Error::NotSameFrame(0, 2))));
    }

    #[test]
    fn merge_deltas_on_i3() {
        let g = fixture_i3();
        let mut s = GlaState::new(&g);
        s.apply(TransformKind::SetParent, 0, 2).unwrap();
        s.apply(TransformKind::SetParent, 1, 3).unwrap();
        assert_eq!(s.delta_merge(0, 1).unwrap(), Some(-2.0));
        // Different parents: merging the children would break morality.
        assert_eq!(s.delta_merge(2, 3).unwrap(), None);
        s.apply(TransformKind::Merge, 0, 1).unwrap();
        assert_eq!(s.objective(), -3.0);
        assert_eq!(s.delta_merge(2, 3).unwrap(), Some(3.0));
        assert_eq!(objective(&g, &s.labeling()).unwrap(), -3.0);
    }

    #[test]
    fn i3_greedy_run() {
        let g = fixture_i3();
        let r = gla_solve(&g, &GlaConfig { audit: true, ..Default::default() }).unwrap();
        let steps: Vec<_> = r.trace.iter().map(|s| (s.kind, s.a, s.b, s.delta)).collect();
        assert_eq!(
            steps,
            vec![
                (TransformKind::SetParent, 0, 2, -9.0),
                (TransformKind::SetParent, 1, 3, -9.0),
                (TransformKind::Merge, 0, 1, -2.0),
            ]
        );
        assert_eq!(r.objective, -3.0);
        assert!(check_all(&g, &r.labeling).unwrap().is_empty());
        assert!(r.trace.iter().all(|s| s.audited == Some(s.objective)));
    }

    #[test]
    fn nothing_improves_when_every_transformation_is_costly() {
        let node = |frame| Node { frame, birth_cost: 0.0, termination_cost: 0.0 };
        let edges = vec![
            Edge { u: 0, v: 1, cost: -1.0 },
            Edge { u: 2, v: 3, cost: -2.0 },
            Edge { u: 0, v: 2, cost: -1.0 },
            Edge { u: 1, v: 3, cost: -0.5 },
        ];
        let g = HypothesisGraph::new(2, vec![node(0), node(0), node(1), node(1)], edges).unwrap();
        let r = gla_solve(&g, &GlaConfig::default()).unwrap();
        assert!(r.trace.is_empty());
        assert!(r.labeling.edge_labels.iter().all(|&x| x == 1.0));
        assert_eq!(r.objective, r.initial_objective);
    }

    #[test]
    fn bifurcation_guard() {
        let node = |frame| Node { frame, birth_cost: 5.0, termination_cost: 5.0 };
        let edges = (1..=3).map(|v| Edge { u: 0, v, cost: 1.0 }).collect();
        let g = HypothesisGraph::new(2, vec![node(0), node(1), node(1), node(1)], edges).unwrap();
        let mut s = GlaState::new(&g);
        s.apply(TransformKind::SetParent, 0, 1).unwrap();
        s.apply(TransformKind::SetParent, 0, 2).unwrap();
        assert_eq!(s.delta_set_parent(0, 3).unwrap(), None);
        let r = gla_solve(&g, &GlaConfig::default()).unwrap();
        assert!(check_all(&g, &r.labeling).unwrap().is_empty());
    }

    #[test]
    fn symmetric_parent_change_is_neutral() {
        let node = |frame| Node { frame, birth_cost: 5.0, termination_cost: 5.0 };
        let edges = vec![
            Edge { u: 0, v: 2, cost: 1.0 },
            Edge { u: 1, v: 2, cost: 1.0 },
            Edge { u: 0, v: 3, cost: 1.0 },
            Edge { u: 1, v: 4, cost: 1.0 },
        ];
        let g = HypothesisGraph::new(2, vec![node(0), node(0), node(1), node(1), node(1)], edges).unwrap();
        let mut s = GlaState::new(&g);
        s.apply(TransformKind::SetParent, 0, 2).unwrap();
        s.apply(TransformKind::SetParent, 0, 3).unwrap();
        s.apply(TransformKind::SetParent, 1, 4).unwrap();
        assert_eq!(s.delta_change_parent(1, 2, 0).unwrap(), Some(0.0));
        assert!(matches!(s.delta_change_parent(1, 2, 1), Err(Error::ArcNotActive(1, 2))));
    }
}
