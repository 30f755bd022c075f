//! Kernighan-Lin local search with optimal branchings.
//!
//! Starting from a feasible labeling, the search repeatedly reshapes pairs of
//! adjacent cells (node moves between them, or a full merge) and splits
//! single cells. Every candidate is scored exactly: its change in intra-frame
//! cut cost plus the change in branching cost after re-solving the two frame
//! pairs around it, restricted to a neighbourhood of `d_mcbp` arc hops.
//! Links leaving the neighbourhood stay fixed, so the state always describes
//! a feasible labeling. A full branching solve closes each outer iteration.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::branching::{solve_mcb_with, solve_pair, Branching, LeftCell, PairArc, PairProblem};
use crate::error::{Error, Result};
use crate::feasibility::{check_all, decompose_labeling, labeling_from_quotient};
use crate::graph::{objective, HypothesisGraph, Labeling, NodeId};
use crate::par::Execution;
use crate::quotient::{bounded_bfs, connected_groups, CellId, DynamicQuotient, QuotientGraph};

#[derive(Debug, Clone, Copy)]
pub struct KlbConfig {
    /// Hop radius of the re-solved region; `None` means unbounded.
    pub d_mcbp: Option<usize>,
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    /// Longest KL move sequence considered.
    pub max_sequence: usize,
    /// Recompute the objective from scratch after every applied move.
    pub audit: bool,
    pub execution: Execution,
}

impl Default for KlbConfig {
    fn default() -> Self {
        Self {
            d_mcbp: None,
            epsilon: 1e-9,
            max_outer_iterations: 100,
            max_sequence: 64,
            audit: false,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    /// A KL prefix of node moves between two cells.
    Exchange,
    Merge,
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlbStep {
    pub iteration: usize,
    pub kind: MoveKind,
    /// Cells replaced by the move.
    pub cells: Vec<CellId>,
    /// Number of nodes that changed cell.
    pub moved: usize,
    pub delta: f64,
    /// Tracked objective after the move.
    pub objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audited: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlbIteration {
    pub iteration: usize,
    pub applied: usize,
    /// Objective tracked through the local re-solves.
    pub tracked: f64,
    /// Objective after the full branching solve.
    pub exact: f64,
    pub examined: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct KlbResult {
    pub labeling: Labeling,
    pub objective: f64,
    pub initial_objective: f64,
    pub steps: Vec<KlbStep>,
    pub iterations: Vec<KlbIteration>,
}

/// A cell of a candidate region: an existing cell or a new group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Old(CellId),
    New(usize),
}

#[derive(Debug, Clone)]
struct PairPlan {
    /// Right cells whose parent is decided by this plan.
    right: Vec<Slot>,
    links: Vec<(Slot, Slot)>,
}

/// An exactly scored replacement of `old` cells by `groups`.
#[derive(Debug, Clone)]
struct Plan {
    old: Vec<CellId>,
    groups: Vec<Vec<NodeId>>,
    delta: f64,
    pairs: Vec<PairPlan>,
}

/// Cells and lineage links under local search.
#[derive(Debug, Clone)]
pub struct KlbState<'g> {
    g: &'g HypothesisGraph,
    dq: DynamicQuotient<'g>,
    parent: Vec<Option<CellId>>,
    children: Vec<Vec<CellId>>,
    objective: f64,
    config: KlbConfig,
    touched: BTreeSet<CellId>,
    iteration: usize,
    steps: Vec<KlbStep>,
}

impl<'g> KlbState<'g> {
    /// State of a feasible labeling, with its branching re-solved optimally.
    pub fn new(g: &'g HypothesisGraph, initial: &Labeling, config: KlbConfig) -> Result<Self> {
        let violations = check_all(g, initial).map_err(|e| Error::InfeasibleInitial(e.to_string()))?;
        if let Some(v) = violations.first() {
            return Err(Error::InfeasibleInitial(format!("{} violations, first: {}", violations.len(), v.kind.name())));
        }
        let (q, _) = decompose_labeling(g, initial)?;
        let dq = DynamicQuotient::new(g, q.partition());
        let n = dq.id_bound();
        let mut state = Self {
            g,
            dq,
            parent: vec![None; n],
            children: vec![Vec::new(); n],
            objective: 0.0,
            config,
            touched: BTreeSet::new(),
            iteration: 0,
            steps: Vec::new(),
        };
        state.full_resolve()?;
        Ok(state)
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn quotient(&self) -> &DynamicQuotient<'g> {
        &self.dq
    }

    pub fn parent(&self, c: CellId) -> Option<CellId> {
        self.parent[c]
    }

    pub fn children(&self, c: CellId) -> &[CellId] {
        &self.children[c]
    }

    pub fn steps(&self) -> &[KlbStep] {
        &self.steps
    }

    /// Quotient, branching and labeling of the current state.
    pub fn labeling(&self) -> Result<Labeling> {
        let (q, b) = self.branching()?;
        labeling_from_quotient(self.g, &q, &b)
    }

    fn branching(&self) -> Result<(QuotientGraph, Branching)> {
        let p = self.dq.to_partition();
        let q = QuotientGraph::build(self.g, &p)?;
        let qcell = |c: CellId| p.cell_of(self.dq.members(c)[0]);
        let mut active = vec![false; q.arcs().len()];
        for c in self.dq.alive_cells() {
            if let Some(par) = self.parent[c] {
                let arc = q.find_arc(qcell(par), qcell(c)).expect("linked cells share an arc");
                active[arc] = true;
            }
        }
        let b = Branching::from_active(&q, active);
        Ok((q, b))
    }

    /// Re-solves the whole branching; returns the objective before and after.
    fn full_resolve(&mut self) -> Result<(f64, f64)> {
        let before = self.objective;
        let p = self.dq.to_partition();
        let q = QuotientGraph::build(self.g, &p)?;
        let b = solve_mcb_with(&q, self.config.execution)?;
        let dcell = |c: CellId| self.dq.cell_of(p.members(c)[0]);
        let mut parent = vec![None; self.dq.id_bound()];
        let mut children = vec![Vec::new(); self.dq.id_bound()];
        for (arc, &on) in q.arcs().iter().zip(&b.active) {
            if on {
                let (a, c) = (dcell(arc.a), dcell(arc.b));
                parent[c] = Some(a);
                children[a].push(c);
            }
        }
        for ch in &mut children {
            ch.sort_unstable();
        }
        for c in self.dq.alive_cells() {
            if parent[c] != self.parent[c] || children[c] != self.children[c] {
                self.touched.insert(c);
            }
        }
        self.parent = parent;
        self.children = children;
        let l = labeling_from_quotient(self.g, &q, &b)?;
        self.objective = objective(self.g, &l)?;
        Ok((before, self.objective))
    }

    fn grow(&mut self) {
        let n = self.dq.id_bound();
        self.parent.resize(n, None);
        self.children.resize(n, Vec::new());
    }

    fn check_cell(&self, c: CellId) -> Result<()> {
        if self.dq.is_alive(c) {
            Ok(())
        } else {
            Err(Error::UnknownCell(c))
        }
    }

    /// Cells whose links the re-solve of a move at `old` may change.
    fn region(&self, old: &[CellId]) -> Result<BTreeSet<CellId>> {
        let t = self.dq.frame(old[0]);
        let dq = &self.dq;
        let mut region = bounded_bfs(
            old,
            self.config.d_mcbp,
            |c| dq.frame(c) + 1 >= t && dq.frame(c) <= t + 1,
            |c, out: &mut Vec<CellId>| {
                out.extend(dq.successors(c).keys());
                out.extend(dq.predecessors(c).keys());
            },
        )?;
        // Current links of the replaced cells are always renegotiated.
        for &c in old {
            region.extend(self.parent[c]);
            region.extend(self.children[c].iter().copied());
        }
        Ok(region)
    }

    /// Scores replacing `old` (same frame) by `groups` without touching the
    /// state. Groups are split into connected components first.
    fn evaluate(&self, old: &[CellId], groups: Vec<Vec<NodeId>>) -> Result<Plan> {
        let g = self.g;
        let t = self.dq.frame(old[0]);
        let groups: Vec<Vec<NodeId>> =
            groups.into_iter().filter(|gr| !gr.is_empty()).flat_map(|gr| connected_groups(g, &gr)).collect();
        let mut group_of: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (i, gr) in groups.iter().enumerate() {
            for &v in gr {
                group_of.insert(v, i);
            }
        }

        let mut delta = 0.0;
        for (&u, &gu) in &group_of {
            for &(w, e) in g.neighbors(u) {
                if w <= u || !g.is_intra(e) {
                    continue;
                }
                let Some(&gw) = group_of.get(&w) else { continue };
                let before = self.dq.cell_of(u) != self.dq.cell_of(w);
                let after = gu != gw;
                delta += g.edge(e).cost * (after as i32 - before as i32) as f64;
            }
        }

        let region = self.region(old)?;
        let old_set: BTreeSet<CellId> = old.iter().copied().collect();
        let mut pairs = Vec::new();
        if t > 0 {
            let (d, plan) = self.resolve_pair(t - 1, &region, &old_set, &groups, false)?;
            delta += d;
            pairs.push(plan);
        }
        if t + 1 < g.num_frames() {
            let (d, plan) = self.resolve_pair(t, &region, &old_set, &groups, true)?;
            delta += d;
            pairs.push(plan);
        }
        Ok(Plan { old: old.to_vec(), groups, delta, pairs })
    }

    /// Re-solves the frame pair `(s, s + 1)` inside `region` with the old
    /// cells replaced by `groups`; `groups_left` tells on which side of the
    /// pair they lie. Returns the cost change and the chosen links.
    fn resolve_pair(
        &self,
        s: usize,
        region: &BTreeSet<CellId>,
        old: &BTreeSet<CellId>,
        groups: &[Vec<NodeId>],
        groups_left: bool,
    ) -> Result<(f64, PairPlan)> {
        let g = self.g;
        let dq = &self.dq;
        let in_frame = |c: &CellId, f: usize| dq.frame(*c) == f;
        let new_slots = (0..groups.len()).map(Slot::New);

        // Old cells on each side, before the replacement.
        let left_old: Vec<CellId> = region.iter().copied().filter(|c| in_frame(c, s)).collect();
        let left_set: BTreeSet<CellId> = left_old.iter().copied().collect();
        let right_old: Vec<CellId> = region
            .iter()
            .copied()
            .filter(|c| in_frame(c, s + 1))
            .filter(|c| old.contains(c) || self.parent[*c].is_none_or(|p| left_set.contains(&p)))
            .collect();
        let right_set: BTreeSet<CellId> = right_old.iter().copied().collect();

        let mut before = 0.0;
        for &r in &right_old {
            before += match self.parent[r] {
                Some(p) => dq.arc_cost(p, r).expect("links follow arcs"),
                None => dq.birth_cost(r),
            };
        }
        for &a in &left_old {
            if self.children[a].is_empty() {
                before += dq.termination_cost(a);
            }
        }

        let mut left: Vec<Slot> = left_old.iter().copied().filter(|c| !old.contains(c)).map(Slot::Old).collect();
        let mut right: Vec<Slot> = right_old.iter().copied().filter(|c| !old.contains(c)).map(Slot::Old).collect();
        if groups_left {
            left.extend(new_slots);
        } else {
            right.extend(new_slots);
        }

        let mut problem = PairProblem::default();
        for slot in &left {
            problem.left.push(match *slot {
                Slot::Old(c) => {
                    let frozen = self.children[c].iter().filter(|ch| !right_set.contains(ch)).count() as u8;
                    let cost = if frozen > 0 { 0.0 } else { dq.termination_cost(c) };
                    LeftCell { capacity: 2 - frozen, termination_cost: cost }
                }
                Slot::New(i) => LeftCell {
                    capacity: 2,
                    termination_cost: groups[i].iter().map(|&v| g.node(v).termination_cost).sum(),
                },
            });
        }
        for slot in &right {
            problem.right_birth.push(match *slot {
                Slot::Old(c) => dq.birth_cost(c),
                Slot::New(i) => groups[i].iter().map(|&v| g.node(v).birth_cost).sum(),
            });
        }
        let left_index: BTreeMap<Slot, usize> = left.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let right_index: BTreeMap<Slot, usize> = right.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut arcs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        // Old-old arcs come from the quotient, arcs touching a group from its nodes.
        for (i, slot) in left.iter().enumerate() {
            if let Slot::Old(a) = *slot {
                for (&b, bundle) in dq.successors(a) {
                    if let Some(&j) = right_index.get(&Slot::Old(b)) {
                        arcs.insert((i, j), -bundle.cost);
                    }
                }
            }
        }
        let own_frame = if groups_left { s } else { s + 1 };
        for (k, gr) in groups.iter().enumerate() {
            for &v in gr {
                for &(w, e) in g.neighbors(v) {
                    if g.frame(w) == own_frame {
                        continue;
                    }
                    let other = Slot::Old(dq.cell_of(w));
                    let key = if groups_left {
                        right_index.get(&other).map(|&j| (left_index[&Slot::New(k)], j))
                    } else {
                        left_index.get(&other).map(|&i| (i, right_index[&Slot::New(k)]))
                    };
                    if let Some(key) = key {
                        *arcs.entry(key).or_insert(0.0) -= g.edge(e).cost;
                    }
                }
            }
        }
        problem.arcs = arcs.into_iter().map(|((left, right), cost)| PairArc { left, right, cost }).collect();
        let sol = solve_pair(&problem)?;
        let links = sol
            .parent_arc
            .iter()
            .enumerate()
            .filter_map(|(j, a)| a.map(|a| (left[problem.arcs[a].left], right[j])))
            .collect();
        Ok((sol.value - before, PairPlan { right, links }))
    }

    /// Applies a plan; returns the ids of the new cells.
    fn apply(&mut self, plan: Plan, kind: MoveKind, moved: usize) -> Result<Vec<CellId>> {
        for &c in &plan.old {
            if let Some(p) = self.parent[c].take() {
                self.children[p].retain(|&x| x != c);
            }
            for ch in std::mem::take(&mut self.children[c]) {
                self.parent[ch] = None;
            }
        }
        let expected: usize = plan.groups.len();
        let ids = self.dq.replace(&plan.old, plan.groups);
        debug_assert_eq!(ids.len(), expected, "groups were connected");
        self.grow();
        let resolve = |s: Slot| match s {
            Slot::Old(c) => c,
            Slot::New(i) => ids[i],
        };
        for pair in &plan.pairs {
            for &r in &pair.right {
                let r = resolve(r);
                if let Some(p) = self.parent[r].take() {
                    self.children[p].retain(|&x| x != r);
                    self.touched.insert(p);
                }
            }
            for &(a, b) in &pair.links {
                let (a, b) = (resolve(a), resolve(b));
                self.parent[b] = Some(a);
                self.children[a].push(b);
                self.children[a].sort_unstable();
                self.touched.insert(a);
                self.touched.insert(b);
            }
        }
        self.touched.extend(ids.iter().copied());
        self.objective += plan.delta;
        let audited = if self.config.audit { Some(objective(self.g, &self.labeling()?)?) } else { None };
        self.steps.push(KlbStep {
            iteration: self.iteration,
            kind,
            cells: plan.old.clone(),
            moved,
            delta: plan.delta,
            objective: self.objective,
            audited,
        });
        Ok(ids)
    }

    /// Estimated gain of moving `v` from side `from` to the other side.
    /// `sides` holds the side of every node of both cells; `cells` the
    /// reference cells whose links approximate the temporal change.
    fn estimate(&self, v: NodeId, from: usize, sides: &BTreeMap<NodeId, usize>, cells: [Option<CellId>; 2]) -> f64 {
        let g = self.g;
        let to = 1 - from;
        let mut est = 0.0;
        let linked = |c: Option<CellId>, w: CellId| {
            c.is_some_and(|c| self.parent[c] == Some(w) || self.children[c].contains(&w))
        };
        for &(w, e) in g.neighbors(v) {
            let cost = g.edge(e).cost;
            if g.is_intra(e) {
                match sides.get(&w) {
                    Some(&s) if s == from => est += cost,
                    Some(_) => est -= cost,
                    None => {}
                }
            } else {
                let cw = self.dq.cell_of(w);
                if linked(cells[from], cw) {
                    est += cost;
                }
                if linked(cells[to], cw) {
                    est -= cost;
                }
            }
        }
        let node = g.node(v);
        let has_parent = |c: Option<CellId>| c.is_some_and(|c| self.parent[c].is_some());
        let has_child = |c: Option<CellId>| c.is_some_and(|c| !self.children[c].is_empty());
        let t = g.frame(v);
        if t > 0 {
            est += node.birth_cost * (has_parent(cells[from]) as i32 - has_parent(cells[to]) as i32) as f64;
        }
        if t < g.last_frame() {
            est += node.termination_cost * (has_child(cells[from]) as i32 - has_child(cells[to]) as i32) as f64;
        }
        est
    }

    /// Greedy KL sequence: each step moves the unmoved node with the best
    /// estimate, subject to `allowed`. Returns the side maps after each step.
    fn kl_sequence(
        &self,
        mut sides: BTreeMap<NodeId, usize>,
        cells: [Option<CellId>; 2],
        limit: usize,
        allowed: impl Fn(NodeId, usize, &BTreeMap<NodeId, usize>) -> bool,
    ) -> Vec<BTreeMap<NodeId, usize>> {
        let mut sizes = [0usize; 2];
        for &s in sides.values() {
            sizes[s] += 1;
        }
        let mut moved = BTreeSet::new();
        let mut prefixes = Vec::new();
        for _ in 0..limit {
            let mut best: Option<(f64, NodeId)> = None;
            for (&v, &s) in &sides {
                if moved.contains(&v) || sizes[s] == 1 || !allowed(v, s, &sides) {
                    continue;
                }
                let est = self.estimate(v, s, &sides, cells);
                if best.is_none_or(|(b, _)| est < b) {
                    best = Some((est, v));
                }
            }
            let Some((_, v)) = best else { break };
            let s = sides[&v];
            sides.insert(v, 1 - s);
            sizes[s] -= 1;
            sizes[1 - s] += 1;
            moved.insert(v);
            prefixes.push(sides.clone());
        }
        prefixes
    }

    fn groups_of(sides: &BTreeMap<NodeId, usize>) -> Vec<Vec<NodeId>> {
        let mut groups = vec![Vec::new(), Vec::new()];
        for (&v, &s) in sides {
            groups[s].push(v);
        }
        groups
    }

    /// Applies the first best candidate if it improves by more than epsilon.
    fn apply_best(&mut self, candidates: Vec<(MoveKind, usize, Plan)>) -> Result<bool> {
        let mut best: Option<(MoveKind, usize, Plan)> = None;
        for cand in candidates {
            if best.as_ref().is_none_or(|b| cand.2.delta < b.2.delta) {
                best = Some(cand);
            }
        }
        match best {
            Some((kind, moved, plan)) if plan.delta < -self.config.epsilon => {
                self.apply(plan, kind, moved)?;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// KL exchange between two adjacent cells of one frame, with the full
    /// merge as an extra candidate.
    pub fn improve_bipartition(&mut self, a: CellId, b: CellId) -> Result<bool> {
        self.check_cell(a)?;
        self.check_cell(b)?;
        if self.dq.frame(a) != self.dq.frame(b) {
            return Err(Error::NotSameFrame(a, b));
        }
        if a == b || !self.dq.intra_neighbors(a).contains_key(&b) {
            return Err(Error::NotAdjacent(a, b));
        }
        let g = self.g;
        let mut sides = BTreeMap::new();
        for &v in self.dq.members(a) {
            sides.insert(v, 0);
        }
        for &v in self.dq.members(b) {
            sides.insert(v, 1);
        }
        let limit = sides.len().min(self.config.max_sequence);
        // Only boundary nodes move: each must touch the other side.
        let prefixes = self.kl_sequence(sides.clone(), [Some(a), Some(b)], limit, |v, s, sides| {
            g.neighbors(v).iter().any(|&(w, e)| g.is_intra(e) && sides.get(&w) == Some(&(1 - s)))
        });
        let moved_count = |p: &BTreeMap<NodeId, usize>| p.iter().filter(|(v, s)| sides[v] != **s).count();
        let mut candidates = Vec::with_capacity(prefixes.len() + 1);
        for p in &prefixes {
            candidates.push((MoveKind::Exchange, moved_count(p), self.evaluate(&[a, b], Self::groups_of(p))?));
        }
        let all: Vec<NodeId> = sides.keys().copied().collect();
        let smaller = self.dq.members(a).len().min(self.dq.members(b).len());
        candidates.push((MoveKind::Merge, smaller, self.evaluate(&[a, b], vec![all])?));
        self.apply_best(candidates)
    }

    /// KL sequence from `a` into an initially empty twin. The part left in
    /// `a` stays connected; the twin may fall apart into several cells.
    pub fn split_partition(&mut self, a: CellId) -> Result<bool> {
        self.check_cell(a)?;
        if self.dq.members(a).len() < 2 {
            return Err(Error::SingletonCell(a));
        }
        let g = self.g;
        let sides: BTreeMap<NodeId, usize> = self.dq.members(a).iter().map(|&v| (v, 0)).collect();
        let limit = (sides.len() - 1).min(self.config.max_sequence);
        let prefixes = self.kl_sequence(sides, [Some(a), None], limit, |v, s, sides| {
            if s != 0 {
                return false;
            }
            let rest: Vec<NodeId> = sides.iter().filter(|&(&w, &sw)| sw == 0 && w != v).map(|(&w, _)| w).collect();
            connected_groups(g, &rest).len() == 1
        });
        let mut candidates = Vec::with_capacity(prefixes.len());
        for (k, p) in prefixes.iter().enumerate() {
            candidates.push((MoveKind::Split, k + 1, self.evaluate(&[a], Self::groups_of(p))?));
        }
        self.apply_best(candidates)
    }

    /// Cells touched since the last call, together with all their arc
    /// neighbours. Clears the touched set.
    pub fn propagate_changed_flags(&mut self) -> BTreeSet<CellId> {
        let touched = std::mem::take(&mut self.touched);
        let mut out = BTreeSet::new();
        for c in touched {
            if !self.dq.is_alive(c) {
                continue;
            }
            out.insert(c);
            out.extend(self.dq.successors(c).keys());
            out.extend(self.dq.predecessors(c).keys());
        }
        out
    }

    /// One outer iteration over the flagged cells. Returns the number of
    /// applied moves and of examined candidates.
    fn outer_iteration(&mut self, flagged: &BTreeSet<CellId>) -> Result<(usize, usize)> {
        let mut pairs = BTreeSet::new();
        for &a in flagged {
            for &b in self.dq.intra_neighbors(a).keys() {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
        let (mut applied, mut examined) = (0, 0);
        for (a, b) in pairs {
            if !self.dq.is_alive(a) || !self.dq.is_alive(b) || !self.dq.intra_neighbors(a).contains_key(&b) {
                continue;
            }
            examined += 1;
            applied += self.improve_bipartition(a, b)? as usize;
        }
        for &a in flagged {
            if self.dq.is_alive(a) && self.dq.members(a).len() >= 2 {
                examined += 1;
                applied += self.split_partition(a)? as usize;
            }
        }
        Ok((applied, examined))
    }
}

/// Runs the local search from a feasible labeling.
pub fn klb_solve(g: &HypothesisGraph, initial: &Labeling, config: &KlbConfig) -> Result<KlbResult> {
    let initial_objective = objective(g, initial)?;
    let mut state = KlbState::new(g, initial, *config)?;
    let mut flagged: BTreeSet<CellId> = state.dq.alive_cells().collect();
    state.touched.clear();
    let mut iterations = Vec::new();
    for it in 0..config.max_outer_iterations {
        state.iteration = it;
        let (applied, examined) = state.outer_iteration(&flagged)?;
        let (tracked, exact) = state.full_resolve()?;
        let warning = (tracked - exact > 1e-6).then(|| {
            format!("full branching solve improved the tracked objective by {:.6}; d_mcbp may be too small", tracked - exact)
        });
        iterations.push(KlbIteration { iteration: it, applied, tracked, exact, examined, warning });
        flagged = state.propagate_changed_flags();
        if applied == 0 && tracked - exact <= config.epsilon {
            break;
        }
    }
    let labeling = state.labeling()?;
    let objective = objective(g, &labeling)?;
    Ok(KlbResult { labeling, objective, initial_objective, steps: state.steps, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::{check_all, implied_indicators};
    use crate::gla::{gla_solve, GlaConfig};
    use crate::graph::{fixture_i3, Edge, Node};

    fn node(frame: usize) -> Node {
        Node { frame, birth_cost: 0.0, termination_cost: 0.0 }
    }

    fn audited() -> KlbConfig {
        KlbConfig { audit: true, ..Default::default() }
    }

    #[test]
    fn i3_stays_optimal() {
        let g = fixture_i3();
        let start = gla_solve(&g, &GlaConfig::default()).unwrap();
        let r = klb_solve(&g, &start.labeling, &audited()).unwrap();
        assert_eq!(r.objective, -3.0);
        assert!(r.steps.is_empty());
        assert_eq!(r.labeling, start.labeling);
    }

    /// Path 0-1-2 in one frame; cells {0,1} and {2}. Moving 1 over gains 1.5.
    fn move_fixture() -> (HypothesisGraph, Labeling) {
        let edges = vec![Edge { u: 0, v: 1, cost: -0.5 }, Edge { u: 1, v: 2, cost: 1.0 }];
        let g = HypothesisGraph::new(1, vec![node(0); 3], edges).unwrap();
        let l = implied_indicators(&g, vec![0.0, 1.0]);
        (g, l)
    }

    #[test]
    fn single_move_is_applied() {
        let (g, l) = move_fixture();
        let mut s = KlbState::new(&g, &l, audited()).unwrap();
        assert_eq!(s.objective(), 1.0);
        let (a, b) = (s.dq.cell_of(0), s.dq.cell_of(2));
        assert!(s.improve_bipartition(a, b).unwrap());
        assert_eq!(s.objective(), -0.5);
        assert_eq!(s.steps()[0].delta, -1.5);
        assert_eq!(s.steps()[0].kind, MoveKind::Exchange);
        assert_eq!(s.steps()[0].audited, Some(-0.5));
        assert_eq!(s.dq.cell_of(1), s.dq.cell_of(2));
    }

    #[test]
    fn merge_beats_every_prefix() {
        // Two cells {0,1} and {2,3} on a 4-cycle with positive costs.
        let edges = vec![
            Edge { u: 0, v: 1, cost: 1.0 },
            Edge { u: 1, v: 2, cost: 1.0 },
            Edge { u: 2, v: 3, cost: 1.0 },
            Edge { u: 0, v: 3, cost: 1.0 },
        ];
        let g = HypothesisGraph::new(1, vec![node(0); 4], edges).unwrap();
        let l = implied_indicators(&g, vec![0.0, 1.0, 0.0, 1.0]);
        let mut s = KlbState::new(&g, &l, audited()).unwrap();
        let (a, b) = (s.dq.cell_of(0), s.dq.cell_of(2));
        assert!(s.improve_bipartition(a, b).unwrap());
        assert_eq!(s.steps()[0].kind, MoveKind::Merge);
        assert_eq!(s.objective(), 0.0);
        assert_eq!(s.dq.alive_cells().count(), 1);
    }

    #[test]
    fn no_improving_prefix_leaves_state() {
        let (g, _) = move_fixture();
        let l = implied_indicators(&g, vec![1.0, 0.0]);
        let mut s = KlbState::new(&g, &l, audited()).unwrap();
        let (a, b) = (s.dq.cell_of(0), s.dq.cell_of(2));
        assert!(!s.improve_bipartition(a, b).unwrap());
        assert_eq!(s.objective(), -0.5);
        assert!(s.steps().is_empty());
    }

    #[test]
    fn split_gains_the_cut_cost() {
        let g = HypothesisGraph::new(1, vec![node(0); 2], vec![Edge { u: 0, v: 1, cost: -4.0 }]).unwrap();
        let l = implied_indicators(&g, vec![0.0]);
        let mut s = KlbState::new(&g, &l, audited()).unwrap();
        let c = s.dq.cell_of(0);
        assert!(s.split_partition(c).unwrap());
        assert_eq!(s.steps()[0].delta, -4.0);
        assert_eq!(s.objective(), -4.0);
        let single = s.dq.cell_of(0);
        assert_eq!(s.split_partition(single), Err(Error::SingletonCell(single)));
        // An optimal two-node cell stays whole.
        let g = HypothesisGraph::new(1, vec![node(0); 2], vec![Edge { u: 0, v: 1, cost: 4.0 }]).unwrap();
        let l = implied_indicators(&g, vec![0.0]);
        let mut s = KlbState::new(&g, &l, audited()).unwrap();
        assert!(!s.split_partition(s.dq.cell_of(0)).unwrap());
    }

    #[test]
    fn errors() {
        let g = fixture_i3();
        let bad = implied_indicators(&g, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(klb_solve(&g, &bad, &KlbConfig::default()), Err(Error::InfeasibleInitial(_))));
        let l = implied_indicators(&g, vec![1.0, 1.0, 1.0, 1.0]);
        let mut s = KlbState::new(&g, &l, KlbConfig::default()).unwrap();
        assert!(matches!(s.improve_bipartition(0, 2), Err(Error::NotSameFrame(0, 2))));
        let (x, y) = (s.dq.cell_of(0), s.dq.cell_of(1));
        assert!(s.improve_bipartition(x, y).is_ok());
        let (x, y) = (s.dq.cell_of(0), s.dq.cell_of(3));
        assert!(matches!(s.improve_bipartition(x, y), Err(Error::NotSameFrame(..))));
    }

    #[test]
    fn changed_flags_cover_arc_neighbours() {
        let (g, l) = move_fixture();
        let mut s = KlbState::new(&g, &l, KlbConfig::default()).unwrap();
        s.touched.clear();
        assert!(s.propagate_changed_flags().is_empty());
        let (a, b) = (s.dq.cell_of(0), s.dq.cell_of(2));
        s.improve_bipartition(a, b).unwrap();
        let flagged = s.propagate_changed_flags();
        let alive: BTreeSet<CellId> = s.dq.alive_cells().collect();
        assert_eq!(flagged, alive);

        // On I3 a touched cell of frame 1 flags its parent too.
        let g = fixture_i3();
        let l = implied_indicators(&g, vec![0.0, 1.0, 0.0, 0.0]);
        let mut s = KlbState::new(&g, &l, KlbConfig::default()).unwrap();
        s.touched.clear();
        let c2 = s.dq.cell_of(2);
        s.touched.insert(c2);
        let flagged = s.propagate_changed_flags();
        assert_eq!(flagged, BTreeSet::from([s.dq.cell_of(0), c2]));
    }

    #[test]
    fn radius_zero_and_unbounded_stay_feasible() {
        use crate::generator::{random_graph, RandomGraphParams};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let g = random_graph(&mut rng, &RandomGraphParams { max_edges: 24, ..Default::default() });
            let start = gla_solve(&g, &GlaConfig::default()).unwrap();
            for d in [Some(0), Some(1), None] {
                let cfg = KlbConfig { d_mcbp: d, audit: true, ..Default::default() };
                let r = klb_solve(&g, &start.labeling, &cfg).unwrap();
                assert!(check_all(&g, &r.labeling).unwrap().is_empty());
                assert!(r.objective <= start.objective + 1e-9);
                for step in &r.steps {
                    assert!((step.objective - step.audited.unwrap()).abs() <= 1e-9);
                }
            }
        }
    }
}
