//! Minimum cost branching on the quotient graph.
//!
//! The branching problem separates into independent frame pairs. Each pair is
//! reduced to a minimum-cost perfect matching: every left cell `a` gets a
//! duplicate `a'` so it can take two children, a termination node `a⁻` (and
//! `a'⁻`) absorbs unused slots, and a birth node `b⁺` lets a right cell go
//! without a parent. Zero-cost edges `b⁺–a⁻` balance the two sides whenever
//! `b` takes one of `a`'s slots.

use std::collections::BTreeSet;

use crate::assignment::{self, CostMatrix};
use crate::error::{Error, Result};
use crate::graph::EPSILON;
use crate::par::{self, Execution};
use crate::quotient::{ArcId, CellId, FramePairView, QuotientGraph};

/// Active arcs plus per-cell birth and termination flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branching {
    pub active: Vec<bool>,
    pub cell_birth: Vec<bool>,
    pub cell_termination: Vec<bool>,
}

impl Branching {
    /// No active arcs; every eligible cell is born and terminates.
    pub fn empty(q: &QuotientGraph) -> Self {
        Self::from_active(q, vec![false; q.arcs().len()])
    }

    /// Derives the indicator flags from an arc selection.
    pub fn from_active(q: &QuotientGraph, active: Vec<bool>) -> Self {
        let n = q.num_cells();
        let cell_birth =
            (0..n).map(|c| q.birth_eligible(c) && !q.in_arcs(c).iter().any(|&a| active[a])).collect();
        let cell_termination =
            (0..n).map(|c| q.termination_eligible(c) && !q.out_arcs(c).iter().any(|&a| active[a])).collect();
        Self { active, cell_birth, cell_termination }
    }

    /// Reads off the arcs whose bundled edges are uncut.
    pub fn from_labeling(q: &QuotientGraph, l: &crate::graph::Labeling) -> Self {
        let active = q.arcs().iter().map(|arc| arc.edges.iter().any(|&e| !l.is_cut(e))).collect();
        Self::from_active(q, active)
    }

    /// Checks the in-degree, out-degree and flag rules.
    pub fn validate(&self, q: &QuotientGraph) -> Result<()> {
        if self.active.len() != q.arcs().len() || self.cell_birth.len() != q.num_cells() {
            return Err(Error::InvalidBranching("dimensions do not match the quotient".into()));
        }
        for c in 0..q.num_cells() {
            let incoming = q.in_arcs(c).iter().filter(|&&a| self.active[a]).count();
            let outgoing = q.out_arcs(c).iter().filter(|&&a| self.active[a]).count();
            if incoming > 1 {
                return Err(Error::InvalidBranching(format!("cell {c} has {incoming} parents")));
            }
            if outgoing > 2 {
                return Err(Error::InvalidBranching(format!("cell {c} has {outgoing} children")));
            }
            if self.cell_birth[c] != (incoming == 0 && q.birth_eligible(c)) {
                return Err(Error::InvalidBranching(format!("birth flag of cell {c} is inconsistent")));
            }
            if self.cell_termination[c] != (outgoing == 0 && q.termination_eligible(c)) {
                return Err(Error::InvalidBranching(format!("termination flag of cell {c} is inconsistent")));
            }
        }
        Ok(())
    }

    /// `Σ c_ab y_ab + Σ c⁺ y⁺ + Σ c⁻ y⁻`.
    pub fn value(&self, q: &QuotientGraph) -> f64 {
        let arcs: f64 = q.arcs().iter().zip(&self.active).filter(|(_, &on)| on).map(|(a, _)| a.cost).sum();
        let flags: f64 = (0..q.num_cells())
            .map(|c| {
                let mut v = 0.0;
                if self.cell_birth[c] {
                    v += q.birth_cost(c);
                }
                if self.cell_termination[c] {
                    v += q.termination_cost(c);
                }
                v
            })
            .sum();
        arcs + flags
    }

    pub fn parent(&self, q: &QuotientGraph, c: CellId) -> Option<CellId> {
        q.in_arcs(c).iter().find(|&&a| self.active[a]).map(|&a| q.arc(a).a)
    }

    pub fn children(&self, q: &QuotientGraph, c: CellId) -> Vec<CellId> {
        q.out_arcs(c).iter().filter(|&&a| self.active[a]).map(|&a| q.arc(a).b).collect()
    }
}

/// A left cell of a frame-pair problem. `capacity` is the number of free
/// child slots (0 to 2); `termination_cost` is paid if no child is assigned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeftCell {
    pub capacity: u8,
    pub termination_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairArc {
    pub left: usize,
    pub right: usize,
    pub cost: f64,
}

/// Branching problem between two consecutive frames, in local indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairProblem {
    pub left: Vec<LeftCell>,
    pub right_birth: Vec<f64>,
    pub arcs: Vec<PairArc>,
}

/// Optimal assignment of parents to right cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSolution {
    /// Per right cell, the index of its chosen arc.
    pub parent_arc: Vec<Option<usize>>,
    pub value: f64,
}

impl PairProblem {
    /// Objective of a parent assignment; `None` if it breaks a capacity.
    pub fn value_of(&self, parent_arc: &[Option<usize>]) -> Option<f64> {
        let mut used = vec![0u8; self.left.len()];
        let mut value = 0.0;
        for (j, choice) in parent_arc.iter().enumerate() {
            match *choice {
                Some(a) => {
                    let arc = self.arcs[a];
                    if arc.right != j {
                        return None;
                    }
                    used[arc.left] += 1;
                    value += arc.cost;
                }
                None => value += self.right_birth[j],
            }
        }
        for (i, cell) in self.left.iter().enumerate() {
            if used[i] > cell.capacity {
                return None;
            }
            if used[i] == 0 {
                value += cell.termination_cost;
            }
        }
        Some(value)
    }

    /// Groups cells connected by arcs; each group is an independent problem.
    fn components(&self) -> Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let nl = self.left.len();
        let mut uf = petgraph::unionfind::UnionFind::<usize>::new(nl + self.right_birth.len());
        for arc in &self.arcs {
            uf.union(arc.left, nl + arc.right);
        }
        let mut slot = vec![usize::MAX; nl + self.right_birth.len()];
        let mut comps: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = Vec::new();
        for x in 0..nl + self.right_birth.len() {
            let r = uf.find_mut(x);
            if slot[r] == usize::MAX {
                slot[r] = comps.len();
                comps.push(Default::default());
            }
            let comp = &mut comps[slot[r]];
            if x < nl {
                comp.0.push(x);
            } else {
                comp.1.push(x - nl);
            }
        }
        for (a, arc) in self.arcs.iter().enumerate() {
            let r = uf.find_mut(arc.left);
            comps[slot[r]].2.push(a);
        }
        comps
    }
}

/// Left-side vertex of the matching problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeftNode {
    Original(usize),
    Duplicate(usize),
    Birth(usize),
}

/// Right-side vertex of the matching problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RightNode {
    Target(usize),
    Termination(usize),
    DuplicateTermination(usize),
}

/// Balanced bipartite matching instance built from a [`PairProblem`].
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingProblem {
    pub left: Vec<LeftNode>,
    pub right: Vec<RightNode>,
    /// `(left index, right index, cost)`.
    pub edges: Vec<(usize, usize, f64)>,
}

impl MatchingProblem {
    pub fn from_pair(p: &PairProblem) -> Self {
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut orig = vec![usize::MAX; p.left.len()];
        let mut dup = vec![usize::MAX; p.left.len()];
        let mut term = vec![usize::MAX; p.left.len()];
        let mut dup_term = vec![usize::MAX; p.left.len()];
        for (i, cell) in p.left.iter().enumerate() {
            if cell.capacity >= 1 {
                orig[i] = left.len();
                left.push(LeftNode::Original(i));
            }
        }
        for (i, cell) in p.left.iter().enumerate() {
            if cell.capacity >= 2 {
                dup[i] = left.len();
                left.push(LeftNode::Duplicate(i));
            }
        }
        let births: Vec<usize> = (0..p.right_birth.len()).map(|j| {
            left.push(LeftNode::Birth(j));
            left.len() - 1
        }).collect();
        let targets: Vec<usize> = (0..p.right_birth.len()).map(|j| {
            right.push(RightNode::Target(j));
            right.len() - 1
        }).collect();
        for (i, cell) in p.left.iter().enumerate() {
            if cell.capacity >= 1 {
                term[i] = right.len();
                right.push(RightNode::Termination(i));
            }
        }
        for (i, cell) in p.left.iter().enumerate() {
            if cell.capacity >= 2 {
                dup_term[i] = right.len();
                right.push(RightNode::DuplicateTermination(i));
            }
        }

        let mut edges = Vec::new();
        for arc in &p.arcs {
            if orig[arc.left] != usize::MAX {
                edges.push((orig[arc.left], targets[arc.right], arc.cost));
            }
            if dup[arc.left] != usize::MAX {
                edges.push((dup[arc.left], targets[arc.right], arc.cost));
            }
        }
        for (i, cell) in p.left.iter().enumerate() {
            if orig[i] != usize::MAX {
                edges.push((orig[i], term[i], cell.termination_cost));
            }
            if dup[i] != usize::MAX {
                edges.push((dup[i], dup_term[i], 0.0));
            }
        }
        for (j, &birth) in p.right_birth.iter().enumerate() {
            edges.push((births[j], targets[j], birth));
        }
        for arc in &p.arcs {
            if term[arc.left] != usize::MAX {
                edges.push((births[arc.right], term[arc.left], 0.0));
            }
            if dup_term[arc.left] != usize::MAX {
                edges.push((births[arc.right], dup_term[arc.left], 0.0));
            }
        }
        Self { left, right, edges }
    }

    /// Cost of a full matching given as `left -> right`.
    pub fn matching_cost(&self, matching: &[usize]) -> Result<f64> {
        if matching.len() != self.left.len() || self.left.len() != self.right.len() {
            return Err(Error::ImperfectMatching("matching does not cover every node".into()));
        }
        let mut seen = vec![false; self.right.len()];
        let mut total = 0.0;
        for (i, &j) in matching.iter().enumerate() {
            if j >= self.right.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::ImperfectMatching(format!("right node {j} matched twice or out of range")));
            }
            let cost = self
                .edges
                .iter()
                .find(|&&(a, b, _)| a == i && b == j)
                .map(|&(_, _, c)| c)
                .ok_or_else(|| Error::ImperfectMatching(format!("no edge between {i} and {j}")))?;
            total += cost;
        }
        Ok(total)
    }
}

/// Minimum-cost perfect matching of a matching problem.
pub fn solve_matching(mp: &MatchingProblem) -> Result<(Vec<usize>, f64)> {
    let n = mp.left.len();
    if n != mp.right.len() {
        return Err(Error::NoPerfectMatching);
    }
    let mut m = CostMatrix::new(n);
    for &(a, b, c) in &mp.edges {
        match m.get(a, b) {
            Some(old) if old <= c => {}
            _ => m.set(a, b, c),
        }
    }
    assignment::solve(&m)
}

/// Reads the parent assignment off a perfect matching.
pub fn extract_pair(p: &PairProblem, mp: &MatchingProblem, matching: &[usize]) -> Result<PairSolution> {
    mp.matching_cost(matching)?;
    let mut parent_arc = vec![None; p.right_birth.len()];
    let arc_index: std::collections::HashMap<(usize, usize), usize> =
        p.arcs.iter().enumerate().map(|(k, a)| ((a.left, a.right), k)).collect();
    for (li, &ri) in matching.iter().enumerate() {
        let source = match mp.left[li] {
            LeftNode::Original(i) | LeftNode::Duplicate(i) => i,
            LeftNode::Birth(_) => continue,
        };
        if let RightNode::Target(j) = mp.right[ri] {
            if parent_arc[j].is_some() {
                return Err(Error::ImperfectMatching(format!("right cell {j} matched twice")));
            }
            parent_arc[j] = Some(arc_index[&(source, j)]);
        }
    }
    let value = p.value_of(&parent_arc).ok_or_else(|| Error::ImperfectMatching("capacity exceeded".into()))?;
    Ok(PairSolution { parent_arc, value })
}

/// Solves a frame-pair problem exactly, one connected component at a time.
pub fn solve_pair(p: &PairProblem) -> Result<PairSolution> {
    let mut parent_arc = vec![None; p.right_birth.len()];
    for (lefts, rights, arcs) in p.components() {
        if arcs.is_empty() {
            continue;
        }
        let mut lmap = vec![usize::MAX; p.left.len()];
        for (k, &i) in lefts.iter().enumerate() {
            lmap[i] = k;
        }
        let mut rmap = vec![usize::MAX; p.right_birth.len()];
        for (k, &j) in rights.iter().enumerate() {
            rmap[j] = k;
        }
        let sub = PairProblem {
            left: lefts.iter().map(|&i| p.left[i]).collect(),
            right_birth: rights.iter().map(|&j| p.right_birth[j]).collect(),
            arcs: arcs
                .iter()
                .map(|&a| PairArc { left: lmap[p.arcs[a].left], right: rmap[p.arcs[a].right], cost: p.arcs[a].cost })
                .collect(),
        };
        let mp = MatchingProblem::from_pair(&sub);
        let (matching, _) = solve_matching(&mp)?;
        let sol = extract_pair(&sub, &mp, &matching)?;
        for (k, choice) in sol.parent_arc.into_iter().enumerate() {
            parent_arc[rights[k]] = choice.map(|a| arcs[a]);
        }
    }
    let value = p.value_of(&parent_arc).ok_or_else(|| Error::ImperfectMatching("capacity exceeded".into()))?;
    Ok(PairSolution { parent_arc, value })
}

/// Exhaustive minimum over all parent assignments of a frame pair.
pub fn brute_force_pair(p: &PairProblem) -> f64 {
    let mut incoming = vec![Vec::new(); p.right_birth.len()];
    for (a, arc) in p.arcs.iter().enumerate() {
        incoming[arc.right].push(a);
    }
    fn rec(p: &PairProblem, inc: &[Vec<usize>], j: usize, choice: &mut Vec<Option<usize>>, best: &mut f64) {
        if j == inc.len() {
            if let Some(v) = p.value_of(choice) {
                *best = best.min(v);
            }
            return;
        }
        choice.push(None);
        rec(p, inc, j + 1, choice, best);
        choice.pop();
        for &a in &inc[j] {
            choice.push(Some(a));
            rec(p, inc, j + 1, choice, best);
            choice.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(p, &incoming, 0, &mut Vec::new(), &mut best);
    best
}

/// Frame-pair problem of a quotient view, with full capacities.
pub fn pair_problem(q: &QuotientGraph, view: &FramePairView) -> Result<PairProblem> {
    let frame_ok = view.left.iter().all(|&c| c < q.num_cells() && q.frame_of_cell(c) == view.t)
        && view.right.iter().all(|&c| c < q.num_cells() && q.frame_of_cell(c) == view.t + 1);
    if !frame_ok {
        return Err(Error::NotFramePair(format!("cells outside frames {} and {}", view.t, view.t + 1)));
    }
    let mut lpos = std::collections::HashMap::new();
    for (i, &c) in view.left.iter().enumerate() {
        lpos.insert(c, i);
    }
    let mut rpos = std::collections::HashMap::new();
    for (j, &c) in view.right.iter().enumerate() {
        rpos.insert(c, j);
    }
    let mut arcs = Vec::with_capacity(view.arcs.len());
    for &a in &view.arcs {
        let arc = q.arc(a);
        match (lpos.get(&arc.a), rpos.get(&arc.b)) {
            (Some(&left), Some(&right)) => arcs.push(PairArc { left, right, cost: arc.cost }),
            _ => return Err(Error::NotFramePair(format!("arc {a} leaves the frame pair"))),
        }
    }
    Ok(PairProblem {
        left: view.left.iter().map(|&c| LeftCell { capacity: 2, termination_cost: q.termination_cost(c) }).collect(),
        right_birth: view.right.iter().map(|&c| q.birth_cost(c)).collect(),
        arcs,
    })
}

/// Matching problem of one frame pair, with the cell ids behind each index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatching {
    pub view: FramePairView,
    pub problem: PairProblem,
    pub matching: MatchingProblem,
}

/// Builds the matching instance for a frame pair of `q`.
pub fn build_matching(q: &QuotientGraph, view: &FramePairView) -> Result<PairMatching> {
    let problem = pair_problem(q, view)?;
    let matching = MatchingProblem::from_pair(&problem);
    Ok(PairMatching { view: view.clone(), problem, matching })
}

/// Branching restricted to one frame pair, in quotient ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairBranching {
    pub active: Vec<ArcId>,
    pub births: Vec<CellId>,
    pub terminations: Vec<CellId>,
}

/// Converts a perfect matching of `pm` into active arcs and flags.
pub fn extract_branching(pm: &PairMatching, matching: &[usize]) -> Result<PairBranching> {
    let sol = extract_pair(&pm.problem, &pm.matching, matching)?;
    Ok(pair_branching(pm, &sol))
}

fn pair_branching(pm: &PairMatching, sol: &PairSolution) -> PairBranching {
    let mut out = PairBranching::default();
    let mut has_child = vec![false; pm.view.left.len()];
    for (j, choice) in sol.parent_arc.iter().enumerate() {
        match choice {
            Some(a) => {
                out.active.push(pm.view.arcs[*a]);
                has_child[pm.problem.arcs[*a].left] = true;
            }
            None => out.births.push(pm.view.right[j]),
        }
    }
    out.terminations = pm.view.left.iter().zip(&has_child).filter(|(_, &h)| !h).map(|(&c, _)| c).collect();
    out.active.sort_unstable();
    out
}

/// Optimal branching over all frame pairs.
pub fn solve_mcb(q: &QuotientGraph) -> Result<Branching> {
    solve_mcb_with(q, Execution::Sequential)
}

/// [`solve_mcb`] with frame pairs optionally solved in parallel.
pub fn solve_mcb_with(q: &QuotientGraph, exec: Execution) -> Result<Branching> {
    let pairs = q.num_frames().saturating_sub(1);
    let solved = par::map_range(exec, pairs, |t| -> Result<Vec<ArcId>> {
        let view = q.frame_pair_subgraph(t)?;
        let pm = build_matching(q, &view)?;
        let sol = solve_pair(&pm.problem)?;
        Ok(pair_branching(&pm, &sol).active)
    });
    let mut active = vec![false; q.arcs().len()];
    for arcs in solved {
        for a in arcs? {
            active[a] = true;
        }
    }
    Ok(Branching::from_active(q, active))
}

/// Re-solves the branching inside `restrict`, keeping every arc that links a
/// cell inside the set to one outside it. Cells with such a frozen parent
/// keep it; cells with frozen children have correspondingly fewer free slots.
pub fn resolve_mcb(q: &QuotientGraph, prior: &Branching, restrict: &BTreeSet<CellId>) -> Result<Branching> {
    if let Some(&c) = restrict.iter().find(|&&c| c >= q.num_cells()) {
        return Err(Error::InvalidRestriction(format!("cell {c} does not exist")));
    }
    if prior.active.len() != q.arcs().len() || prior.cell_birth.len() != q.num_cells() {
        return Err(Error::InvalidRestriction("prior branching does not fit the quotient".into()));
    }
    prior.validate(q).map_err(|e| Error::InvalidRestriction(e.to_string()))?;
    let mut active = prior.active.clone();
    for t in 0..q.num_frames().saturating_sub(1) {
        let left: Vec<CellId> = q.partition().frame_cells(t).iter().copied().filter(|c| restrict.contains(c)).collect();
        let right_all: Vec<CellId> =
            q.partition().frame_cells(t + 1).iter().copied().filter(|c| restrict.contains(c)).collect();
        if left.is_empty() && right_all.is_empty() {
            continue;
        }
        let in_left: BTreeSet<CellId> = left.iter().copied().collect();
        // Right cells whose parent lies outside the region keep it.
        let right: Vec<CellId> = right_all
            .into_iter()
            .filter(|&c| prior.parent(q, c).is_none_or(|p| in_left.contains(&p)))
            .collect();
        let in_right: BTreeSet<CellId> = right.iter().copied().collect();
        let mut problem = PairProblem::default();
        for &c in &left {
            let frozen = prior.children(q, c).iter().filter(|ch| !in_right.contains(ch)).count() as u8;
            let termination_cost = if frozen > 0 { 0.0 } else { q.termination_cost(c) };
            problem.left.push(LeftCell { capacity: 2 - frozen, termination_cost });
        }
        problem.right_birth = right.iter().map(|&c| q.birth_cost(c)).collect();
        let mut arc_ids = Vec::new();
        for (i, &a) in left.iter().enumerate() {
            for &id in q.out_arcs(a) {
                if let Ok(j) = right.binary_search(&q.arc(id).b) {
                    problem.arcs.push(PairArc { left: i, right: j, cost: q.arc(id).cost });
                    arc_ids.push(id);
                }
            }
        }
        for &c in &right {
            for &id in q.in_arcs(c) {
                active[id] = false;
            }
        }
        let sol = solve_pair(&problem)?;
        for choice in sol.parent_arc.into_iter().flatten() {
            active[arc_ids[choice]] = true;
        }
    }
    let b = Branching::from_active(q, active);
    b.validate(q)?;
    Ok(b)
}

/// Exhaustive joint minimum over all branchings of `q`; for tests.
pub fn brute_force_mcb(q: &QuotientGraph) -> f64 {
    let cells: Vec<CellId> = (0..q.num_cells()).filter(|&c| q.frame_of_cell(c) > 0).collect();
    fn rec(q: &QuotientGraph, cells: &[CellId], k: usize, active: &mut Vec<bool>, best: &mut f64) {
        if k == cells.len() {
            let b = Branching::from_active(q, active.clone());
            if (0..q.num_cells()).all(|c| q.out_arcs(c).iter().filter(|&&a| b.active[a]).count() <= 2) {
                *best = best.min(b.value(q));
            }
            return;
        }
        rec(q, cells, k + 1, active, best);
        for &a in q.in_arcs(cells[k]) {
            active[a] = true;
            rec(q, cells, k + 1, active, best);
            active[a] = false;
        }
    }
    let mut best = f64::INFINITY;
    rec(q, &cells, 0, &mut vec![false; q.arcs().len()], &mut best);
    best
}

/// Whether two branching values agree within the solver tolerance.
pub fn same_value(a: f64, b: f64) -> bool {
    (a - b).abs() <= EPSILON * (1.0 + a.abs().max(b.abs()))
}
