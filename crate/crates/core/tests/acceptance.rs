//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlt_core::assignment::{self, CostMatrix};
use mlt_core::branching::{brute_force_mcb, pair_problem, solve_mcb, solve_pair};
use mlt_core::exact::{exact_solve, exhaustive_labeling_solve, feasible_points, ExactLimits, FeasiblePoint};
use mlt_core::feasibility::{check_indicators, check_lineage, implied_indicators, ViolationKind};
use mlt_core::generator::{generate, random_graph, GeneratorParams, Layout, RandomGraphParams};
use mlt_core::gla::{gla_solve, GlaConfig};
use mlt_core::klb::{klb_solve, KlbConfig};
use mlt_core::quotient::{intra_components, FramePartition, QuotientGraph};
use mlt_core::separation::{
    check_bifurcation, separate_birth_termination, separate_cycles, separate_indicator_consistency,
    separate_integral, separate_morality, separate_odd_wheels, Inequality, Variable,
};
use mlt_core::{decompose_objective, fixture_i3, Edge, objective, HypothesisGraph, Labeling};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn oracle_graph(rng: &mut ChaCha8Rng) -> HypothesisGraph {
    let frames = rng.random_range(1..=3);
    random_graph(rng, &RandomGraphParams { frames, max_nodes_per_frame: 5, max_edges: 16, ..Default::default() })
}

fn cross_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let limits = ExactLimits::default();
    for i in 0..120 {
        let g = oracle_graph(&mut rng);
        let a = exact_solve(&g, &limits).map_err(|e| e.to_string())?;
        let b = exhaustive_labeling_solve(&g, &limits).map_err(|e| e.to_string())?;
        ensure(round9(a.objective) == round9(b.objective), || {
            format!("instance {i}: partition DP {} vs enumeration {}", a.objective, b.objective)
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("120 instances agree, {secs:.2} s"))
}

/// Random graph on consecutive frames with a random partition into cells.
fn random_quotient(rng: &mut ChaCha8Rng, frames: usize, max_nodes: usize) -> QuotientGraph {
    let p = RandomGraphParams {
        frames,
        max_nodes_per_frame: max_nodes,
        intra_prob: 0.4,
        inter_prob: 0.5,
        max_edges: 200,
        cost_range: 6,
        indicator_range: 4,
    };
    let g = random_graph(rng, &p);
    let labels: Vec<f64> = (0..g.num_edges()).map(|e| if g.is_intra(e) && rng.random_bool(0.5) { 0.0 } else { 1.0 }).collect();
    let p = FramePartition::from_cell_of(&g, intra_components(&g, &labels)).expect("components are connected");
    QuotientGraph::build(&g, &p).expect("partition fits")
}

fn matching_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut arcs = 0;
    for i in 0..600 {
        let q = random_quotient(&mut rng, 2, 6);
        let b = solve_mcb(&q).map_err(|e| e.to_string())?;
        b.validate(&q).map_err(|e| e.to_string())?;
        let brute = brute_force_mcb(&q);
        ensure(b.value(&q) == brute, || format!("quotient {i}: matching {} vs enumeration {brute}", b.value(&q)))?;
        arcs += q.arcs().len();
    }
    Ok(format!("600 frame-pair quotients, {arcs} arcs in total, all exact"))
}

fn frame_pair_decomposition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for i in 0..120 {
        let q = random_quotient(&mut rng, 4, 3);
        let mut sum = 0.0;
        for t in 0..3 {
            let view = q.frame_pair_subgraph(t).map_err(|e| e.to_string())?;
            let problem = pair_problem(&q, &view).map_err(|e| e.to_string())?;
            sum += solve_pair(&problem).map_err(|e| e.to_string())?.value;
        }
        let joint = brute_force_mcb(&q);
        ensure(sum == joint, || format!("quotient {i}: per-pair sum {sum} vs joint {joint}"))?;
    }
    Ok("120 four-frame quotients, per-pair sums equal joint optima".into())
}

fn feasible(g: &HypothesisGraph, l: &Labeling) -> Result<(), String> {
    let lineage = check_lineage(g, l).map_err(|e| e.to_string())?;
    ensure(lineage.is_empty(), || format!("{} lineage violations", lineage.len()))?;
    let ind = check_indicators(g, l).map_err(|e| e.to_string())?;
    ensure(ind.is_empty(), || format!("{} indicator violations", ind.len()))?;
    let bif = check_bifurcation(g, l).map_err(|e| e.to_string())?;
    ensure(bif.is_empty(), || format!("{} bifurcations", bif.len()))
}

fn heuristic_ordering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let eps = 1e-9;
    let (mut improved, mut oracle) = (0, 0);
    for i in 0..260 {
        let small = i < 200;
        let g = if small {
            oracle_graph(&mut rng)
        } else {
            let p = GeneratorParams {
                frames: 6,
                cells_per_frame: 6,
                fragments_per_cell: 3,
                division_prob: 0.2,
                noise_sigma: 2.0,
                seed: i as u64,
                ..Default::default()
            };
            generate(&p).map_err(|e| e.to_string())?.graph
        };
        let gla = gla_solve(&g, &GlaConfig::default()).map_err(|e| e.to_string())?;
        feasible(&g, &gla.labeling).map_err(|e| format!("instance {i}, GLA: {e}"))?;
        let klb = klb_solve(&g, &gla.labeling, &KlbConfig::default()).map_err(|e| e.to_string())?;
        feasible(&g, &klb.labeling).map_err(|e| format!("instance {i}, KLB: {e}"))?;
        ensure(klb.objective <= gla.objective + eps && gla.objective <= gla.initial_objective + eps, || {
            format!("instance {i}: KLB {} GLA {} singletons {}", klb.objective, gla.objective, gla.initial_objective)
        })?;
        if klb.objective < gla.objective - eps {
            improved += 1;
        }
        if small {
            let exact = exact_solve(&g, &ExactLimits::default()).map_err(|e| e.to_string())?;
            ensure(exact.objective <= klb.objective + eps, || {
                format!("instance {i}: exact {} above KLB {}", exact.objective, klb.objective)
            })?;
            oracle += 1;
        }
    }
    Ok(format!("260 instances feasible and ordered ({oracle} against the exact optimum), KLB improved GLA on {improved}"))
}

fn delta_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut gla_steps, mut klb_steps) = (0, 0);
    let tol = 1e-9;
    for i in 0..80 {
        let g = if i < 60 {
            random_graph(&mut rng, &RandomGraphParams { max_edges: 30, ..Default::default() })
        } else {
            let p = GeneratorParams {
                frames: 5,
                cells_per_frame: 5,
                fragments_per_cell: 3,
                division_prob: 0.2,
                noise_sigma: 2.0,
                seed: i,
                ..Default::default()
            };
            generate(&p).map_err(|e| e.to_string())?.graph
        };
        let gla = gla_solve(&g, &GlaConfig { audit: true, ..Default::default() }).map_err(|e| e.to_string())?;
        for s in &gla.trace {
            let a = s.audited.expect("audited");
            ensure((s.objective - a).abs() <= tol, || format!("instance {i}: GLA tracked {} vs {a}", s.objective))?;
        }
        gla_steps += gla.trace.len();
        for d in [None, Some(1)] {
            let cfg = KlbConfig { d_mcbp: d, audit: true, ..Default::default() };
            let klb = klb_solve(&g, &gla.labeling, &cfg).map_err(|e| e.to_string())?;
            for s in &klb.steps {
                let a = s.audited.expect("audited");
                ensure((s.objective - a).abs() <= tol, || format!("instance {i}: KLB tracked {} vs {a}", s.objective))?;
            }
            klb_steps += klb.steps.len();
        }
    }
    Ok(format!("{gla_steps} GLA steps and {klb_steps} KLB moves match recomputation"))
}

fn fixture() -> Outcome {
    let g = fixture_i3();
    // {0,1} -> {2}, {3}: only the intra edge 2-3 is cut.
    let division = vec![0.0, 1.0, 0.0, 0.0];
    let gla = gla_solve(&g, &GlaConfig::default()).map_err(|e| e.to_string())?;
    let klb = klb_solve(&g, &gla.labeling, &KlbConfig::default()).map_err(|e| e.to_string())?;
    let exact = exact_solve(&g, &ExactLimits::default()).map_err(|e| e.to_string())?;
    let brute = exhaustive_labeling_solve(&g, &ExactLimits::default()).map_err(|e| e.to_string())?;
    for (name, obj, l) in [
        ("GLA", gla.objective, &gla.labeling),
        ("KLB", klb.objective, &klb.labeling),
        ("exact", exact.objective, &exact.labeling),
        ("exhaustive", brute.objective, &brute.labeling),
    ] {
        ensure(obj == -3.0, || format!("{name} objective {obj}"))?;
        ensure(l.edge_labels == division, || format!("{name} labels {:?}", l.edge_labels))?;
        ensure(l.birth.iter().chain(&l.termination).all(|&x| x == 0.0), || format!("{name} pays indicators"))?;
    }
    Ok("GLA, KLB and both exact solvers return -3 with {0,1} -> {2},{3}".into())
}

fn worst_case(ineq: &Inequality, p: &FeasiblePoint) -> f64 {
    let mut lhs = ineq.lhs(&p.labeling);
    let coeff = |group: &[usize], birth: bool| -> f64 {
        ineq.terms
            .iter()
            .filter(|(v, _)| match v {
                Variable::Birth(n) => birth && group.contains(n),
                Variable::Termination(n) => !birth && group.contains(n),
                Variable::Edge(_) => false,
            })
            .map(|(_, c)| c)
            .sum()
    };
    for gr in &p.optional_birth {
        lhs += coeff(gr, true).max(0.0);
    }
    for gr in &p.optional_termination {
        lhs += coeff(gr, false).max(0.0);
    }
    lhs
}

fn key(ineq: &Inequality) -> (Vec<(Variable, i64)>, i64) {
    (ineq.terms.iter().map(|&(v, c)| (v, c.round() as i64)).collect(), ineq.rhs.round() as i64)
}

/// Every inequality any separator emits for `l`, after the soundness check.
fn emitted(g: &HypothesisGraph, l: &Labeling) -> Result<Vec<Inequality>, String> {
    let mut all = Vec::new();
    let err = |e: mlt_core::Error| e.to_string();
    all.extend(separate_cycles(g, l, true).map_err(err)?);
    all.extend(separate_cycles(g, l, false).map_err(err)?);
    all.extend(separate_odd_wheels(g, l).map_err(err)?);
    all.extend(separate_indicator_consistency(g, l).map_err(err)?);
    if l.has_integral_values() {
        for reduced in [true, false] {
            if let Ok(m) = separate_morality(g, l, reduced) {
                all.extend(m);
            }
            if let Ok(b) = separate_birth_termination(g, l, reduced) {
                all.extend(b);
            }
        }
    }
    for ineq in &all {
        ensure(ineq.is_violated(l), || format!("{:?} inequality not violated by its query", ineq.family))?;
    }
    Ok(all)
}

/// Indicator constraints on a lineage cut, tolerating bifurcations.
fn indicators_ok(g: &HypothesisGraph, l: &Labeling) -> bool {
    let cell = intra_components(g, &l.edge_labels);
    let n = g.num_nodes();
    let (mut parent, mut child) = (vec![false; n], vec![false; n]);
    for e in 0..g.num_edges() {
        let Edge { u, v, .. } = *g.edge(e);
        if !g.is_intra(e) && !l.is_cut(e) {
            let (lo, hi) = if g.frame(u) < g.frame(v) { (u, v) } else { (v, u) };
            child[cell[lo]] = true;
            parent[cell[hi]] = true;
        }
    }
    (0..n).all(|v| {
        let t = g.frame(v);
        (t == 0 || l.has_birth(v) || parent[cell[v]]) && (t == g.last_frame() || l.has_termination(v) || child[cell[v]])
    }) && (0..g.num_edges()).all(|e| {
        let Edge { u, v, .. } = *g.edge(e);
        !g.is_intra(e) || l.is_cut(e) || (l.birth[u] == l.birth[v] && l.termination[u] == l.termination[v])
    })
}

fn separation_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let limits = ExactLimits { max_edges: 8, ..Default::default() };
    let (mut checked, mut queries) = (0usize, 0usize);
    for gi in 0..150 {
        let p = RandomGraphParams { frames: 3, max_nodes_per_frame: 4, intra_prob: 0.6, inter_prob: 0.5, max_edges: 8, ..Default::default() };
        let g = random_graph(&mut rng, &p);
        let m = g.num_edges();
        let points = feasible_points(&g, &limits).map_err(|e| e.to_string())?;
        let mut pool: BTreeSet<(Vec<(Variable, i64)>, i64)> = BTreeSet::new();
        let mut ineqs = Vec::new();
        for mask in 0..1u32 << m {
            let edges: Vec<f64> = (0..m).map(|e| (mask >> e & 1) as f64).collect();
            let implied = implied_indicators(&g, edges.clone());
            let bare = Labeling::integral(edges.clone(), vec![0.0; g.num_nodes()], vec![0.0; g.num_nodes()]).unwrap();
            let noisy = Labeling::integral(
                edges,
                (0..g.num_nodes()).map(|_| rng.random_range(0..2) as f64).collect(),
                (0..g.num_nodes()).map(|_| rng.random_range(0..2) as f64).collect(),
            )
            .unwrap();
            for l in [implied, bare, noisy] {
                queries += 1;
                for ineq in emitted(&g, &l).map_err(|e| format!("graph {gi}: {e}"))? {
                    if pool.insert(key(&ineq)) {
                        ineqs.push(ineq);
                    }
                }
                // Completeness at integrality.
                let lineage: Vec<_> = check_lineage(&g, &l)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .filter(|v| v.kind != ViolationKind::Bifurcation)
                    .collect();
                let infeasible = !lineage.is_empty() || !indicators_ok(&g, &l);
                let found = !separate_integral(&g, &l, true).map_err(|e| e.to_string())?.is_empty();
                let found_original = !separate_integral(&g, &l, false).map_err(|e| e.to_string())?.is_empty();
                ensure(found == infeasible && found_original == infeasible, || {
                    format!("graph {gi}: separation {found}/{found_original} but infeasible = {infeasible}")
                })?;
            }
        }
        // Fractional queries for the families that accept them.
        for _ in 0..20 {
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect();
            let l = Labeling::fractional(x, vec![0.0; g.num_nodes()], vec![0.0; g.num_nodes()]).unwrap();
            queries += 1;
            for ineq in emitted(&g, &l).map_err(|e| format!("graph {gi}: {e}"))? {
                if pool.insert(key(&ineq)) {
                    ineqs.push(ineq);
                }
            }
        }
        for ineq in &ineqs {
            for p in &points {
                let worst = worst_case(ineq, p);
                ensure(worst <= ineq.rhs + 1e-9, || {
                    format!("graph {gi}: {:?} cuts off a feasible labeling ({worst} > {})", ineq.family, ineq.rhs)
                })?;
            }
        }
        checked += ineqs.len();
    }
    Ok(format!("{queries} queries on 150 graphs, {checked} distinct inequalities sound and valid, complete at integrality"))
}

/// Labelings whose intra part is a multicut but whose links break morality.
fn morality_fixtures() -> Vec<(HypothesisGraph, Labeling)> {
    let mut out = vec![(fixture_i3(), implied_indicators(&fixture_i3(), vec![1.0, 0.0, 0.0, 0.0]))];
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    while out.len() < 60 {
        let p = RandomGraphParams { frames: 3, max_nodes_per_frame: 5, intra_prob: 0.5, inter_prob: 0.6, max_edges: 40, ..Default::default() };
        let g = random_graph(&mut rng, &p);
        let intra: Vec<f64> = (0..g.num_edges()).map(|e| if g.is_intra(e) { rng.random_range(0..2) as f64 } else { 0.0 }).collect();
        let cells = intra_components(&g, &intra);
        let labels = (0..g.num_edges())
            .map(|e| if g.is_intra(e) { (cells[g.edge(e).u] != cells[g.edge(e).v]) as u8 as f64 } else { rng.random_range(0..2) as f64 })
            .collect();
        let l = implied_indicators(&g, labels);
        let morality = check_lineage(&g, &l).unwrap().iter().filter(|v| v.kind == ViolationKind::Morality).count();
        if morality >= 2 {
            out.push((g, l));
        }
    }
    out
}

fn morality_report() -> Outcome {
    let (mut reduced_total, mut original_total, mut strict) = (0, 0, 0);
    let fixtures = morality_fixtures();
    for (i, (g, l)) in fixtures.iter().enumerate() {
        let reduced = separate_morality(g, l, true).map_err(|e| e.to_string())?.len();
        let original = separate_morality(g, l, false).map_err(|e| e.to_string())?.len();
        ensure(reduced <= original, || format!("fixture {i}: reduced {reduced} > original {original}"))?;
        ensure(reduced > 0, || format!("fixture {i}: no morality cut found"))?;
        reduced_total += reduced;
        original_total += original;
        strict += (reduced < original) as usize;
    }
    Ok(format!(
        "{} fixtures: {reduced_total} reduced vs {original_total} original cuts, fewer on {strict}",
        fixtures.len()
    ))
}

fn performance() -> Outcome {
    let p = GeneratorParams {
        frames: 50,
        cells_per_frame: 100,
        fragments_per_cell: 2,
        division_prob: 0.05,
        noise_sigma: 1.5,
        seed: 7,
        layout: Layout::Strip,
        intra_neighbors: 2,
        temporal_neighbors: 4,
        max_cells_per_frame: Some(100),
        ..Default::default()
    };
    let big = generate(&p).map_err(|e| e.to_string())?.graph;
    ensure(big.num_nodes() == 10_000 && big.num_edges() >= 40_000, || {
        format!("instance has {} nodes and {} edges", big.num_nodes(), big.num_edges())
    })?;
    let start = Instant::now();
    gla_solve(&big, &GlaConfig::default()).map_err(|e| e.to_string())?;
    let gla_s = start.elapsed().as_secs_f64();
    ensure(gla_s < 5.0, || format!("GLA took {gla_s:.2} s"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut m = CostMatrix::new(500);
    for i in 0..500 {
        for j in 0..500 {
            m.set(i, j, rng.random_range(-1000.0..1000.0));
        }
    }
    let start = Instant::now();
    assignment::solve(&m).map_err(|e| e.to_string())?;
    let hung_s = start.elapsed().as_secs_f64();
    ensure(hung_s < 2.0, || format!("500x500 matching took {hung_s:.2} s"))?;

    let p = GeneratorParams {
        frames: 20,
        cells_per_frame: 50,
        fragments_per_cell: 2,
        division_prob: 0.05,
        noise_sigma: 1.5,
        seed: 7,
        layout: Layout::Strip,
        intra_neighbors: 3,
        temporal_neighbors: 3,
        max_cells_per_frame: Some(50),
        ..Default::default()
    };
    let mid = generate(&p).map_err(|e| e.to_string())?.graph;
    ensure(mid.num_nodes() == 2_000, || format!("KLB instance has {} nodes", mid.num_nodes()))?;
    let start_l = gla_solve(&mid, &GlaConfig::default()).map_err(|e| e.to_string())?.labeling;
    let run = |d| -> Result<(f64, f64, Option<String>), String> {
        let start = Instant::now();
        let r = klb_solve(&mid, &start_l, &KlbConfig { d_mcbp: d, ..Default::default() }).map_err(|e| e.to_string())?;
        let warn = r.iterations.iter().find_map(|it| it.warning.clone());
        Ok((start.elapsed().as_secs_f64(), r.objective, warn))
    };
    let (local_s, local_obj, warn) = run(Some(10))?;
    let (full_s, full_obj, _) = run(None)?;
    ensure(local_s < 60.0, || format!("KLB d=10 took {local_s:.1} s"))?;
    let close = local_obj <= full_obj + 1e-6 || (local_obj - full_obj).abs() <= 0.01 * full_obj.abs();
    ensure(close, || format!("KLB d=10 objective {local_obj} vs unbounded {full_obj}"))?;
    ensure(local_s <= full_s, || format!("KLB d=10 took {local_s:.2} s, unbounded {full_s:.2} s"))?;
    check_objective(&mid, &start_l)?;
    Ok(format!(
        "GLA {gla_s:.2} s on {} nodes/{} edges; 500x500 matching {hung_s:.2} s; KLB d=10 {local_s:.2} s (obj {local_obj:.4}) vs unbounded {full_s:.2} s (obj {full_obj:.4}){}",
        big.num_nodes(),
        big.num_edges(),
        warn.map(|w| format!("; warning: {w}")).unwrap_or_default()
    ))
}

fn check_objective(g: &HypothesisGraph, l: &Labeling) -> Result<(), String> {
    let parts = decompose_objective(g, l).map_err(|e| e.to_string())?;
    let total = objective(g, l).map_err(|e| e.to_string())?;
    ensure((parts.total() - total).abs() <= 1e-6 * total.abs().max(1.0), || {
        format!("decomposition {} vs objective {total}", parts.total())
    })
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 cross-oracle exactness", cross_oracle),
        ("2 matching reduction", matching_reduction),
        ("3 frame-pair decomposition", frame_pair_decomposition),
        ("4 heuristic feasibility and ordering", heuristic_ordering),
        ("5 incremental-delta integrity", delta_integrity),
        ("6 fixture I3", fixture),
        ("7 separation soundness and validity", separation_validity),
        ("8 morality-cut reduction", morality_report),
        ("9 performance sanity", performance),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
