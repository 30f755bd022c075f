use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlt_core::exact::{exact_solve, gap, ExactLimits};
use mlt_core::feasibility::check_all;
use mlt_core::generator::{generate, random_graph, GeneratorParams, RandomGraphParams};
use mlt_core::gla::{gla_solve, GlaConfig};
use mlt_core::io::{instance_hash, instance_to_string, parse_instance, Solution};
use mlt_core::klb::{klb_solve, KlbConfig};
use mlt_core::quotient::{DynamicQuotient, FramePartition, QuotientGraph};
use mlt_core::{decompose_objective, objective};

fn graph(seed: u64, max_edges: usize) -> mlt_core::HypothesisGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_graph(&mut rng, &RandomGraphParams { max_nodes_per_frame: 6, max_edges, ..Default::default() })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dynamic_quotient_matches_rebuild(seed in any::<u64>(), ops in prop::collection::vec((any::<u16>(), any::<u16>(), any::<bool>()), 1..20)) {
        let g = graph(seed, 40);
        let mut dq = DynamicQuotient::new(&g, &FramePartition::singletons(&g));
        for (a, b, merge) in ops {
            let v = a as usize % g.num_nodes();
            let t = g.frame(v);
            let peers = g.frame_nodes(t);
            let w = peers[b as usize % peers.len()];
            let (cv, cw) = (dq.cell_of(v), dq.cell_of(w));
            if cv == cw {
                continue;
            }
            if merge {
                dq.merge(cv, cw);
            } else {
                dq.move_node(v, cw);
            }
        }
        let rebuilt = QuotientGraph::build(&g, &dq.to_partition()).unwrap();
        prop_assert_eq!(dq.canonical_arcs(), rebuilt.canonical_arcs());
    }

    #[test]
    fn instances_round_trip(seed in 0u64..1000, sigma in 0.1f64..3.0) {
        let p = GeneratorParams { frames: 3, cells_per_frame: 3, noise_sigma: sigma, seed, ..Default::default() };
        let g = generate(&p).unwrap().graph;
        let back = parse_instance(&instance_to_string(&g)).unwrap();
        prop_assert_eq!(instance_hash(&back), instance_hash(&g));
        prop_assert_eq!(back, g);
    }

    #[test]
    fn heuristics_report_true_objectives(seed in any::<u64>()) {
        let g = graph(seed, 30);
        let gla = gla_solve(&g, &GlaConfig::default()).unwrap();
        prop_assert!(check_all(&g, &gla.labeling).unwrap().is_empty());
        prop_assert!((objective(&g, &gla.labeling).unwrap() - gla.objective).abs() < 1e-9);
        let klb = klb_solve(&g, &gla.labeling, &KlbConfig::default()).unwrap();
        prop_assert!((objective(&g, &klb.labeling).unwrap() - klb.objective).abs() < 1e-9);
        let parts = decompose_objective(&g, &klb.labeling).unwrap();
        prop_assert!((parts.total() - klb.objective).abs() < 1e-9);
        let s = Solution::new(&g, klb.labeling.clone(), klb.objective, "klb");
        prop_assert_eq!(Solution::parse(&s.to_json_string()).unwrap(), s);
    }
}

#[test]
fn gaps_against_exact_optima() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let g = random_graph(&mut rng, &RandomGraphParams::default());
        let opt = exact_solve(&g, &ExactLimits::default()).unwrap().objective;
        let gla = gla_solve(&g, &GlaConfig::default()).unwrap().objective;
        let gp = gap(gla, opt).unwrap();
        assert!(gp >= 0.0);
        if gla == opt {
            assert_eq!(gp, 0.0);
        }
        assert!(gap(opt - 1.0 - rng.random_range(0.0..1.0), opt).is_err());
    }
}

#[test]
fn ground_truth_is_feasible() {
    for seed in 0..20 {
        let p = GeneratorParams { frames: 6, cells_per_frame: 4, division_prob: 0.3, seed, ..Default::default() };
        let gen = generate(&p).unwrap();
        assert!(check_all(&gen.graph, &gen.ground_truth).unwrap().is_empty(), "seed {seed}");
    }
}
