use proptest::prelude::*;

use peer_contagion::estimators::{self, psi_hat};
use peer_contagion::graph::{self, parse_edge_list, BlockModelSpec, Graph};
use peer_contagion::relerm::{self, batch_loss, Labels, ModelParams};
use peer_contagion::rng;
use peer_contagion::sampler::{self, SamplerConfig, SubgraphSample};
use peer_contagion::simulate::{
    aggregate_treatment, oracle_contrast, simulate_outcome_continuous, AggregatedTreatment, Aggregator, Covariates, Outcomes,
    SimulationParams, Treatments,
};

fn edge_list(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..3 * n)))
}

fn connected(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(any::<prop::sample::Index>(), n - 1), prop::collection::vec((0..n, 0..n), 0..2 * n)))
        .prop_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (parents[i - 1].index(i), i)).collect();
            edges.extend(extra);
            Graph::from_edges(n, &edges).unwrap().0
        })
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn aggregator() -> impl Strategy<Value = Aggregator> {
    prop_oneof![Just(Aggregator::Average), Just(Aggregator::Or)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn built_graphs_are_symmetric_and_sorted((n, edges) in edge_list(30)) {
        let (g, _) = Graph::from_edges(n, &edges).unwrap();
        g.check_invariants().unwrap();
        for &(a, b) in &edges {
            prop_assert_eq!(g.has_edge(a, b), a != b);
        }
        prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.m());
    }

    #[test]
    fn loaded_graphs_keep_invariants((n, edges) in edge_list(20), offset in 0u64..1000) {
        let text: String = edges.iter().map(|(a, b)| format!("{} {}\n", *a as u64 + offset, *b as u64 + offset)).collect();
        let loaded = parse_edge_list(&text).unwrap();
        loaded.graph.check_invariants().unwrap();
        prop_assert!(loaded.graph.n() <= n);
        prop_assert_eq!(loaded.original_ids.len(), loaded.graph.n());
    }

    #[test]
    fn permuted_graph_keeps_invariants(g in connected(15), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..g.n()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng::from_seed(seed));
        let h = g.permuted(&perm).unwrap();
        h.check_invariants().unwrap();
        prop_assert_eq!(h.m(), g.m());
        for (i, j) in g.edges() {
            prop_assert!(h.has_edge(perm[i], perm[j]));
        }
    }

    #[test]
    fn sbm_output_is_valid_and_reproducible(n in 2usize..60, blocks in 1usize..4, p_in in 0.0..1.0f64, p_out in 0.0..1.0f64, seed in any::<u64>()) {
        let spec = BlockModelSpec::planted(n, blocks.min(n), p_in, p_out).unwrap();
        let g = graph::sbm_generate(&spec, seed).unwrap();
        g.check_invariants().unwrap();
        prop_assert_eq!(g, graph::sbm_generate(&spec, seed).unwrap());
    }

    #[test]
    fn aggregates_stay_in_range(g in connected(20), bits in prop::collection::vec(prop::option::of(any::<bool>()), 20)) {
        let t = Treatments { values: bits[..g.n()].to_vec() };
        let avg = aggregate_treatment(&g, &t, Aggregator::Average).unwrap();
        let or = aggregate_treatment(&g, &t, Aggregator::Or).unwrap();
        prop_assert!(avg.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(or.values.iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(avg.eligible, or.eligible);
    }

    #[test]
    fn oracle_contrast_is_beta0(g in connected(25), levels in prop::collection::vec(-1i8..=1, 25), beta0 in -5.0..5.0f64, beta1 in -10.0..10.0f64) {
        let cov = Covariates::new(levels[..g.n()].to_vec()).unwrap();
        let params = SimulationParams { beta0, beta1, ..SimulationParams::default() };
        prop_assert!((oracle_contrast(&g, &cov, &params).unwrap() - beta0).abs() < 1e-9);
    }

    #[test]
    fn noise_changes_outcome_but_not_exposure(g in connected(25), seed in any::<u64>()) {
        let cov = Covariates::new((0..g.n()).map(|i| (i % 3) as i8 - 1).collect()).unwrap();
        let t = peer_contagion::simulate::draw_treatments(&cov, seed);
        let v = aggregate_treatment(&g, &t, Aggregator::Average).unwrap();
        let quiet = simulate_outcome_continuous(&v, &cov, &SimulationParams { noise_sd: 0.0, ..SimulationParams::default() }, seed).unwrap();
        let noisy = simulate_outcome_continuous(&v, &cov, &SimulationParams::default(), seed).unwrap();
        prop_assert_eq!(&v, &aggregate_treatment(&g, &t, Aggregator::Average).unwrap());
        prop_assert_ne!(quiet, noisy);
    }

    #[test]
    fn sampled_pairs_are_valid(g in connected(20), walk in 1usize..30, neg in 1usize..6, seed in any::<u64>()) {
        let cfg = SamplerConfig { walk_length: walk, negatives_per_positive: neg };
        let s = sampler::sample_subgraph(&g, &cfg, seed).unwrap();
        prop_assert_eq!(s.positives.len(), walk);
        prop_assert_eq!(s.negatives.len(), walk * neg);
        prop_assert!(s.positives.iter().all(|&(i, j)| g.has_edge(i, j)));
        prop_assert!(s.negatives.iter().all(|&(i, j)| i != j));
        prop_assert_eq!(s.clone(), sampler::sample_subgraph(&g, &cfg, seed).unwrap());
    }

    #[test]
    fn visit_frequencies_form_a_distribution(g in connected(12), seed in any::<u64>()) {
        let f = sampler::visit_frequencies(&g, 50, &SamplerConfig::default(), seed).unwrap();
        prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(f.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn loss_ignores_pair_order(g in connected(10), d in 1usize..5, q in 0.0..=1.0f64, seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let n = g.n();
        let cfg = SamplerConfig { walk_length: 6, negatives_per_positive: 2 };
        let s = sampler::sample_subgraph(&g, &cfg, seed).unwrap();
        let v = AggregatedTreatment { values: (0..n).map(|i| (i % 4) as f64 / 4.0).collect(), eligible: vec![true; n] };
        let y = Outcomes::observed((0..n).map(|i| i as f64 * 0.3 - 1.0).collect());
        let params = ModelParams::random(n, d, 0.5, seed).unwrap();
        let mut r = rng::from_seed(shuffle_seed);
        let mut shuffled: SubgraphSample = s.clone();
        rand::seq::SliceRandom::shuffle(shuffled.positives.as_mut_slice(), &mut r);
        rand::seq::SliceRandom::shuffle(shuffled.negatives.as_mut_slice(), &mut r);
        let a = batch_loss(&s, Labels { v: &v, y: &y }, &params, q).unwrap().total;
        let b = batch_loss(&shuffled, Labels { v: &v, y: &y }, &params, q).unwrap().total;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn outcome_head_frozen_without_outcome_term(g in connected(10), seed in any::<u64>()) {
        let n = g.n();
        let s = sampler::sample_subgraph(&g, &SamplerConfig::default(), seed).unwrap();
        let v = AggregatedTreatment { values: vec![0.5; n], eligible: vec![true; n] };
        let y = Outcomes::observed(vec![2.0; n]);
        let grad = relerm::gradients(&s, Labels { v: &v, y: &y }, &ModelParams::random(n, 3, 0.5, seed).unwrap(), 0.0).unwrap();
        prop_assert_eq!(grad.head.w_v, 0.0);
        prop_assert_eq!(grad.head.b, 0.0);
        prop_assert!(grad.head.w.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn psi_hat_ignores_relabeling((g, perm) in connected(15).prop_flat_map(|g| { let n = g.n(); (Just(g), permutation(n)) }), agg in aggregator(), seed in any::<u64>()) {
        let mut params = ModelParams::random(g.n(), 3, 1.0, seed).unwrap();
        params.head.w = vec![0.4, -1.2, 0.7];
        params.head.w_v = 1.3;
        params.head.b = -0.2;
        let h = g.permuted(&perm).unwrap();
        let p = params.permuted(&perm).unwrap();
        for t in [false, true] {
            let a = psi_hat(&g, &params, t, agg, None).unwrap();
            let b = psi_hat(&h, &p, t, agg, None).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn params_survive_a_file_round_trip(n in 1usize..12, d in 1usize..5, scale in 0.0..10.0f64, seed in any::<u64>()) {
        let mut params = ModelParams::random(n, d, scale, seed).unwrap();
        params.head.w_v = scale - 3.0;
        params.head.b = 1.0 / (scale + 0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.txt");
        relerm::save_params(&params, &path).unwrap();
        prop_assert_eq!(relerm::load_params(&path, Some(n)).unwrap(), params);
    }

    #[test]
    fn baselines_are_pure(g in connected(25), seed in any::<u64>()) {
        let n = g.n();
        let cov = Covariates::new((0..n).map(|i| (i % 3) as i8 - 1).collect()).unwrap();
        let t = peer_contagion::simulate::draw_treatments(&cov, seed);
        let v = aggregate_treatment(&g, &t, Aggregator::Average).unwrap();
        let y = simulate_outcome_continuous(&v, &cov, &SimulationParams::default(), seed).unwrap();
        let opts = peer_contagion::linalg::EigenOptions::default();
        let k = 2.min(n);
        let a = estimators::unadjusted_ols(&v, &y, None);
        let b = estimators::unadjusted_ols(&v, &y, None);
        prop_assert_eq!(a.is_ok(), b.is_ok());
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(a, b);
        }
        let a = estimators::parametric_baseline(&g, &v, &y, k, None, &opts);
        let b = estimators::parametric_baseline(&g, &v, &y, k, None, &opts);
        prop_assert_eq!(a.is_ok(), b.is_ok());
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(a, b);
        }
    }
}
