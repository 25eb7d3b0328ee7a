//! Acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::sync::OnceLock;
use std::time::Instant;

use peer_contagion::diagnostics::{self, ExperimentOutcome, LlnConfig};
use peer_contagion::estimators::{self, EstimatorKind};
use peer_contagion::experiment::{ConfounderVariant, Design, ExperimentConfig, GraphSource, Protocol};
use peer_contagion::graph::{self, Graph};
use peer_contagion::relerm::{self, Labels, ModelParams, TrainConfig};
use peer_contagion::rng;
use peer_contagion::sampler::{self, SamplerConfig};
use peer_contagion::simulate::{aggregate_treatment, AggregatedTreatment, Aggregator, Outcomes, Treatments};
use rand::Rng;

/// Master seed of the benchmark runs. Disjoint from every seed used while
/// choosing training defaults.
const BENCH_SEED: u64 = 7;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {id} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn random_instance(seed: u64) -> (Graph, AggregatedTreatment, Outcomes, ModelParams, peer_contagion::sampler::SubgraphSample, f64) {
    let mut r = rng::from_seed(seed);
    let n = r.random_range(3..=10);
    let d = r.random_range(1..=4);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (r.random_range(0..i), i)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if r.random::<f64>() < 0.3 {
                edges.push((i, j));
            }
        }
    }
    let (g, _) = Graph::from_edges(n, &edges).unwrap();
    let v = AggregatedTreatment {
        values: (0..n).map(|_| r.random::<f64>()).collect(),
        eligible: (0..n).map(|_| r.random::<f64>() < 0.8).collect(),
    };
    let y = Outcomes { values: (0..n).map(|_| (r.random::<f64>() < 0.8).then(|| r.random_range(-3.0..3.0))).collect() };
    let mut params = ModelParams::random(n, d, 0.7, seed).unwrap();
    params.head.w_v = r.random_range(-2.0..2.0);
    params.head.b = r.random_range(-1.0..1.0);
    for w in params.head.w.iter_mut() {
        *w = r.random_range(-1.0..1.0);
    }
    let cfg = SamplerConfig { walk_length: r.random_range(2..=8), negatives_per_positive: r.random_range(1..=3) };
    let sample = sampler::sample_subgraph(&g, &cfg, seed).unwrap();
    let q = [0.0, 0.5, 1.0][(seed % 3) as usize];
    (g, v, y, params, sample, q)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Head coordinates in the order `w_v, b, w_0, w_1, ...`.
fn bump_head(p: &mut ModelParams, coord: usize, eps: f64) {
    match coord {
        0 => p.head.w_v += eps,
        1 => p.head.b += eps,
        k => p.head.w[k - 2] += eps,
    }
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let (g, v, y, params, sample, q) = random_instance(1000 + inst);
        let labels = Labels { v: &v, y: &y };
        let grad = relerm::gradients(&sample, labels, &params, q).unwrap();
        let loss = |p: &ModelParams| relerm::batch_loss(&sample, labels, p, q).unwrap().total;
        let d = params.dim();
        for i in 0..g.n() {
            for (k, &analytic) in grad.row(i, d).iter().enumerate() {
                let mut plus = params.clone();
                plus.embedding_mut(i)[k] += h;
                let mut minus = params.clone();
                minus.embedding_mut(i)[k] -= h;
                worst = worst.max(relative_error(analytic, (loss(&plus) - loss(&minus)) / (2.0 * h)));
            }
        }
        let analytic_head = [grad.head.w_v, grad.head.b].into_iter().chain(grad.head.w.iter().copied());
        for (c, analytic) in analytic_head.enumerate() {
            let mut plus = params.clone();
            bump_head(&mut plus, c, h);
            let mut minus = params.clone();
            bump_head(&mut minus, c, -h);
            worst = worst.max(relative_error(analytic, (loss(&plus) - loss(&minus)) / (2.0 * h)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-5 && secs < 10.0;
    report(1, "gradient check", pass, &format!("max relative error {worst:.2e} over 20 instances, {secs:.2}s"));
    assert!(pass);
}

fn benchmark_config(design: Design) -> ExperimentConfig {
    ExperimentConfig {
        graph: GraphSource::Sbm { n: 2000, blocks: 3, p_in: 0.024, p_out: 0.003 },
        design,
        confounders: vec![ConfounderVariant::new("block", 0.0)],
        beta1_grid: vec![0.0, 10.0],
        n_seeds: 10,
        protocol: Protocol::Replicate,
        ..ExperimentConfig::default()
    }
}

fn continuous_run() -> &'static (ExperimentOutcome, f64) {
    static RUN: OnceLock<(ExperimentOutcome, f64)> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let out = diagnostics::run_experiment(&benchmark_config(Design::Continuous), BENCH_SEED).unwrap();
        (out, start.elapsed().as_secs_f64())
    })
}

fn contrast(out: &ExperimentOutcome, beta1: Option<f64>, kind: EstimatorKind) -> f64 {
    let cell = out.cells.iter().find(|c| c.cell.beta1 == beta1).unwrap();
    cell.summary(kind).unwrap().mean
}

#[test]
fn criterion_2_zero_confounding_recovery() {
    let (out, secs) = continuous_run();
    let est: Vec<(EstimatorKind, f64)> = EstimatorKind::ALL.iter().map(|&k| (k, contrast(out, Some(0.0), k))).collect();
    let pass = est.iter().all(|(_, e)| (e - 1.0).abs() <= 0.2);
    let detail: Vec<String> = est.iter().map(|(k, e)| format!("{k} {e:.3}")).collect();
    report(2, "beta1=0 recovery", pass, &format!("{} (10 seeds, grid run {secs:.0}s)", detail.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_3_high_confounding_adjustment() {
    let (out, _) = continuous_run();
    let bias = |k| (contrast(out, Some(10.0), k) - 1.0).abs();
    let (u, p, e) = (bias(EstimatorKind::Unadjusted), bias(EstimatorKind::Parametric), bias(EstimatorKind::Embedding));
    let parametric_ok = (e <= p && p <= u) || (p - e).abs() <= 0.1;
    let pass = u >= 1.0 && e <= 0.5 && e < u / 2.0 && parametric_ok;
    report(3, "beta1=10 adjustment", pass, &format!("bias unadjusted {u:.3}, parametric {p:.3}, embedding {e:.3}"));
    assert!(pass);
}

#[test]
fn criterion_4_vaccination_design() {
    let start = Instant::now();
    let out = diagnostics::run_experiment(&benchmark_config(Design::Vaccination), BENCH_SEED).unwrap();
    let e = contrast(&out, None, EstimatorKind::Embedding);
    let u = contrast(&out, None, EstimatorKind::Unadjusted);
    let pass = e.abs() < u.abs() && e.abs() <= 0.3;
    report(4, "vaccination design", pass, &format!("embedding {e:.3}, unadjusted {u:.3}, {:.0}s", start.elapsed().as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_5_variance_shrinks_with_graph_size() {
    let start = Instant::now();
    let res = diagnostics::lln_study(&LlnConfig::default(), BENCH_SEED).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let slope = res.fitted_log_slope;
    let monotone = res.shared_neighbor_probs.windows(2).all(|w| w[1] < w[0]);
    let pass = slope.is_some_and(|s| s < 0.0) && monotone && secs < 300.0;
    report(
        5,
        "variance scaling",
        pass,
        &format!("log-log slope {slope:?}, shared-neighbor probabilities {:?}, {secs:.0}s", res.shared_neighbor_probs),
    );
    assert!(pass);
}

fn brute_force(n: usize, edges: &[(usize, usize)], t: &[bool], agg: Aggregator) -> (Vec<f64>, Vec<bool>) {
    let mut treated = vec![0usize; n];
    let mut seen = vec![0usize; n];
    for &(a, b) in edges {
        seen[a] += 1;
        seen[b] += 1;
        treated[a] += t[b] as usize;
        treated[b] += t[a] as usize;
    }
    let values = (0..n)
        .map(|i| match (seen[i], agg) {
            (0, _) => 0.0,
            (s, Aggregator::Average) => treated[i] as f64 / s as f64,
            (_, Aggregator::Or) => (treated[i] > 0) as u8 as f64,
        })
        .collect();
    (values, seen.iter().map(|&s| s > 0).collect())
}

fn matches_brute_force(n: usize, edges: &[(usize, usize)]) -> bool {
    let (g, _) = Graph::from_edges(n, edges).unwrap();
    (0..1u32 << n).all(|mask| {
        let t: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        [Aggregator::Average, Aggregator::Or].into_iter().all(|agg| {
            let got = aggregate_treatment(&g, &Treatments::observed(t.clone()), agg).unwrap();
            let (values, eligible) = brute_force(n, edges, &t, agg);
            got.eligible == eligible && got.values.iter().zip(&values).all(|(a, b)| (a - b).abs() < 1e-12)
        })
    })
}

#[test]
fn criterion_6_aggregation_matches_brute_force() {
    let start = Instant::now();
    let mut graphs = 0usize;
    let mut ok = true;
    for n in 1..=5usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for subset in 0..1u32 << pairs.len() {
            let edges: Vec<(usize, usize)> = pairs.iter().enumerate().filter(|(k, _)| subset >> k & 1 == 1).map(|(_, &e)| e).collect();
            ok &= matches_brute_force(n, &edges);
            graphs += 1;
        }
    }
    let mut r = rng::from_seed(BENCH_SEED);
    for n in 6..=8usize {
        for _ in 0..100 {
            let p = r.random::<f64>();
            let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|_| r.random::<f64>() < p).collect();
            ok &= matches_brute_force(n, &edges);
            graphs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = ok && secs < 120.0;
    report(6, "aggregation oracle", pass, &format!("{graphs} graphs, all treatment vectors, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn criterion_7_sampler_stationarity() {
    let n = 50;
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| [1, 7, 18].map(|s| (i, (i + s) % n))).collect();
    let (g, _) = Graph::from_edges(n, &edges).unwrap();
    assert!(g.degrees().iter().all(|&d| d == 6));
    let cfg = SamplerConfig { walk_length: 40, ..SamplerConfig::default() };
    let walks = 100_000 / cfg.walk_length;
    let freq = sampler::visit_frequencies(&g, walks, &cfg, BENCH_SEED).unwrap();
    let worst = freq.iter().map(|f| (f * n as f64 - 1.0).abs()).fold(0.0, f64::max);
    let star = sampler::visit_frequencies(&Graph::star(5), walks, &cfg, BENCH_SEED).unwrap();
    let pass = worst <= 0.10 && (0.45..=0.55).contains(&star[0]);
    report(7, "sampler stationarity", pass, &format!("regular graph max relative error {worst:.3}, star center {:.3}", star[0]));
    assert!(pass);
}

#[test]
fn criterion_8_experiment_is_deterministic() {
    let bin = env!("CARGO_BIN_EXE_peer-contagion");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let status = std::process::Command::new(bin)
            .args(["--seed", "11", "--out"])
            .arg(dir.path())
            .args(["experiment", "--n", "300", "--p-in", "0.08", "--p-out", "0.01", "--n-seeds", "2", "--steps", "200"])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    let files = ["summary.csv", "estimates.csv", "summary.md"];
    let same = files.iter().all(|f| std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap());
    report(8, "determinism", same, &format!("{} compared byte for byte", files.join(", ")));
    assert!(same);
}

#[test]
fn criterion_9_contrast_equals_exposure_weight() {
    let spec = graph::BlockModelSpec::planted(300, 3, 0.08, 0.01).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let g = graph::sbm_generate(&spec, seed).unwrap();
        let mut r = rng::from_seed(seed);
        let t = Treatments::observed((0..g.n()).map(|_| r.random::<bool>()).collect());
        let v = aggregate_treatment(&g, &t, Aggregator::Average).unwrap();
        let y = Outcomes::observed((0..g.n()).map(|i| 2.0 * v.values[i] + r.random::<f64>()).collect());
        let cfg = TrainConfig { steps: 500, dim: 8, ..TrainConfig::default() };
        let params = relerm::train(&g, &v, &y, &SamplerConfig::default(), &cfg, seed).unwrap();
        let est = estimators::embedding_estimate(&g, &params, Aggregator::Average, None, seed).unwrap();
        worst = worst.max((est.t_star_contrast - params.head.w_v).abs());
    }
    let pass = worst <= 1e-10;
    report(9, "contrast equals w_v", pass, &format!("max |contrast - w_v| {worst:.2e} over 5 fits"));
    assert!(pass);
}
