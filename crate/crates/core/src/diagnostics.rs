//! Large-graph behavior of the oracle estimand and the seed-variation
//! summaries behind the results tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::experiment::{run_baseline, run_embedding, simulate_cell, Cell, ExperimentConfig, PreparedGraph, Protocol};
use crate::graph::{self, BlockModelSpec, DEFAULT_PAIR_SAMPLE_SIZE};
use crate::linalg;
use crate::rng;
use crate::simulate::{oracle_contrast, oracle_estimand, Covariates, SimulationParams};

/// Which oracle quantity the scaling study tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LlnTarget {
    /// Level `psi(0)`.
    #[default]
    Psi0,
    /// Level `psi(1)`.
    Psi1,
    /// `psi(1) - psi(0)`.
    Contrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlnConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    /// Expected degree `c`; edge probabilities scale as `c / n`.
    pub expected_degree: f64,
    pub blocks: usize,
    /// Share of a node's expected degree that falls inside its own block.
    pub within_fraction: f64,
    pub simulation: SimulationParams,
    pub target: LlnTarget,
    pub pair_sample_size: usize,
    /// Constant `M` of the bound `Var <= P(share) * M`; reported when set.
    pub variance_bound: Option<f64>,
}

impl Default for LlnConfig {
    fn default() -> Self {
        LlnConfig {
            n_grid: vec![500, 1000, 2000, 4000],
            replicates: 20,
            expected_degree: 20.0,
            blocks: 3,
            within_fraction: 0.8,
            simulation: SimulationParams { beta1: 10.0, ..SimulationParams::default() },
            target: LlnTarget::Psi0,
            pair_sample_size: DEFAULT_PAIR_SAMPLE_SIZE,
            variance_bound: None,
        }
    }
}

impl LlnConfig {
    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        if self.n_grid.len() < 2 {
            return Err(Error::Config("n_grid needs at least two sizes".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if self.n_grid[0] < 2 {
            return Err(Error::Config("graph sizes must be at least 2".into()));
        }
        if self.replicates < 10 {
            return Err(Error::Config(format!("replicates = {} below the minimum of 10", self.replicates)));
        }
        if self.blocks == 0 || !(0.0..=1.0).contains(&self.within_fraction) || !(self.expected_degree > 0.0) {
            return Err(Error::Config("invalid block structure".into()));
        }
        if self.pair_sample_size == 0 {
            return Err(Error::Config("pair_sample_size must be positive".into()));
        }
        Ok(())
    }

    /// `(p_in, p_out)` for `n` nodes.
    pub fn edge_probabilities(&self, n: usize) -> Result<(f64, f64)> {
        let b = self.blocks as f64;
        let n = n as f64;
        let p_in = self.expected_degree * self.within_fraction / (n / b);
        let p_out = if self.blocks > 1 { self.expected_degree * (1.0 - self.within_fraction) / (n * (b - 1.0) / b) } else { 0.0 };
        if p_in > 1.0 || p_out > 1.0 {
            return Err(Error::Config(format!("expected degree {} too dense for n = {n}", self.expected_degree)));
        }
        Ok((p_in, p_out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnStudyResult {
    pub n_values: Vec<usize>,
    pub means: Vec<f64>,
    /// Sample variance across replicates, one per size.
    pub variances: Vec<f64>,
    /// Replicate-averaged shared-neighbor probability, one per size.
    pub shared_neighbor_probs: Vec<f64>,
    /// Least-squares slope of `ln variance` on `ln n`; `None` when some
    /// variance is zero.
    pub fitted_log_slope: Option<f64>,
    pub variance_bounds: Option<Vec<f64>>,
}

impl LlnStudyResult {
    pub const CSV_HEADER: &'static str = "n,mean,variance,shared_neighbor_prob,variance_bound";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (k, n) in self.n_values.iter().enumerate() {
            let bound = self.variance_bounds.as_ref().map_or("NA".to_string(), |b| b[k].to_string());
            writeln!(out, "{n},{},{},{},{bound}", self.means[k], self.variances[k], self.shared_neighbor_probs[k]).unwrap();
        }
        out
    }
}

fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    (mean, var)
}

/// Draw `replicates` block-model graphs per size with random block labels
/// and record how the oracle estimand and the shared-neighbor probability
/// behave as `n` grows at fixed expected degree.
pub fn lln_study(cfg: &LlnConfig, seed: u64) -> Result<LlnStudyResult> {
    cfg.validate()?;
    let mut means = Vec::new();
    let mut variances = Vec::new();
    let mut probs = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let (p_in, p_out) = cfg.edge_probabilities(n)?;
        let mut values = Vec::with_capacity(cfg.replicates);
        let mut prob_sum = 0.0;
        for r in 0..cfg.replicates {
            let rep_seed = rng::derive(seed, rng::LLN, ((k as u64) << 32) | r as u64);
            let mut block_rng = rng::stream(rep_seed, rng::CONFOUNDER);
            let spec = BlockModelSpec::random_assignment(n, cfg.blocks, p_in, p_out, &mut block_rng)?;
            let g = graph::sbm_generate(&spec, rng::derive(rep_seed, rng::GRAPH, 0))?;
            let cov = Covariates::from_blocks(&spec.block_of, spec.num_blocks())?;
            let value = match cfg.target {
                LlnTarget::Psi0 => oracle_estimand(&g, &cov, &cfg.simulation, false)?,
                LlnTarget::Psi1 => oracle_estimand(&g, &cov, &cfg.simulation, true)?,
                LlnTarget::Contrast => oracle_contrast(&g, &cov, &cfg.simulation)?,
            };
            values.push(value);
            prob_sum += graph::shared_neighbor_probability(&g, cfg.pair_sample_size, rng::derive(rep_seed, rng::PAIRS, 0))?;
        }
        let (mean, var) = mean_and_variance(&values);
        log::info!("n={n}: mean {mean:.6} variance {var:.3e}");
        means.push(mean);
        variances.push(var);
        probs.push(prob_sum / cfg.replicates as f64);
    }

    let fitted_log_slope = if variances.iter().all(|&v| v > 0.0) {
        let ones = vec![1.0; cfg.n_grid.len()];
        let log_n: Vec<f64> = cfg.n_grid.iter().map(|&n| (n as f64).ln()).collect();
        let log_v: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
        linalg::ols(&[ones, log_n], &log_v)?.coefficient(1)
    } else {
        None
    };
    let variance_bounds = cfg.variance_bound.map(|m| probs.iter().map(|p| p * m).collect());
    Ok(LlnStudyResult {
        n_values: cfg.n_grid.clone(),
        means,
        variances,
        shared_neighbor_probs: probs,
        fitted_log_slope,
        variance_bounds,
    })
}

/// Mean and standard error of one estimator in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean: f64,
    /// Across-seed standard error, or the regression standard error for a
    /// baseline fitted once.
    pub stderr: Option<f64>,
    pub n_seeds: usize,
    pub values: Vec<f64>,
}

impl EstimatorSummary {
    pub fn from_values(estimator: EstimatorKind, values: Vec<f64>) -> Self {
        let (mean, var) = mean_and_variance(&values);
        let stderr = Some((var / values.len() as f64).sqrt());
        EstimatorSummary { estimator, mean, stderr, n_seeds: values.len(), values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    /// Oracle contrast averaged over the graphs and datasets used.
    pub truth: f64,
    /// One entry per requested estimator; `Err` holds the failure message.
    pub results: Vec<(EstimatorKind, std::result::Result<EstimatorSummary, String>)>,
}

impl CellSummary {
    pub fn summary(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.results.iter().find(|(k, _)| *k == kind).and_then(|(_, r)| r.as_ref().ok())
    }

    /// Absolute distance of the estimator's mean from the oracle contrast.
    pub fn abs_bias(&self, kind: EstimatorKind) -> Option<f64> {
        self.summary(kind).map(|s| (s.mean - self.truth).abs())
    }

    pub fn is_complete(&self) -> bool {
        self.results.iter().all(|(_, r)| r.is_ok())
    }
}

/// One estimate from one seed, for the per-seed CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub cell_index: usize,
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub seed_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellSummary>,
    pub estimates: Vec<EstimateRow>,
}

#[derive(Default)]
struct CellAccumulator {
    truths: Vec<f64>,
    values: BTreeMap<EstimatorKind, Vec<f64>>,
    regression_se: BTreeMap<EstimatorKind, Option<f64>>,
    errors: BTreeMap<EstimatorKind, String>,
}

impl CellAccumulator {
    fn fail(&mut self, kind: EstimatorKind, msg: String) {
        self.errors.entry(kind).or_insert(msg);
    }

    fn finish(self, cell: Cell, kinds: &[EstimatorKind], fixed_data: bool) -> CellSummary {
        let truth = if self.truths.is_empty() { f64::NAN } else { self.truths.iter().sum::<f64>() / self.truths.len() as f64 };
        let results = kinds
            .iter()
            .map(|&kind| {
                if let Some(msg) = self.errors.get(&kind) {
                    return (kind, Err(msg.clone()));
                }
                let values = self.values.get(&kind).cloned().unwrap_or_default();
                if values.is_empty() {
                    return (kind, Err("no estimates".to_string()));
                }
                let mut summary = EstimatorSummary::from_values(kind, values);
                if fixed_data && kind != EstimatorKind::Embedding {
                    summary.stderr = self.regression_se.get(&kind).copied().flatten();
                }
                (kind, Ok(summary))
            })
            .collect();
        CellSummary { cell, truth, results }
    }
}

/// Fixed data, varying training seeds: the graph and every cell's data are
/// drawn once; baselines run once and carry their regression standard error.
pub fn seed_study(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentOutcome> {
    run_experiment(&ExperimentConfig { protocol: Protocol::FixedData, ..cfg.clone() }, seed)
}

/// Every repetition redraws graph, data and training seeds.
pub fn replicate_study(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentOutcome> {
    run_experiment(&ExperimentConfig { protocol: Protocol::Replicate, ..cfg.clone() }, seed)
}

/// Run every cell of the grid under the configured protocol. Failures of an
/// estimator inside a cell are recorded in the outcome; failures to build a
/// graph abort the run.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let cells = cfg.cells();
    let mut accs: Vec<CellAccumulator> = cells.iter().map(|_| CellAccumulator::default()).collect();
    let mut estimates = Vec::new();
    let fixed = cfg.protocol == Protocol::FixedData;
    let graph_draws = if fixed { 1 } else { cfg.n_seeds };

    for r in 0..graph_draws {
        let mut prepared = PreparedGraph::new(cfg, rng::derive(seed, rng::GRAPH, r as u64))?;
        let data_seed = rng::derive(seed, rng::DATA, r as u64);
        for (ci, cell) in cells.iter().enumerate() {
            let acc = &mut accs[ci];
            let data = match simulate_cell(cfg, &prepared, cell, data_seed) {
                Ok(d) => d,
                Err(e) => {
                    for &kind in &cfg.estimators {
                        acc.fail(kind, e.to_string());
                    }
                    continue;
                }
            };
            acc.truths.push(data.truth);
            for &kind in &cfg.estimators {
                let seeds: Vec<usize> = match (kind, fixed) {
                    (EstimatorKind::Embedding, true) => (0..cfg.n_seeds).collect(),
                    _ => vec![r],
                };
                for s in seeds {
                    let report = match kind {
                        EstimatorKind::Embedding => run_embedding(cfg, &prepared.graph, &data, rng::derive(seed, rng::TRAIN, s as u64)),
                        _ => run_baseline(cfg, &mut prepared, &data, kind),
                    };
                    match report {
                        Ok(rep) => {
                            acc.values.entry(kind).or_default().push(rep.t_star_contrast);
                            acc.regression_se.insert(kind, rep.std_error);
                            estimates.push(EstimateRow { cell_index: ci, estimator: kind, estimate: rep.t_star_contrast, seed_index: s });
                        }
                        Err(e) => {
                            log::warn!("{} / {}: {e}", cell_label(cell), kind);
                            acc.fail(kind, e.to_string());
                        }
                    }
                }
            }
        }
    }

    let cells = cells
        .into_iter()
        .zip(accs)
        .map(|(cell, acc)| acc.finish(cell, &cfg.estimators, fixed))
        .collect();
    Ok(ExperimentOutcome { cells, estimates })
}

fn beta1_field(cell: &Cell) -> String {
    cell.beta1.map_or("NA".to_string(), |b| b.to_string())
}

fn cell_label(cell: &Cell) -> String {
    match cell.beta1 {
        Some(b) => format!("{} beta1={b}", cell.confounder.label),
        None => cell.confounder.label.clone(),
    }
}

impl ExperimentOutcome {
    pub fn all_complete(&self) -> bool {
        self.cells.iter().all(CellSummary::is_complete)
    }

    pub const SUMMARY_HEADER: &'static str = "confounder,beta1,estimator,mean,stderr,n_seeds";

    /// One row per cell and estimator; failed entries carry `NA`.
    pub fn summary_csv(&self) -> String {
        let mut out = format!("{}\n", Self::SUMMARY_HEADER);
        for c in &self.cells {
            for (kind, res) in &c.results {
                let (mean, se, k) = match res {
                    Ok(s) => (s.mean.to_string(), s.stderr.map_or("NA".to_string(), |x| x.to_string()), s.n_seeds),
                    Err(_) => ("NA".to_string(), "NA".to_string(), 0),
                };
                writeln!(out, "{},{},{kind},{mean},{se},{k}", c.cell.confounder.label, beta1_field(&c.cell)).unwrap();
            }
        }
        out
    }

    pub fn estimates_csv(&self) -> String {
        let mut out = String::from("estimator,confounder_label,beta1,estimate,seed\n");
        for row in &self.estimates {
            let cell = &self.cells[row.cell_index].cell;
            writeln!(out, "{},{},{},{},{}", row.estimator, cell.confounder.label, beta1_field(cell), row.estimate, row.seed_index).unwrap();
        }
        out
    }

    /// Estimators as rows, cells as columns, entries `mean ± stderr`.
    pub fn markdown(&self) -> String {
        let mut out = String::from("| Estimator |");
        for c in &self.cells {
            write!(out, " {} |", cell_label(&c.cell)).unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.cells.len()));
        out.push('\n');
        let kinds: Vec<EstimatorKind> = self.cells.first().map(|c| c.results.iter().map(|(k, _)| *k).collect()).unwrap_or_default();
        for kind in kinds {
            write!(out, "| {kind} |").unwrap();
            for c in &self.cells {
                match c.results.iter().find(|(k, _)| *k == kind).map(|(_, r)| r) {
                    Some(Ok(s)) => match s.stderr {
                        Some(se) => write!(out, " {:.3} ± {:.3} |", s.mean, se).unwrap(),
                        None => write!(out, " {:.3} |", s.mean).unwrap(),
                    },
                    _ => out.push_str(" missing |"),
                }
            }
            out.push('\n');
        }
        out.push_str("| Truth |");
        for c in &self.cells {
            write!(out, " {:.3} |", c.truth).unwrap();
        }
        out.push('\n');
        out
    }

    /// Write `summary.csv`, `summary.md` and `estimates.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, body) in [("summary.csv", self.summary_csv()), ("summary.md", self.markdown()), ("estimates.csv", self.estimates_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
