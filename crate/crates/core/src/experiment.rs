//! End-to-end semi-synthetic pipeline: graph, hidden confounder, simulated
//! data, model fitting and the three estimates for one experiment cell.

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{self, default_communities, EstimateReport, EstimatorKind};
use crate::graph::{self, BlockModelSpec, Graph};
use crate::linalg::EigenOptions;
use crate::relerm::{self, TrainConfig};
use crate::rng;
use crate::sampler::SamplerConfig;
use crate::simulate::{
    aggregate_treatment, draw_treatments, oracle_contrast, simulate_outcome_continuous, vaccination_design, AggregatedTreatment,
    Covariates, Outcomes, SimulationParams, Treatments,
};

/// Where the network comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum GraphSource {
    /// Planted-partition block model; the block label is the confounder.
    Sbm { n: usize, blocks: usize, p_in: f64, p_out: f64 },
    /// User-supplied edge list plus a `node_id,c` covariate file in the
    /// loader's dense id order.
    EdgeList { path: PathBuf, covariates: PathBuf },
}

impl Default for GraphSource {
    fn default() -> Self {
        GraphSource::Sbm { n: 2000, blocks: 3, p_in: 0.024, p_out: 0.003 }
    }
}

impl GraphSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            GraphSource::Sbm { n, blocks, p_in, p_out } => {
                if *n == 0 {
                    return Err(Error::Config("graph must have at least one node".into()));
                }
                if *blocks == 0 || blocks > n {
                    return Err(Error::Config(format!("block count {blocks} invalid for {n} nodes")));
                }
                for p in [p_in, p_out] {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::Config(format!("edge probability {p} outside [0, 1]")));
                    }
                }
                Ok(())
            }
            GraphSource::EdgeList { .. } => Ok(()),
        }
    }

    /// Graph and unperturbed confounder for the given graph seed.
    pub fn build(&self, seed: u64) -> Result<(Graph, Covariates)> {
        self.validate()?;
        match self {
            GraphSource::Sbm { n, blocks, p_in, p_out } => {
                let spec = BlockModelSpec::planted(*n, *blocks, *p_in, *p_out)?;
                let g = graph::sbm_generate(&spec, rng::derive(seed, rng::GRAPH, 0))?;
                let cov = Covariates::from_blocks(&spec.block_of, spec.num_blocks())?;
                Ok((g, cov))
            }
            GraphSource::EdgeList { path, covariates } => {
                let loaded = graph::load_edge_list(path)?;
                let cov = Covariates::read_csv(covariates)?;
                if cov.len() != loaded.graph.n() {
                    return Err(Error::DimensionMismatch { expected: loaded.graph.n(), got: cov.len() });
                }
                Ok((loaded.graph, cov))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    /// Continuous outcome driven by exposure and confounder.
    #[default]
    Continuous,
    /// Half the nodes turn their treatment into the outcome; true effect 0.
    Vaccination,
}

/// A confounder column of the results table: the block label with a
/// fraction of nodes resampled at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfounderVariant {
    pub label: String,
    pub resample_rate: f64,
}

impl ConfounderVariant {
    pub fn new(label: &str, resample_rate: f64) -> Self {
        ConfounderVariant { label: label.to_string(), resample_rate }
    }

    /// Exact block identity, 25% resampled, 50% resampled.
    pub fn defaults() -> Vec<Self> {
        vec![
            ConfounderVariant::new("block", 0.0),
            ConfounderVariant::new("block-25", 0.25),
            ConfounderVariant::new("block-50", 0.5),
        ]
    }
}

/// How seeds are varied when repeating a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Graph and simulated data fixed; only training seeds vary. Baselines
    /// run once and report their coefficient standard error.
    #[default]
    FixedData,
    /// Every repetition redraws graph, data and training seeds.
    Replicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    pub simulation: SimulationParams,
    pub design: Design,
    pub confounders: Vec<ConfounderVariant>,
    /// Confounding strengths; ignored by the vaccination design.
    pub beta1_grid: Vec<f64>,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    /// Community count for the parametric baseline; default `min(d, n/20)`.
    pub communities: Option<usize>,
    pub n_seeds: usize,
    pub protocol: Protocol,
    /// Vaccination design: recompute exposure from surviving treatments only.
    pub surviving_only: bool,
    pub estimators: Vec<EstimatorKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            graph: GraphSource::default(),
            simulation: SimulationParams::default(),
            design: Design::Continuous,
            confounders: ConfounderVariant::defaults(),
            beta1_grid: vec![0.0, 1.0, 10.0],
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            communities: None,
            n_seeds: 20,
            protocol: Protocol::FixedData,
            surviving_only: true,
            estimators: EstimatorKind::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.simulation.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        if self.confounders.is_empty() {
            return Err(Error::Config("at least one confounder variant required".into()));
        }
        for c in &self.confounders {
            if !(0.0..=1.0).contains(&c.resample_rate) {
                return Err(Error::Config(format!("resample_rate of {:?} outside [0, 1]", c.label)));
            }
        }
        if self.design == Design::Continuous && self.beta1_grid.is_empty() {
            return Err(Error::Config("beta1_grid must not be empty".into()));
        }
        if self.n_seeds < 2 {
            return Err(Error::Config("n_seeds must be at least 2".into()));
        }
        if self.communities == Some(0) {
            return Err(Error::Config("communities must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators selected".into()));
        }
        Ok(())
    }

    /// The `(confounder, beta1)` cells of the grid. The vaccination design
    /// has no confounding knob and yields one cell per confounder.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for (idx, variant) in self.confounders.iter().enumerate() {
            match self.design {
                Design::Continuous => {
                    for &beta1 in &self.beta1_grid {
                        out.push(Cell { confounder: variant.clone(), confounder_index: idx, beta1: Some(beta1) });
                    }
                }
                Design::Vaccination => out.push(Cell { confounder: variant.clone(), confounder_index: idx, beta1: None }),
            }
        }
        out
    }

    pub fn communities_for(&self, n: usize) -> usize {
        self.communities.unwrap_or_else(|| default_communities(n, self.train.dim)).min(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub confounder: ConfounderVariant,
    pub confounder_index: usize,
    pub beta1: Option<f64>,
}

/// Simulated data for one cell.
#[derive(Debug, Clone)]
pub struct CellData {
    pub covariates: Covariates,
    pub treatments: Treatments,
    pub aggregated: AggregatedTreatment,
    pub outcomes: Outcomes,
    /// Restriction of estimation (vaccination design), `None` = all nodes.
    pub evaluation: Option<Vec<usize>>,
    /// Ground-truth contrast.
    pub truth: f64,
}

/// Graph plus everything derived from it that cells can share.
pub struct PreparedGraph {
    pub graph: Graph,
    pub base_covariates: Covariates,
    memberships: Option<DMatrix<f64>>,
}

impl PreparedGraph {
    pub fn new(cfg: &ExperimentConfig, graph_seed: u64) -> Result<Self> {
        let (graph, base_covariates) = cfg.graph.build(graph_seed)?;
        Self::from_parts(graph, base_covariates)
    }

    pub fn from_parts(graph: Graph, base_covariates: Covariates) -> Result<Self> {
        if graph.m() == 0 {
            return Err(Error::EdgelessGraph);
        }
        if base_covariates.len() != graph.n() {
            return Err(Error::DimensionMismatch { expected: graph.n(), got: base_covariates.len() });
        }
        Ok(PreparedGraph { graph, base_covariates, memberships: None })
    }

    fn memberships(&mut self, k: usize) -> Result<&DMatrix<f64>> {
        if self.memberships.as_ref().is_none_or(|m| m.ncols() != k) {
            self.memberships = Some(estimators::spectral_memberships(&self.graph, k, &EigenOptions::default())?);
        }
        Ok(self.memberships.as_ref().unwrap())
    }
}

/// Simulate the data of `cell` on a prepared graph from `data_seed`.
pub fn simulate_cell(cfg: &ExperimentConfig, prepared: &PreparedGraph, cell: &Cell, data_seed: u64) -> Result<CellData> {
    let g = &prepared.graph;
    let mut crng = rng::stream(rng::derive(data_seed, rng::CONFOUNDER, cell.confounder_index as u64), rng::CONFOUNDER);
    let covariates = prepared.base_covariates.perturbed(cell.confounder.resample_rate, &mut crng)?;
    let treatments = draw_treatments(&covariates, data_seed);
    let agg = cfg.simulation.aggregator;
    match cfg.design {
        Design::Continuous => {
            let params = SimulationParams { beta1: cell.beta1.unwrap_or(cfg.simulation.beta1), ..cfg.simulation.clone() };
            let aggregated = aggregate_treatment(g, &treatments, agg)?;
            let outcomes = simulate_outcome_continuous(&aggregated, &covariates, &params, data_seed)?;
            let truth = oracle_contrast(g, &covariates, &params)?;
            Ok(CellData { covariates, treatments, aggregated, outcomes, evaluation: None, truth })
        }
        Design::Vaccination => {
            let d = vaccination_design(g, &treatments, agg, cfg.surviving_only, data_seed)?;
            Ok(CellData {
                covariates,
                treatments: d.treatments,
                aggregated: d.aggregated,
                outcomes: d.outcomes,
                evaluation: Some(d.evaluation),
                truth: 0.0,
            })
        }
    }
}

pub fn run_baseline(
    cfg: &ExperimentConfig,
    prepared: &mut PreparedGraph,
    data: &CellData,
    kind: EstimatorKind,
) -> Result<EstimateReport> {
    let nodes = data.evaluation.as_deref();
    match kind {
        EstimatorKind::Unadjusted => estimators::unadjusted_ols(&data.aggregated, &data.outcomes, nodes),
        EstimatorKind::Parametric => {
            let k = cfg.communities_for(prepared.graph.n());
            let m = prepared.memberships(k)?;
            estimators::parametric_with_memberships(m, &data.aggregated, &data.outcomes, nodes)
        }
        EstimatorKind::Embedding => Err(Error::Config("embedding estimator is not a baseline".into())),
    }
}

pub fn run_embedding(cfg: &ExperimentConfig, g: &Graph, data: &CellData, train_seed: u64) -> Result<EstimateReport> {
    let params = relerm::train(g, &data.aggregated, &data.outcomes, &cfg.sampler, &cfg.train, train_seed)?;
    estimators::embedding_estimate(g, &params, cfg.simulation.aggregator, data.evaluation.as_deref(), train_seed)
}
