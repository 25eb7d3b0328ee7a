//! Random-walk subgraph sampling with uniform negative sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Steps per walk.
    pub walk_length: usize,
    /// Negative pairs drawn per positive pair.
    pub negatives_per_positive: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { walk_length: 40, negatives_per_positive: 5 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_length == 0 {
            return Err(Error::Config("walk_length must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be at least 1".into()));
        }
        Ok(())
    }
}

/// One draw of the sampler.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubgraphSample {
    /// Distinct walk vertices in order of first visit.
    pub vertices: Vec<usize>,
    /// Consecutive walk pairs; every pair is an edge. May repeat.
    pub positives: Vec<(usize, usize)>,
    /// Pairs treated as non-edges. Not checked against the graph.
    pub negatives: Vec<(usize, usize)>,
}

impl SubgraphSample {
    /// Dump as `kind,i,j` rows for debugging.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,i,j\n");
        for &(i, j) in &self.positives {
            out.push_str(&format!("positive,{i},{j}\n"));
        }
        for &(i, j) in &self.negatives {
            out.push_str(&format!("negative,{i},{j}\n"));
        }
        out
    }
}

pub(crate) fn walk_into(g: &Graph, start: usize, length: usize, rng: &mut StreamRng, out: &mut Vec<usize>) -> Result<()> {
    if start >= g.n() {
        return Err(Error::NodeOutOfRange { node: start, n: g.n() });
    }
    out.clear();
    out.push(start);
    if length > 0 && g.degree_unchecked(start) == 0 {
        return Err(Error::IsolatedStart(start));
    }
    let mut cur = start;
    for _ in 0..length {
        let nbrs = g.neighbors(cur);
        cur = nbrs[rng.random_range(0..nbrs.len())];
        out.push(cur);
    }
    Ok(())
}

/// Simple random walk of `length` steps; returns `length + 1` vertices.
pub fn random_walk(g: &Graph, start: usize, length: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng::from_seed(seed);
    let mut out = Vec::with_capacity(length + 1);
    walk_into(g, start, length, &mut rng, &mut out)?;
    Ok(out)
}

/// Reusable sampler bound to one graph. Holds no random state; callers pass
/// their own stream so independent workers never share an RNG.
#[derive(Debug, Clone)]
pub struct Sampler<'g> {
    graph: &'g Graph,
    starts: Vec<usize>,
    cfg: SamplerConfig,
}

impl<'g> Sampler<'g> {
    pub fn new(graph: &'g Graph, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        if graph.m() == 0 {
            return Err(Error::EdgelessGraph);
        }
        Ok(Sampler { graph, starts: graph.non_isolated(), cfg })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn sample(&self, rng: &mut StreamRng) -> SubgraphSample {
        let g = self.graph;
        let n = g.n();
        let start = self.starts[rng.random_range(0..self.starts.len())];
        let mut walk = Vec::with_capacity(self.cfg.walk_length + 1);
        walk_into(g, start, self.cfg.walk_length, rng, &mut walk).expect("start has a neighbor");

        let mut vertices = Vec::with_capacity(walk.len());
        for &v in &walk {
            if !vertices.contains(&v) {
                vertices.push(v);
            }
        }
        let positives: Vec<(usize, usize)> = walk.windows(2).map(|w| (w[0], w[1])).collect();
        let mut negatives = Vec::with_capacity(positives.len() * self.cfg.negatives_per_positive);
        for &(i, _) in &positives {
            for _ in 0..self.cfg.negatives_per_positive {
                let mut u = rng.random_range(0..n - 1);
                if u >= i {
                    u += 1;
                }
                negatives.push((i, u));
            }
        }
        SubgraphSample { vertices, positives, negatives }
    }
}

pub fn sample_subgraph(g: &Graph, cfg: &SamplerConfig, seed: u64) -> Result<SubgraphSample> {
    let sampler = Sampler::new(g, cfg.clone())?;
    Ok(sampler.sample(&mut rng::stream(seed, rng::SAMPLER)))
}

/// Empirical visit distribution over `walks` walks of `cfg.walk_length`
/// steps each, counting the vertex reached after every step. Starts are
/// uniform over non-isolated nodes.
pub fn visit_frequencies(g: &Graph, walks: usize, cfg: &SamplerConfig, seed: u64) -> Result<Vec<f64>> {
    let sampler = Sampler::new(g, cfg.clone())?;
    let mut rng = rng::stream(seed, rng::SAMPLER);
    let mut counts = vec![0u64; g.n()];
    let mut walk = Vec::with_capacity(cfg.walk_length + 1);
    for _ in 0..walks {
        let start = sampler.starts[rng.random_range(0..sampler.starts.len())];
        walk_into(g, start, cfg.walk_length, &mut rng, &mut walk)?;
        for &v in &walk[1..] {
            counts[v] += 1;
        }
    }
    let total = (walks * cfg.walk_length).max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}
