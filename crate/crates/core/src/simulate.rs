//! Semi-synthetic treatments and outcomes driven by a hidden three-level
//! confounder, plus the ground-truth estimands they imply.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{self, StreamRng};

/// Hidden per-node confounder, each entry in `{-1, 0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Covariates {
    values: Vec<i8>,
}

impl Covariates {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(-1..=1).contains(*v)) {
            return Err(Error::Config(format!("covariate of node {i} is {v}, expected -1, 0 or 1")));
        }
        Ok(Covariates { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn get(&self, i: usize) -> i8 {
        self.values[i]
    }

    /// Levels of `{-1, 0, 1}` that no node takes.
    pub fn missing_levels(&self) -> Vec<i8> {
        (-1..=1).filter(|l| !self.values.contains(l)).collect()
    }

    /// Map block labels onto `{-1, 0, 1}` by spreading block indices evenly
    /// over `[-1, 1]` and rounding: two blocks give `{-1, 1}`, three give
    /// `{-1, 0, 1}`.
    pub fn from_blocks(block_of: &[usize], num_blocks: usize) -> Result<Self> {
        let level = |b: usize| -> i8 {
            if num_blocks <= 1 {
                0
            } else {
                (2.0 * b as f64 / (num_blocks - 1) as f64 - 1.0).round() as i8
            }
        };
        if let Some(&b) = block_of.iter().find(|&&b| b >= num_blocks) {
            return Err(Error::Config(format!("block {b} out of range")));
        }
        let cov = Covariates {
            values: block_of.iter().map(|&b| level(b)).collect(),
        };
        let missing = cov.missing_levels();
        if !missing.is_empty() && !cov.is_empty() {
            log::warn!("block-derived confounder never takes level(s) {missing:?}");
        }
        Ok(cov)
    }

    /// Resample each node's value uniformly from `{-1, 0, 1}` with
    /// probability `rate`, weakening how well the graph predicts it.
    pub fn perturbed(&self, rate: f64, rng: &mut StreamRng) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("resampling rate {rate} outside [0, 1]")));
        }
        let values = self
            .values
            .iter()
            .map(|&c| {
                if rng.random::<f64>() < rate {
                    rng.random_range(-1..=1)
                } else {
                    c
                }
            })
            .collect();
        Ok(Covariates { values })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("node_id,c\n");
        for (i, c) in self.values.iter().enumerate() {
            writeln!(out, "{i},{c}").unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = parse_csv(&text, &["node_id", "c"])?;
        let mut values = Vec::with_capacity(rows.len());
        for (line, (i, fields)) in rows.iter().enumerate().map(|(k, r)| (k + 2, r)) {
            if *i != values.len() {
                return Err(Error::Parse { line, message: "node ids must be dense and ordered".into() });
            }
            values.push(parse_field::<i8>(&fields[1], line)?);
        }
        Covariates::new(values)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedCovariates {
    pub covariates: Covariates,
    /// Set when the input had zero variance and every node was put in bin 0.
    pub degenerate: bool,
}

/// Standardize, then split into empirical tertiles: values at or below the
/// lower tertile map to -1, values at or below the upper tertile map to 0,
/// the rest to +1. Ties therefore fall into the lower bin.
pub fn bin_covariate(raw: &[f64]) -> Result<BinnedCovariates> {
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("raw covariate".into()));
    }
    let n = raw.len();
    if n == 0 {
        return Ok(BinnedCovariates { covariates: Covariates { values: vec![] }, degenerate: true });
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return Ok(BinnedCovariates {
            covariates: Covariates { values: vec![0; n] },
            degenerate: true,
        });
    }
    let sd = var.sqrt();
    let z: Vec<f64> = raw.iter().map(|x| (x - mean) / sd).collect();
    let mut sorted = z.clone();
    sorted.sort_by(f64::total_cmp);
    let lower = sorted[n.div_ceil(3) - 1];
    let upper = sorted[(2 * n).div_ceil(3) - 1];
    let values = z
        .iter()
        .map(|&x| {
            if x <= lower {
                -1
            } else if x <= upper {
                0
            } else {
                1
            }
        })
        .collect();
    Ok(BinnedCovariates { covariates: Covariates { values }, degenerate: false })
}

/// Treatment probability `0.5 + 0.35 c`.
pub fn propensity(c: i8) -> Result<f64> {
    match c {
        -1 => Ok(0.15),
        0 => Ok(0.5),
        1 => Ok(0.85),
        other => Err(Error::Config(format!("covariate value {other} not in {{-1, 0, 1}}"))),
    }
}

fn propensity_of(c: i8) -> f64 {
    0.5 + 0.35 * f64::from(c)
}

/// How neighbor treatments are summarized into a node's exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Average,
    Or,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationParams {
    pub beta0: f64,
    pub beta1: f64,
    pub noise_sd: f64,
    pub aggregator: Aggregator,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams { beta0: 1.0, beta1: 1.0, noise_sd: 1.0, aggregator: Aggregator::Average }
    }
}

impl SimulationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if !self.beta0.is_finite() || !self.beta1.is_finite() {
            return Err(Error::Config("beta coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// Per-node binary treatments; `None` marks a treatment that was observed
/// but deleted (censored).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Treatments {
    pub values: Vec<Option<bool>>,
}

impl Treatments {
    pub fn observed(values: Vec<bool>) -> Self {
        Treatments { values: values.into_iter().map(Some).collect() }
    }

    pub fn constant(n: usize, t: bool) -> Self {
        Treatments { values: vec![Some(t); n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Neighbor-treatment summary `V_i` with an eligibility flag; nodes without
/// any neighbor carrying an observed treatment are ineligible and have
/// `V_i = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedTreatment {
    pub values: Vec<f64>,
    pub eligible: Vec<bool>,
}

impl AggregatedTreatment {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_eligible(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }
}

/// Per-node outcomes; `None` where no outcome is observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcomes {
    pub values: Vec<Option<f64>>,
}

impl Outcomes {
    pub fn observed(values: Vec<f64>) -> Self {
        Outcomes { values: values.into_iter().map(Some).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn draw_treatments(cov: &Covariates, seed: u64) -> Treatments {
    let mut rng = rng::stream(seed, rng::TREATMENT);
    let values = cov
        .values
        .iter()
        .map(|&c| rng.random::<f64>() < propensity_of(c))
        .collect();
    Treatments::observed(values)
}

pub fn aggregate_treatment(g: &Graph, t: &Treatments, aggregator: Aggregator) -> Result<AggregatedTreatment> {
    let n = g.n();
    if t.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: t.len() });
    }
    let mut values = vec![0.0; n];
    let mut eligible = vec![false; n];
    for i in 0..n {
        let mut seen = 0usize;
        let mut treated = 0usize;
        for &j in g.neighbors(i) {
            if let Some(tj) = t.values[j] {
                seen += 1;
                treated += usize::from(tj);
            }
        }
        if seen == 0 {
            continue;
        }
        eligible[i] = true;
        values[i] = match aggregator {
            Aggregator::Average => treated as f64 / seen as f64,
            Aggregator::Or => f64::from(u8::from(treated > 0)),
        };
    }
    Ok(AggregatedTreatment { values, eligible })
}

/// `Y_i = beta0 V_i + beta1 g(C_i) + eps_i`, `eps_i ~ N(0, noise_sd^2)`.
pub fn simulate_outcome_continuous(
    v: &AggregatedTreatment,
    cov: &Covariates,
    params: &SimulationParams,
    seed: u64,
) -> Result<Outcomes> {
    params.validate()?;
    if cov.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: v.len(), got: cov.len() });
    }
    let mut rng = rng::stream(seed, rng::NOISE);
    let noise = Normal::new(0.0, params.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let values = v
        .values
        .iter()
        .zip(cov.values())
        .map(|(&vi, &c)| params.beta0 * vi + params.beta1 * propensity_of(c) + noise.sample(&mut rng))
        .collect();
    Ok(Outcomes::observed(values))
}

/// Result of the censoring design: a random half of the nodes turn their
/// treatment into an outcome and lose the treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct VaccinationData {
    pub treatments: Treatments,
    pub outcomes: Outcomes,
    pub aggregated: AggregatedTreatment,
    /// Sorted ids of the censored half; estimation is restricted to them.
    pub evaluation: Vec<usize>,
}

/// Pick `floor(n/2)` nodes uniformly, set `Y_i = T_i` and delete `T_i` for
/// them. When `surviving_only` is set, `V` is recomputed from the remaining
/// treatments; otherwise it is computed from the full pre-deletion vector.
pub fn vaccination_design(
    g: &Graph,
    t: &Treatments,
    aggregator: Aggregator,
    surviving_only: bool,
    seed: u64,
) -> Result<VaccinationData> {
    let n = g.n();
    if n < 2 {
        return Err(Error::Config(format!("vaccination design needs at least 2 nodes, got {n}")));
    }
    if t.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: t.len() });
    }
    let mut rng = rng::stream(seed, rng::CENSOR);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut evaluation = order[..n / 2].to_vec();
    evaluation.sort_unstable();

    let mut censored = t.clone();
    let mut outcomes = vec![None; n];
    for &i in &evaluation {
        let ti = t.values[i].ok_or_else(|| Error::Config(format!("treatment of node {i} already missing")))?;
        outcomes[i] = Some(f64::from(u8::from(ti)));
        censored.values[i] = None;
    }
    let aggregated = if surviving_only {
        aggregate_treatment(g, &censored, aggregator)?
    } else {
        aggregate_treatment(g, t, aggregator)?
    };
    Ok(VaccinationData {
        treatments: censored,
        outcomes: Outcomes { values: outcomes },
        aggregated,
        evaluation,
    })
}

/// Ground-truth average outcome under `do(T = t_star)` for the continuous
/// design, averaged over nodes with at least one neighbor.
pub fn oracle_estimand(g: &Graph, cov: &Covariates, params: &SimulationParams, t_star: bool) -> Result<f64> {
    if cov.len() != g.n() {
        return Err(Error::DimensionMismatch { expected: g.n(), got: cov.len() });
    }
    let v_star = f64::from(u8::from(t_star));
    let (sum, count) = (0..g.n())
        .filter(|&i| g.degree_unchecked(i) > 0)
        .fold((0.0, 0usize), |(s, k), i| {
            (s + params.beta0 * v_star + params.beta1 * propensity_of(cov.get(i)), k + 1)
        });
    if count == 0 {
        return Err(Error::NoEligibleNodes);
    }
    Ok(sum / count as f64)
}

/// `oracle_estimand(1) - oracle_estimand(0)`.
pub fn oracle_contrast(g: &Graph, cov: &Covariates, params: &SimulationParams) -> Result<f64> {
    Ok(oracle_estimand(g, cov, params, true)? - oracle_estimand(g, cov, params, false)?)
}

/// A fully simulated dataset ready for estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariates: Covariates,
    pub treatments: Treatments,
    pub aggregated: AggregatedTreatment,
    pub outcomes: Outcomes,
}

impl Dataset {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("node_id,c,t,v,y,eligible\n");
        for i in 0..self.covariates.len() {
            let t = self.treatments.values[i].map(|t| u8::from(t).to_string()).unwrap_or_default();
            let y = self.outcomes.values[i].map(|y| y.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{i},{},{t},{},{y},{}",
                self.covariates.get(i),
                self.aggregated.values[i],
                u8::from(self.aggregated.eligible[i])
            )
            .unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rows = parse_csv(&text, &["node_id", "c", "t", "v", "y", "eligible"])?;
        let n = rows.len();
        let mut c = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut eligible = Vec::with_capacity(n);
        for (k, (id, f)) in rows.iter().enumerate() {
            let line = k + 2;
            if *id != k {
                return Err(Error::Parse { line, message: "node ids must be dense and ordered".into() });
            }
            c.push(parse_field::<i8>(&f[1], line)?);
            t.push(if f[2].is_empty() { None } else { Some(parse_field::<u8>(&f[2], line)? != 0) });
            v.push(parse_field::<f64>(&f[3], line)?);
            y.push(if f[4].is_empty() { None } else { Some(parse_field::<f64>(&f[4], line)?) });
            eligible.push(parse_field::<u8>(&f[5], line)? != 0);
        }
        Ok(Dataset {
            covariates: Covariates::new(c)?,
            treatments: Treatments { values: t },
            aggregated: AggregatedTreatment { values: v, eligible },
            outcomes: Outcomes { values: y },
        })
    }
}

/// Minimal comma-separated reader for the files this crate writes: checks the
/// header and returns `(node_id, fields)` per data row.
fn parse_csv(text: &str, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text.lines();
    let head = lines.next().ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols != header {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", header.join(",")) });
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != header.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, got {}", header.len(), fields.len()),
            });
        }
        let id = parse_field::<usize>(&fields[0], line_no)?;
        rows.push((id, fields));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::Parse { line, message: format!("invalid field {s:?}") })
}

pub fn read_node_list(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut nodes = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        nodes.push(parse_field::<usize>(t, k + 1)?);
    }
    nodes.sort_unstable();
    nodes.dedup();
    Ok(nodes)
}
