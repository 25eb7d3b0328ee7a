//! Joint training of node embeddings and a linear outcome head by
//! stochastic gradient descent on subsampled relational risk.
//!
//! For a sample with vertex set `S`, positive pairs `P` and negative pairs
//! `N`, the loss is
//!
//! ```text
//! q * sum_{i in S, y_i defined} (y_i - m(v_i, l_i))^2
//!   + sum_{(i,j) in P} -ln sigma(l_i . l_j)
//!   + sum_{(i,j) in N} -ln (1 - sigma(l_i . l_j))
//! ```
//!
//! with the linear head `m(v, l) = w_v v + w . l + b`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;
use crate::sampler::{Sampler, SamplerConfig, SubgraphSample};
use crate::simulate::{AggregatedTreatment, Outcomes};

pub const PARAMS_FORMAT_VERSION: u32 = 1;
const PARAMS_MAGIC: &str = "peer-contagion-params";

/// Linear outcome head `m(v, l) = w_v v + w . l + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w_v: f64,
    pub w: Vec<f64>,
    pub b: f64,
}

impl Head {
    pub fn zeros(d: usize) -> Self {
        Head { w_v: 0.0, w: vec![0.0; d], b: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    n: usize,
    d: usize,
    /// Row-major `n x d`.
    embeddings: Vec<f64>,
    pub head: Head,
}

impl ModelParams {
    pub fn new(n: usize, d: usize, embeddings: Vec<f64>, head: Head) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if embeddings.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: embeddings.len() });
        }
        if head.w.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: head.w.len() });
        }
        Ok(ModelParams { n, d, embeddings, head })
    }

    pub fn zeros(n: usize, d: usize) -> Result<Self> {
        ModelParams::new(n, d, vec![0.0; n * d], Head::zeros(d))
    }

    /// Embeddings i.i.d. `N(0, scale^2)`, head at zero.
    pub fn random(n: usize, d: usize, scale: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = rng::stream(seed, rng::INIT);
        let embeddings = (0..n * d).map(|_| normal.sample(&mut rng)).collect();
        ModelParams::new(n, d, embeddings, Head::zeros(d))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn embedding_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.embeddings[i * self.d..(i + 1) * self.d]
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.iter().chain(&self.head.w).all(|x| x.is_finite())
            && self.head.w_v.is_finite()
            && self.head.b.is_finite()
    }

    /// Relabel rows: row `i` moves to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: perm.len() });
        }
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.embedding_mut(p).copy_from_slice(self.embedding(i));
        }
        Ok(out)
    }

    /// Apply `params -= rate * grad` on embeddings and `head_rate` on the head.
    pub fn apply(&mut self, grad: &Gradient, rate: f64, head_rate: f64) {
        for (&i, g) in &grad.rows {
            for (x, gx) in self.embedding_mut(i).iter_mut().zip(g) {
                *x -= rate * gx;
            }
        }
        self.head.w_v -= head_rate * grad.head.w_v;
        self.head.b -= head_rate * grad.head.b;
        for (w, gw) in self.head.w.iter_mut().zip(&grad.head.w) {
            *w -= head_rate * gw;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn predict_m(v: f64, lambda: &[f64], head: &Head) -> Result<f64> {
    if lambda.len() != head.w.len() {
        return Err(Error::DimensionMismatch { expected: head.w.len(), got: lambda.len() });
    }
    Ok(head.w_v * v + dot(&head.w, lambda) + head.b)
}

/// Modelled edge probability `sigma(l_i . l_j)`.
pub fn edge_logit(lambda_i: &[f64], lambda_j: &[f64]) -> Result<f64> {
    if lambda_i.len() != lambda_j.len() {
        return Err(Error::DimensionMismatch { expected: lambda_i.len(), got: lambda_j.len() });
    }
    Ok(sigmoid(dot(lambda_i, lambda_j)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub outcome_term: f64,
    pub reconstruction_term: f64,
    pub total: f64,
}

/// Gradient restricted to the embedding rows a sample touches.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub head: Head,
}

impl Gradient {
    /// Gradient of row `i`; zero for untouched rows.
    pub fn row(&self, i: usize, d: usize) -> Vec<f64> {
        self.rows.get(&i).cloned().unwrap_or_else(|| vec![0.0; d])
    }
}

/// Observed exposure and outcome for the outcome term. A node is labeled
/// when its outcome is defined and its exposure is eligible.
#[derive(Debug, Clone, Copy)]
pub struct Labels<'a> {
    pub v: &'a AggregatedTreatment,
    pub y: &'a Outcomes,
}

impl Labels<'_> {
    #[inline]
    fn get(&self, i: usize) -> Option<(f64, f64)> {
        match self.y.values[i] {
            Some(y) if self.v.eligible[i] => Some((self.v.values[i], y)),
            _ => None,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        for len in [self.v.values.len(), self.v.eligible.len(), self.y.values.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        Ok(())
    }
}

fn check_sample(sample: &SubgraphSample, n: usize) -> Result<()> {
    let pair_nodes = sample.positives.iter().chain(&sample.negatives).flat_map(|&(i, j)| [i, j]);
    match sample.vertices.iter().copied().chain(pair_nodes).find(|&i| i >= n) {
        Some(node) => Err(Error::NodeOutOfRange { node, n }),
        None => Ok(()),
    }
}

/// Dense gradient accumulator reused across steps. Rows are allocated on
/// first touch and cleared in [`Scratch::reset`].
struct Scratch {
    d: usize,
    slot: Vec<usize>,
    touched: Vec<usize>,
    rows: Vec<f64>,
    head: Head,
}

impl Scratch {
    const NONE: usize = usize::MAX;

    fn new(n: usize, d: usize) -> Self {
        Scratch { d, slot: vec![Self::NONE; n], touched: Vec::new(), rows: Vec::new(), head: Head::zeros(d) }
    }

    fn reset(&mut self) {
        for &i in &self.touched {
            self.slot[i] = Self::NONE;
        }
        self.touched.clear();
        self.rows.clear();
        self.head.w_v = 0.0;
        self.head.b = 0.0;
        self.head.w.iter_mut().for_each(|w| *w = 0.0);
    }

    #[inline]
    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        if self.slot[i] == Self::NONE {
            self.slot[i] = self.touched.len();
            self.touched.push(i);
            self.rows.resize(self.rows.len() + self.d, 0.0);
        }
        let k = self.slot[i];
        &mut self.rows[k * self.d..(k + 1) * self.d]
    }

    fn apply(&self, params: &mut ModelParams, rate: f64, head_rate: f64) {
        for (k, &i) in self.touched.iter().enumerate() {
            let g = &self.rows[k * self.d..(k + 1) * self.d];
            for (x, gx) in params.embedding_mut(i).iter_mut().zip(g) {
                *x -= rate * gx;
            }
        }
        params.head.w_v -= head_rate * self.head.w_v;
        params.head.b -= head_rate * self.head.b;
        for (w, gw) in params.head.w.iter_mut().zip(&self.head.w) {
            *w -= head_rate * gw;
        }
    }

    fn updated_finite(&self, params: &ModelParams) -> bool {
        let h = &params.head;
        h.w_v.is_finite()
            && h.b.is_finite()
            && h.w.iter().all(|x| x.is_finite())
            && self.touched.iter().all(|&i| params.embedding(i).iter().all(|x| x.is_finite()))
    }

    fn into_gradient(self) -> Gradient {
        let rows = self
            .touched
            .iter()
            .enumerate()
            .map(|(k, &i)| (i, self.rows[k * self.d..(k + 1) * self.d].to_vec()))
            .collect();
        Gradient { rows, head: self.head }
    }
}

fn loss_impl(sample: &SubgraphSample, labels: Labels<'_>, params: &ModelParams, q: f64, mut grad: Option<&mut Scratch>) -> Result<LossBreakdown> {
    let n = params.n();
    labels.check(n)?;
    check_sample(sample, n)?;
    let head = &params.head;

    let mut outcome = 0.0;
    for &i in &sample.vertices {
        let Some((v, y)) = labels.get(i) else { continue };
        let lambda = params.embedding(i);
        let r = y - (head.w_v * v + dot(&head.w, lambda) + head.b);
        outcome += r * r;
        if let Some(g) = grad.as_deref_mut() {
            let c = -2.0 * q * r;
            for (gx, w) in g.row_mut(i).iter_mut().zip(&head.w) {
                *gx += c * w;
            }
            for (gw, l) in g.head.w.iter_mut().zip(lambda) {
                *gw += c * l;
            }
            g.head.w_v += c * v;
            g.head.b += c;
        }
    }

    let mut reconstruction = 0.0;
    let pairs = sample.positives.iter().map(|p| (p, true)).chain(sample.negatives.iter().map(|p| (p, false)));
    for (&(i, j), is_edge) in pairs {
        let li = params.embedding(i);
        let lj = params.embedding(j);
        let s = dot(li, lj);
        // -ln sigma(s) = softplus(-s); -ln(1 - sigma(s)) = softplus(s)
        reconstruction += if is_edge { softplus(-s) } else { softplus(s) };
        if let Some(g) = grad.as_deref_mut() {
            let c = if is_edge { sigmoid(s) - 1.0 } else { sigmoid(s) };
            for (gx, x) in g.row_mut(i).iter_mut().zip(lj) {
                *gx += c * x;
            }
            for (gx, x) in g.row_mut(j).iter_mut().zip(li) {
                *gx += c * x;
            }
        }
    }

    let total = q * outcome + reconstruction;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss = {total}")));
    }
    Ok(LossBreakdown { outcome_term: outcome, reconstruction_term: reconstruction, total })
}

pub fn batch_loss(sample: &SubgraphSample, labels: Labels<'_>, params: &ModelParams, q: f64) -> Result<LossBreakdown> {
    if !params.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    loss_impl(sample, labels, params, q, None)
}

/// Loss and its exact gradient with respect to every touched embedding row
/// and the head.
pub fn loss_and_gradients(sample: &SubgraphSample, labels: Labels<'_>, params: &ModelParams, q: f64) -> Result<(LossBreakdown, Gradient)> {
    if !params.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let mut scratch = Scratch::new(params.n(), params.dim());
    let loss = loss_impl(sample, labels, params, q, Some(&mut scratch))?;
    Ok((loss, scratch.into_gradient()))
}

pub fn gradients(sample: &SubgraphSample, labels: Labels<'_>, params: &ModelParams, q: f64) -> Result<Gradient> {
    Ok(loss_and_gradients(sample, labels, params, q)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the outcome term, in `[0, 1]`.
    pub q: f64,
    /// Step size for embedding rows.
    pub learning_rate: f64,
    /// Step size for the outcome head, whose gradient sums over every
    /// labeled vertex of a sample.
    pub head_learning_rate: f64,
    /// SGD steps; one subgraph sample per step.
    pub steps: usize,
    pub init_scale: f64,
    pub dim: usize,
    /// Fit the head on centered and scaled outcomes, then map it back.
    pub standardize_outcome: bool,
    /// Same for the exposure column of the head.
    pub standardize_exposure: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            q: 1.0,
            learning_rate: 0.025,
            head_learning_rate: 0.002,
            steps: 40_000,
            init_scale: 0.1,
            dim: 32,
            standardize_outcome: true,
            standardize_exposure: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::Config(format!("q = {} outside [0, 1]", self.q)));
        }
        if !(self.learning_rate > 0.0) || !(self.head_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be >= 0".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Trained parameters plus the loss measured on a fixed evaluation set.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    /// `(step, mean total loss over the evaluation samples)`, taken every
    /// `eval_every` steps and after the last one.
    pub eval_losses: Vec<(usize, f64)>,
}

/// Optional monitoring: every `every` steps, average the loss over
/// `samples` subgraphs drawn from a dedicated stream.
#[derive(Debug, Clone, Copy)]
pub struct EvalSchedule {
    pub every: usize,
    pub samples: usize,
}

pub fn train(
    g: &Graph,
    v: &AggregatedTreatment,
    y: &Outcomes,
    sampler_cfg: &SamplerConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams> {
    Ok(train_with_report(g, v, y, sampler_cfg, cfg, seed, None)?.params)
}

pub fn train_with_report(
    g: &Graph,
    v: &AggregatedTreatment,
    y: &Outcomes,
    sampler_cfg: &SamplerConfig,
    cfg: &TrainConfig,
    seed: u64,
    eval: Option<EvalSchedule>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = g.n();
    Labels { v, y }.check(n)?;
    let sampler = Sampler::new(g, sampler_cfg.clone())?;

    // center and scale labels and exposures so step sizes do not depend on
    // their units and the exposure slope is not collinear with the bias
    let labeled: Vec<(f64, f64)> = (0..n).filter_map(|i| Labels { v, y }.get(i)).collect();
    let (y_shift, y_scale) = standardizer(cfg.standardize_outcome, labeled.iter().map(|p| p.1));
    let (v_shift, v_scale) = standardizer(cfg.standardize_exposure, labeled.iter().map(|p| p.0));
    let y_train = Outcomes { values: y.values.iter().map(|o| o.map(|y| (y - y_shift) / y_scale)).collect() };
    let v_train = AggregatedTreatment {
        values: v.values.iter().map(|x| (x - v_shift) / v_scale).collect(),
        eligible: v.eligible.clone(),
    };
    let labels = Labels { v: &v_train, y: &y_train };

    let mut params = ModelParams::random(n, cfg.dim, cfg.init_scale, seed)?;
    let mut rng = rng::stream(seed, rng::SAMPLER);

    let eval_set: Vec<SubgraphSample> = match eval {
        Some(e) if e.every > 0 => {
            let mut erng = rng::stream(seed, rng::EVAL);
            (0..e.samples.max(1)).map(|_| sampler.sample(&mut erng)).collect()
        }
        _ => Vec::new(),
    };
    let eval_loss = |p: &ModelParams| -> Result<f64> {
        let mut sum = 0.0;
        for s in &eval_set {
            sum += batch_loss(s, labels, p, cfg.q)?.total;
        }
        Ok(sum / eval_set.len() as f64)
    };
    let mut eval_losses = Vec::new();
    let mut scratch = Scratch::new(n, cfg.dim);

    for step in 0..cfg.steps {
        if eval.is_some_and(|e| e.every > 0 && step % e.every == 0) {
            eval_losses.push((step, eval_loss(&params)?));
        }
        let sample = sampler.sample(&mut rng);
        scratch.reset();
        let loss = match loss_impl(&sample, labels, &params, cfg.q, Some(&mut scratch)) {
            Ok(x) => x,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        scratch.apply(&mut params, cfg.learning_rate, cfg.head_learning_rate);
        if !scratch.updated_finite(&params) {
            return Err(Error::Diverged { step, loss: loss.total });
        }
    }
    if !eval_set.is_empty() {
        eval_losses.push((cfg.steps, eval_loss(&params)?));
    }

    let h = &mut params.head;
    h.b = (h.b - h.w_v * v_shift / v_scale) * y_scale + y_shift;
    h.w_v *= y_scale / v_scale;
    h.w.iter_mut().for_each(|w| *w *= y_scale);
    Ok(TrainReport { params, eval_losses })
}

/// `(mean, sd)` of the values when enabled and nonempty, else `(0, 1)`.
/// A zero spread keeps scale 1.
fn standardizer(enabled: bool, values: impl Iterator<Item = f64>) -> (f64, f64) {
    let values: Vec<f64> = values.collect();
    if !enabled || values.is_empty() {
        return (0.0, 1.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / values.len() as f64;
    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
}

/// Write parameters as text: a header line with format version, `n` and
/// `d`, then one line per embedding row, then the head as `w_v b w...`.
pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(params.n * params.d * 24);
    writeln!(out, "{PARAMS_MAGIC} {PARAMS_FORMAT_VERSION} {} {}", params.n, params.d).unwrap();
    let mut push_row = |vals: &mut dyn Iterator<Item = f64>| {
        let mut first = true;
        for x in vals {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{x:e}").unwrap();
        }
        out.push('\n');
    };
    for i in 0..params.n {
        push_row(&mut params.embedding(i).iter().copied());
    }
    let h = &params.head;
    push_row(&mut [h.w_v, h.b].into_iter().chain(h.w.iter().copied()));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read parameters written by [`save_params`]. When `expected_n` is given,
/// the stored node count must match it.
pub fn load_params(path: &Path, expected_n: Option<usize>) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse { line: 1, message: "empty parameter file".into() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != PARAMS_MAGIC {
        return Err(Error::Parse { line: 1, message: "not a parameter file".into() });
    }
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse { line: 1, message: format!("bad header field {s:?}") });
    let version = parse_usize(fields[1])? as u32;
    if version != PARAMS_FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    let n = parse_usize(fields[2])?;
    let d = parse_usize(fields[3])?;
    if let Some(expected) = expected_n {
        if expected != n {
            return Err(Error::DimensionMismatch { expected, got: n });
        }
    }

    let parse_row = |line_no: usize, line: &str, len: usize| -> Result<Vec<f64>> {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse { line: line_no, message: format!("invalid number {t:?}") }))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != len {
            return Err(Error::DimensionMismatch { expected: len, got: row.len() });
        }
        Ok(row)
    };
    let mut embeddings = Vec::with_capacity(n * d);
    for i in 0..n {
        let line = lines.next().ok_or(Error::DimensionMismatch { expected: n, got: i })?;
        embeddings.extend(parse_row(i + 2, line, d)?);
    }
    let head_line = lines.next().ok_or(Error::Parse { line: n + 2, message: "missing head row".into() })?;
    let head = parse_row(n + 2, head_line, d + 2)?;
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Parse { line: n + 3, message: "trailing data after head row".into() });
    }
    let params = ModelParams::new(n, d, embeddings, Head { w_v: head[0], b: head[1], w: head[2..].to_vec() })?;
    if !params.is_finite() {
        return Err(Error::NonFinite("stored parameters".into()));
    }
    Ok(params)
}
