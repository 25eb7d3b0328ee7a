//! The embedding plug-in estimator and the two regression baselines.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{self, EigenOptions};
use crate::relerm::{predict_m, ModelParams};
use crate::simulate::{aggregate_treatment, AggregatedTreatment, Aggregator, Outcomes, Treatments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Unadjusted,
    Parametric,
    Embedding,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Unadjusted, EstimatorKind::Parametric, EstimatorKind::Embedding];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Unadjusted => "Unadjusted",
            EstimatorKind::Parametric => "Parametric",
            EstimatorKind::Embedding => "Embedding",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One estimator's answer for the contrast `psi(1) - psi(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    pub t_star_contrast: f64,
    pub psi_at_1: f64,
    pub psi_at_0: f64,
    pub n_eligible: usize,
    /// Standard error of the treatment coefficient for regression baselines.
    pub std_error: Option<f64>,
    pub seed: u64,
}

impl EstimateReport {
    pub const CSV_HEADER: &'static str = "estimator,confounder_label,beta1,estimate,seed";

    pub fn csv_row(&self, confounder_label: &str, beta1: Option<f64>) -> String {
        let beta1 = beta1.map(|b| b.to_string()).unwrap_or_else(|| "NA".into());
        format!("{},{confounder_label},{beta1},{},{}", self.estimator, self.t_star_contrast, self.seed)
    }
}

/// Exposure under the constant intervention `T = t_star`.
pub fn intervene_aggregate(g: &Graph, t_star: bool, aggregator: Aggregator) -> AggregatedTreatment {
    aggregate_treatment(g, &Treatments::constant(g.n(), t_star), aggregator).expect("constant vector matches graph size")
}

fn in_set(node_set: Option<&[usize]>, n: usize) -> Result<Vec<bool>> {
    match node_set {
        None => Ok(vec![true; n]),
        Some(nodes) => {
            let mut mask = vec![false; n];
            for &i in nodes {
                if i >= n {
                    return Err(Error::NodeOutOfRange { node: i, n });
                }
                mask[i] = true;
            }
            Ok(mask)
        }
    }
}

/// Average of the fitted outcome model at the interventional exposure over
/// eligible nodes (restricted to `node_set` when given).
pub fn psi_hat(g: &Graph, params: &ModelParams, t_star: bool, aggregator: Aggregator, node_set: Option<&[usize]>) -> Result<f64> {
    Ok(psi_hat_counted(g, params, t_star, aggregator, node_set)?.0)
}

fn psi_hat_counted(g: &Graph, params: &ModelParams, t_star: bool, aggregator: Aggregator, node_set: Option<&[usize]>) -> Result<(f64, usize)> {
    if params.n() != g.n() {
        return Err(Error::DimensionMismatch { expected: g.n(), got: params.n() });
    }
    let v_star = intervene_aggregate(g, t_star, aggregator);
    let mask = in_set(node_set, g.n())?;
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..g.n() {
        if v_star.eligible[i] && mask[i] {
            sum += predict_m(v_star.values[i], params.embedding(i), &params.head)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoEligibleNodes);
    }
    Ok((sum / count as f64, count))
}

pub fn embedding_estimate(g: &Graph, params: &ModelParams, aggregator: Aggregator, node_set: Option<&[usize]>, seed: u64) -> Result<EstimateReport> {
    let (psi_at_1, n_eligible) = psi_hat_counted(g, params, true, aggregator, node_set)?;
    let (psi_at_0, _) = psi_hat_counted(g, params, false, aggregator, node_set)?;
    Ok(EstimateReport {
        estimator: EstimatorKind::Embedding,
        t_star_contrast: psi_at_1 - psi_at_0,
        psi_at_1,
        psi_at_0,
        n_eligible,
        std_error: None,
        seed,
    })
}

/// Nodes usable by the regression baselines: eligible exposure, defined
/// outcome, inside `node_set`.
fn regression_rows(v: &AggregatedTreatment, y: &Outcomes, node_set: Option<&[usize]>) -> Result<Vec<usize>> {
    let n = v.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    let mask = in_set(node_set, n)?;
    Ok((0..n).filter(|&i| mask[i] && v.eligible[i] && y.values[i].is_some()).collect())
}

fn check_exposure_varies(v: &AggregatedTreatment, rows: &[usize]) -> Result<()> {
    let first = rows.first().map(|&i| v.values[i]);
    if rows.len() < 2 || rows.iter().all(|&i| Some(v.values[i]) == first) {
        return Err(Error::SingularDesign("exposure takes fewer than two distinct values".into()));
    }
    Ok(())
}

/// Slope of the least-squares fit of `y` on `[1, v]`.
pub fn unadjusted_ols(v: &AggregatedTreatment, y: &Outcomes, node_set: Option<&[usize]>) -> Result<EstimateReport> {
    let rows = regression_rows(v, y, node_set)?;
    check_exposure_varies(v, &rows)?;
    let ones = vec![1.0; rows.len()];
    let vs: Vec<f64> = rows.iter().map(|&i| v.values[i]).collect();
    let ys: Vec<f64> = rows.iter().map(|&i| y.values[i].unwrap()).collect();
    let fit = linalg::ols(&[ones, vs], &ys)?;
    let slope = fit.coefficient(1).ok_or_else(|| Error::SingularDesign("exposure column dropped".into()))?;
    let intercept = fit.coefficient(0).unwrap_or(0.0);
    Ok(EstimateReport {
        estimator: EstimatorKind::Unadjusted,
        t_star_contrast: slope,
        psi_at_1: intercept + slope,
        psi_at_0: intercept,
        n_eligible: rows.len(),
        std_error: fit.std_errors[1],
        seed: 0,
    })
}

/// Community memberships: the leading `k` eigenvectors of the
/// degree-normalized adjacency, each node's row scaled to unit length
/// (zero rows stay zero). Returned as `n x k`.
pub fn spectral_memberships(g: &Graph, k: usize, opts: &EigenOptions) -> Result<DMatrix<f64>> {
    let mut rows = linalg::top_eigenvectors(g, k, opts)?.vectors;
    for mut r in rows.row_iter_mut() {
        let norm = r.norm();
        if norm > 1e-12 {
            r.scale_mut(1.0 / norm);
        } else {
            r.fill(0.0);
        }
    }
    Ok(rows)
}

/// Default community count: `min(d, floor(n / 20))`, at least 1.
pub fn default_communities(n: usize, d: usize) -> usize {
    d.min(n / 20).max(1)
}

/// Coefficient of `v` in the regression of `y` on `[1, v, memberships]`.
/// Membership columns collinear with earlier columns are dropped.
pub fn parametric_baseline(
    g: &Graph,
    v: &AggregatedTreatment,
    y: &Outcomes,
    k: usize,
    node_set: Option<&[usize]>,
    opts: &EigenOptions,
) -> Result<EstimateReport> {
    let memberships = spectral_memberships(g, k, opts)?;
    parametric_with_memberships(&memberships, v, y, node_set)
}

/// [`parametric_baseline`] with precomputed memberships, so one
/// decomposition can serve several outcome vectors on the same graph.
pub fn parametric_with_memberships(
    memberships: &DMatrix<f64>,
    v: &AggregatedTreatment,
    y: &Outcomes,
    node_set: Option<&[usize]>,
) -> Result<EstimateReport> {
    if memberships.nrows() != v.len() {
        return Err(Error::DimensionMismatch { expected: v.len(), got: memberships.nrows() });
    }
    let rows = regression_rows(v, y, node_set)?;
    check_exposure_varies(v, &rows)?;
    let k = memberships.ncols();
    let mut columns = Vec::with_capacity(k + 2);
    columns.push(vec![1.0; rows.len()]);
    columns.push(rows.iter().map(|&i| v.values[i]).collect());
    for c in 0..k {
        columns.push(rows.iter().map(|&i| memberships[(i, c)]).collect());
    }
    let ys: Vec<f64> = rows.iter().map(|&i| y.values[i].unwrap()).collect();
    let fit = linalg::ols(&columns, &ys)?;
    let slope = fit.coefficient(1).ok_or_else(|| Error::SingularDesign("exposure column collinear with intercept".into()))?;
    if !fit.dropped.is_empty() {
        log::warn!("parametric baseline dropped {} collinear membership column(s)", fit.dropped.len());
    }
    // mean fitted value at v = 0 over the regression rows
    let mut base = fit.coefficient(0).unwrap_or(0.0);
    for c in 0..k {
        if let Some(beta) = fit.coefficient(c + 2) {
            base += beta * columns[c + 2].iter().sum::<f64>() / rows.len() as f64;
        }
    }
    Ok(EstimateReport {
        estimator: EstimatorKind::Parametric,
        t_star_contrast: slope,
        psi_at_1: base + slope,
        psi_at_0: base,
        n_eligible: rows.len(),
        std_error: fit.std_errors[1],
        seed: 0,
    })
}

/// Hard labels from membership rows by Lloyd's k-means with deterministic
/// farthest-point seeding.
pub fn cluster_memberships(memberships: &DMatrix<f64>, k: usize, max_iter: usize) -> Vec<usize> {
    let n = memberships.nrows();
    if n == 0 || k == 0 {
        return vec![0; n];
    }
    let dist2 = |i: usize, c: &[f64]| -> f64 { memberships.row(i).iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum() };
    let mut centers: Vec<Vec<f64>> = vec![memberships.row(0).iter().copied().collect()];
    while centers.len() < k.min(n) {
        let far = (0..n)
            .max_by(|&a, &b| {
                let da = centers.iter().map(|c| dist2(a, c)).fold(f64::INFINITY, f64::min);
                let db = centers.iter().map(|c| dist2(b, c)).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        centers.push(memberships.row(far).iter().copied().collect());
    }
    let mut labels = vec![0; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..centers.len())
                .min_by(|&a, &b| dist2(i, &centers[a]).total_cmp(&dist2(i, &centers[b])))
                .unwrap();
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            for (t, x) in center.iter_mut().enumerate() {
                *x = members.iter().map(|&i| memberships[(i, t)]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relerm::Head;

    #[test]
    fn intervention_examples() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2)]).unwrap().0;
        let v1 = intervene_aggregate(&g, true, Aggregator::Average);
        assert_eq!(v1.values, vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(v1.eligible, vec![true, true, true, false]);
        let v0 = intervene_aggregate(&g, false, Aggregator::Or);
        assert!(v0.values.iter().all(|&x| x == 0.0));
        assert!(!v0.eligible[3]);
    }

    #[test]
    fn psi_hat_with_exposure_only_head() {
        let g = Graph::cycle(5);
        let mut params = ModelParams::random(5, 3, 1.0, 2).unwrap();
        params.head = Head { w_v: 1.0, w: vec![0.0; 3], b: 0.0 };
        assert!((psi_hat(&g, &params, true, Aggregator::Average, None).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn contrast_is_exposure_weight() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (3, 4)]).unwrap().0;
        let mut params = ModelParams::random(6, 4, 1.0, 3).unwrap();
        params.head = Head { w_v: -0.37, w: vec![0.3, 1.1, -2.0, 0.5], b: 4.0 };
        let r = embedding_estimate(&g, &params, Aggregator::Average, None, 0).unwrap();
        assert!((r.t_star_contrast - params.head.w_v).abs() < 1e-12);
        assert_eq!(r.n_eligible, 5);
        let subset = embedding_estimate(&g, &params, Aggregator::Or, Some(&[0, 4, 5]), 0).unwrap();
        assert_eq!(subset.n_eligible, 2);
    }

    #[test]
    fn psi_hat_errors() {
        let g = Graph::empty(3);
        let params = ModelParams::zeros(3, 2).unwrap();
        assert!(matches!(psi_hat(&g, &params, true, Aggregator::Average, None), Err(Error::NoEligibleNodes)));
        let params = ModelParams::zeros(4, 2).unwrap();
        assert!(psi_hat(&g, &params, true, Aggregator::Average, None).is_err());
    }

    fn obs(v: Vec<f64>, y: Vec<f64>) -> (AggregatedTreatment, Outcomes) {
        let e = vec![true; v.len()];
        (AggregatedTreatment { values: v, eligible: e }, Outcomes::observed(y))
    }

    #[test]
    fn unadjusted_examples() {
        let (v, y) = obs(vec![0.0, 0.5, 1.0, 0.25], vec![0.0, 1.0, 2.0, 0.5]);
        assert!((unadjusted_ols(&v, &y, None).unwrap().t_star_contrast - 2.0).abs() < 1e-12);
        let (v, y) = obs(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 4.0]);
        assert!((unadjusted_ols(&v, &y, None).unwrap().t_star_contrast - 1.5).abs() < 1e-12);
        let (v, y) = obs(vec![0.5; 4], vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(unadjusted_ols(&v, &y, None), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn unadjusted_respects_node_set_and_missing_outcomes() {
        let v = AggregatedTreatment { values: vec![0.0, 1.0, 2.0, 3.0, 9.0], eligible: vec![true, true, true, true, false] };
        let y = Outcomes { values: vec![Some(1.0), Some(1.0), Some(4.0), None, Some(100.0)] };
        let r = unadjusted_ols(&v, &y, Some(&[0, 1, 2, 3, 4])).unwrap();
        assert_eq!(r.n_eligible, 3);
        assert!((r.t_star_contrast - 1.5).abs() < 1e-12);
    }

    fn two_cliques(size: usize) -> Graph {
        let mut edges = Vec::new();
        for base in [0, size] {
            for i in 0..size {
                for j in (i + 1)..size {
                    edges.push((base + i, base + j));
                }
            }
        }
        Graph::from_edges(2 * size, &edges).unwrap().0
    }

    #[test]
    fn memberships_separate_disconnected_cliques() {
        let g = two_cliques(6);
        let m = spectral_memberships(&g, 2, &EigenOptions::default()).unwrap();
        let labels = cluster_memberships(&m, 2, 50);
        let truth: Vec<usize> = (0..12).map(|i| i / 6).collect();
        let agree = labels.iter().zip(&truth).filter(|(a, b)| a == b).count();
        let agreement = agree.max(12 - agree) as f64 / 12.0;
        assert!(agreement >= 0.95);
    }

    #[test]
    fn complete_graph_parametric_equals_unadjusted() {
        let g = Graph::complete(8);
        let (v, y) = obs(vec![0.1, 0.4, 0.3, 0.9, 0.5, 0.2, 0.8, 0.6], vec![1.0, 0.3, 2.0, 1.7, 0.4, 0.9, 2.2, 1.1]);
        let p = parametric_baseline(&g, &v, &y, 1, None, &EigenOptions::default()).unwrap();
        let u = unadjusted_ols(&v, &y, None).unwrap();
        assert!((p.t_star_contrast - u.t_star_contrast).abs() < 1e-10);
    }

    #[test]
    fn default_community_count() {
        assert_eq!(default_communities(2000, 128), 100);
        assert_eq!(default_communities(100_000, 128), 128);
        assert_eq!(default_communities(10, 128), 1);
    }
}
