//! Small dense linear algebra: least squares with collinear-column dropping,
//! and leading eigenvectors of a normalized adjacency matrix.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

/// Columns whose residual norm after projection on the previously kept
/// columns falls below this fraction of their own norm are dropped.
pub const COLLINEARITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// One entry per input column; `None` for dropped columns.
    pub coefficients: Vec<Option<f64>>,
    /// `None` for dropped columns and when no residual degrees of freedom remain.
    pub std_errors: Vec<Option<f64>>,
    /// Indices of columns removed as collinear.
    pub dropped: Vec<usize>,
    pub residual_variance: f64,
    pub n_obs: usize,
}

impl OlsFit {
    pub fn coefficient(&self, col: usize) -> Option<f64> {
        self.coefficients.get(col).copied().flatten()
    }
}

/// Least squares of `y` on the given columns (no implicit intercept) via
/// modified Gram-Schmidt with reorthogonalization. Columns are processed in
/// order, so earlier columns take precedence when a set is collinear.
pub fn ols(columns: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let p = columns.len();
    for c in columns {
        if c.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.len() });
        }
    }
    if columns.iter().flatten().chain(y).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("regression input".into()));
    }

    let mut q_cols: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    // r_full[k] holds the projection coefficients of kept column k
    let mut r_full: Vec<Vec<f64>> = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let norm0 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut v = col.clone();
        let mut r = vec![0.0; q_cols.len() + 1];
        for _ in 0..2 {
            for (k, qk) in q_cols.iter().enumerate() {
                let proj: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
                r[k] += proj;
                v.iter_mut().zip(qk).for_each(|(x, q)| *x -= proj * q);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= COLLINEARITY_TOL * norm0 {
            dropped.push(j);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        r[q_cols.len()] = norm;
        q_cols.push(v);
        kept.push(j);
        r_full.push(r);
    }

    let k = kept.len();
    if k == 0 {
        return Err(Error::SingularDesign("no linearly independent columns".into()));
    }
    let mut rmat = DMatrix::<f64>::zeros(k, k);
    for (col, r) in r_full.iter().enumerate() {
        for (row, &val) in r.iter().enumerate() {
            rmat[(row, col)] = val;
        }
    }
    let qty = DVector::from_iterator(k, q_cols.iter().map(|q| q.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()));
    let beta = rmat
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;

    let mut ss = 0.0;
    for i in 0..n {
        let fitted: f64 = kept.iter().enumerate().map(|(t, &j)| beta[t] * columns[j][i]).sum();
        ss += (y[i] - fitted).powi(2);
    }
    let dof = n.saturating_sub(k);
    let residual_variance = if dof > 0 { ss / dof as f64 } else { f64::NAN };

    // Cov(beta) = sigma^2 R^-1 R^-T
    let rinv = rmat
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::SingularDesign("triangular inverse failed".into()))?;
    let mut coefficients = vec![None; p];
    let mut std_errors = vec![None; p];
    for (t, &j) in kept.iter().enumerate() {
        coefficients[j] = Some(beta[t]);
        let row_norm2: f64 = rinv.row(t).iter().map(|x| x * x).sum();
        std_errors[j] = (dof > 0).then(|| (residual_variance * row_norm2).sqrt());
    }
    Ok(OlsFit { coefficients, std_errors, dropped, residual_variance, n_obs: n })
}

/// `D^{-1/2} A D^{-1/2}` applied to the columns of `x`. Isolated nodes map
/// to zero rows.
fn normalized_adjacency_mul(g: &Graph, inv_sqrt_deg: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.n();
    let b = x.ncols();
    let mut out = DMatrix::<f64>::zeros(n, b);
    for c in 0..b {
        let xc = x.column(c);
        let mut oc = out.column_mut(c);
        for i in 0..n {
            if inv_sqrt_deg[i] == 0.0 {
                continue;
            }
            let s: f64 = g.neighbors(i).iter().map(|&j| inv_sqrt_deg[j] * xc[j]).sum();
            oc[i] = inv_sqrt_deg[i] * s;
        }
    }
    out
}

/// Cholesky-QR applied twice; falls back to Gram-Schmidt when the Gram
/// matrix is numerically singular.
fn orthonormalize(m: &mut DMatrix<f64>) {
    for _ in 0..2 {
        if !cholesky_qr(m) {
            gram_schmidt(m);
            return;
        }
    }
}

fn cholesky_qr(m: &mut DMatrix<f64>) -> bool {
    let b = m.ncols();
    let gram = m.transpose() * &*m;
    let Some(chol) = gram.cholesky() else { return false };
    let l = chol.l();
    let diag_max = l.diagonal().max();
    if !(l.diagonal().min() > 1e-7 * diag_max) {
        return false;
    }
    let Some(rinv) = l.transpose().solve_upper_triangular(&DMatrix::identity(b, b)) else { return false };
    *m = &*m * rinv;
    true
}

fn gram_schmidt(m: &mut DMatrix<f64>) {
    let b = m.ncols();
    for c in 0..b {
        for _ in 0..2 {
            for k in 0..c {
                let proj = m.column(k).dot(&m.column(c));
                let qk = m.column(k).clone_owned();
                m.column_mut(c).axpy(-proj, &qk, 1.0);
            }
        }
        let norm = m.column(c).norm();
        if norm > 1e-300 {
            m.column_mut(c).scale_mut(1.0 / norm);
        } else {
            m.column_mut(c).fill(0.0);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Descending.
    pub values: Vec<f64>,
    /// `n x k`, column `t` pairs with `values[t]`.
    pub vectors: DMatrix<f64>,
    /// Largest residual `||N x - theta x||` over the returned pairs.
    pub max_residual: f64,
    pub iterations: usize,
}

/// Options for [`top_eigenvectors`].
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    /// Use a dense decomposition at or below this node count.
    pub dense_threshold: usize,
    pub oversample: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { dense_threshold: 400, oversample: 10, max_iter: 200, tol: 1e-8, seed: 0x5eed }
    }
}

fn inv_sqrt_degrees(g: &Graph) -> Vec<f64> {
    g.degrees().iter().map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() }).collect()
}

/// Exact decomposition of the dense normalized adjacency; all `n` pairs.
pub fn dense_eigenpairs(g: &Graph) -> Result<Eigenpairs> {
    let n = g.n();
    let isd = inv_sqrt_degrees(g);
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, j) in g.edges() {
        let w = isd[i] * isd[j];
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    let eig = a.clone().try_symmetric_eigen(1e-14, 10_000).ok_or_else(|| Error::Eigen("symmetric QR did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let values: Vec<f64> = order.iter().map(|&t| eig.eigenvalues[t]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);
    let resid = &a * &vectors - &vectors * DMatrix::from_diagonal(&DVector::from_vec(values.clone()));
    let max_residual = resid.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(Eigenpairs { values, vectors, max_residual, iterations: 0 })
}

/// The `k` algebraically largest eigenpairs of `D^{-1/2} A D^{-1/2}`.
///
/// Small graphs use a dense decomposition. Larger graphs use block subspace
/// iteration with Rayleigh-Ritz on the shifted operator `(N + I) / 2`, whose
/// spectrum lies in `[0, 1]` with the same ordering. Iteration stops when all
/// `k` residuals are below `tol` or after `max_iter` sweeps; pairs inside a
/// dense part of the spectrum may be left unconverged, which is reported via
/// `max_residual` rather than treated as failure.
pub fn top_eigenvectors(g: &Graph, k: usize, opts: &EigenOptions) -> Result<Eigenpairs> {
    let n = g.n();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot extract {k} eigenvectors from {n} nodes")));
    }
    if n <= opts.dense_threshold || k + opts.oversample >= n {
        let full = dense_eigenpairs(g)?;
        let vectors = full.vectors.columns(0, k).clone_owned();
        let values = full.values[..k].to_vec();
        return Ok(Eigenpairs { values, vectors, max_residual: full.max_residual, iterations: 0 });
    }

    let isd = inv_sqrt_degrees(g);
    let b = k + opts.oversample;
    let mut rng = rng::stream(opts.seed, "eigen");
    let mut q = DMatrix::<f64>::from_fn(n, b, |_, _| StandardNormal.sample(&mut rng));
    orthonormalize(&mut q);

    let mut theta = vec![0.0; b];
    let mut max_residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        // z = (N + I)/2 q
        let mut z = normalized_adjacency_mul(g, &isd, &q);
        z += &q;
        z.scale_mut(0.5);
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let eig = h.try_symmetric_eigen(1e-14, 10_000).ok_or_else(|| Error::Eigen("Rayleigh-Ritz step did not converge".into()))?;
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
        let u = DMatrix::from_fn(b, b, |r, c| eig.eigenvectors[(r, order[c])]);
        theta = order.iter().map(|&t| eig.eigenvalues[t]).collect();
        let q_rot = &q * &u;
        let z_rot = &z * &u;
        max_residual = (0..k)
            .map(|c| (z_rot.column(c) - q_rot.column(c) * theta[c]).norm() * 2.0)
            .fold(0.0, f64::max);
        if !max_residual.is_finite() {
            return Err(Error::Eigen("non-finite residual".into()));
        }
        q = q_rot;
        if max_residual < opts.tol {
            break;
        }
        let mut next = z_rot;
        orthonormalize(&mut next);
        q = next;
    }
    if max_residual >= opts.tol {
        log::debug!("subspace iteration stopped after {iterations} sweeps, residual {max_residual:.3e}");
    }
    let values = theta[..k].iter().map(|t| 2.0 * t - 1.0).collect();
    let vectors = q.columns(0, k).clone_owned();
    Ok(Eigenpairs { values, vectors, max_residual, iterations })
}
