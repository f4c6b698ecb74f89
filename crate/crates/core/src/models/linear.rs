//! Linear-family regressors. Every solver centers X and y so the
//! intercept is fitted exactly and never penalized.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NIPALS_TOL: f64 = 1e-10;
pub const NIPALS_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.intercept + (0..x.ncols()).map(|j| x[(i, j)] * self.coef[j]).sum::<f64>())
            .collect()
    }

    fn from_centered(c: &Centered, w: DVector<f64>) -> Self {
        let intercept = c.y_mean - c.x_mean.dot(&w);
        Self { intercept, coef: w.iter().copied().collect() }
    }
}

struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: DVector<f64>,
    y_mean: f64,
}

fn center(x: &DMatrix<f64>, y: &[f64]) -> Result<Centered> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("X has {} rows but y has {} values", x.nrows(), y.len())));
    }
    if x.nrows() == 0 {
        return Err(Error::Model("cannot fit on zero samples".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Model("training data contains non-finite values".into()));
    }
    let n = x.nrows() as f64;
    let x_mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let y_mean = y.iter().sum::<f64>() / n;
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_mean[j]);
    }
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    Ok(Centered { x: xc, y: yc, x_mean, y_mean })
}

/// Singular values sorted descending, with matching U columns and V rows.
struct SortedSvd {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v_t: DMatrix<f64>,
}

fn sorted_svd(x: &DMatrix<f64>) -> Result<SortedSvd> {
    let svd = SVD::try_new(x.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Model("singular value decomposition did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    Ok(SortedSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |i, k| u[(i, order[k])]),
        s: order.iter().map(|&k| svd.singular_values[k]).collect(),
        v_t: DMatrix::from_fn(order.len(), v_t.ncols(), |k, j| v_t[(order[k], j)]),
    })
}

fn numerical_rank(s: &[f64], rows: usize, cols: usize) -> usize {
    let tol = s.first().copied().unwrap_or(0.0) * rows.max(cols) as f64 * f64::EPSILON;
    s.iter().filter(|&&v| v > tol).count()
}

/// Ordinary least squares through a QR factorization; falls back to the
/// minimum-norm SVD solution (returning a warning) when X is rank deficient.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<(LinearModel, Option<String>)> {
    let c = center(x, y)?;
    let (w, warning) = least_squares(&c.x, &c.y)?;
    Ok((LinearModel::from_centered(&c, w), warning))
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, Option<String>)> {
    let (n, p) = x.shape();
    if p == 0 {
        return Ok((DVector::zeros(0), None));
    }
    let svd = sorted_svd(x)?;
    let rank = numerical_rank(&svd.s, n, p);
    if rank == p {
        let qr = x.clone().qr();
        let qty = qr.q().transpose() * y;
        let w = qr
            .r()
            .solve_upper_triangular(&qty)
            .ok_or_else(|| Error::Model("triangular solve failed".into()))?;
        return Ok((w, None));
    }
    let w = pseudo_solve(&svd, y, |s| if s > 0.0 { 1.0 / s } else { 0.0 }, rank);
    Ok((w, Some(format!("design matrix has rank {rank} < {p} columns; using minimum-norm solution"))))
}

/// `V diag(f(s)) U^T y` over the leading `rank` singular triplets.
fn pseudo_solve(svd: &SortedSvd, y: &DVector<f64>, f: impl Fn(f64) -> f64, rank: usize) -> DVector<f64> {
    let p = svd.v_t.ncols();
    let mut w = DVector::zeros(p);
    for k in 0..rank {
        let coef = svd.u.column(k).dot(y) * f(svd.s[k]);
        w += svd.v_t.row(k).transpose() * coef;
    }
    w
}

/// Minimizes ‖Xw + b − y‖² + α‖w‖².
pub fn ridge(x: &DMatrix<f64>, y: &[f64], alpha: f64) -> Result<LinearModel> {
    if !(alpha >= 0.0) {
        return Err(Error::Model(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    let c = center(x, y)?;
    let svd = sorted_svd(&c.x)?;
    let rank = if alpha > 0.0 { svd.s.len() } else { numerical_rank(&svd.s, c.x.nrows(), c.x.ncols()) };
    let w = pseudo_solve(
        &svd,
        &c.y,
        |s| {
            let d = s * s + alpha;
            if d > 0.0 {
                s / d
            } else {
                0.0
            }
        },
        rank,
    );
    Ok(LinearModel::from_centered(&c, w))
}

fn check_components(k: usize, x: &DMatrix<f64>) -> Result<()> {
    let limit = x.nrows().min(x.ncols());
    if k == 0 || k > limit {
        return Err(Error::Model(format!("n_components must lie in 1..={limit}, got {k}")));
    }
    Ok(())
}

/// Principal component regression on the top `k` right singular vectors.
pub fn pcr(x: &DMatrix<f64>, y: &[f64], k: usize) -> Result<(LinearModel, Option<String>)> {
    check_components(k, x)?;
    let c = center(x, y)?;
    let svd = sorted_svd(&c.x)?;
    let v_k = svd.v_t.rows(0, k).transpose();
    let scores = &c.x * &v_k;
    let (gamma, warning) = least_squares(&scores, &c.y)?;
    Ok((LinearModel::from_centered(&c, v_k * gamma), warning))
}

/// Partial least squares (PLS1) by NIPALS with deflation of X only.
pub fn plsr(x: &DMatrix<f64>, y: &[f64], k: usize) -> Result<(LinearModel, Option<String>)> {
    check_components(k, x)?;
    let c = center(x, y)?;
    let p = c.x.ncols();
    let mut xk = c.x.clone();
    let mut ws: Vec<DVector<f64>> = Vec::new();
    let mut ps: Vec<DVector<f64>> = Vec::new();
    let mut qs: Vec<f64> = Vec::new();
    let mut warning = None;
    for comp in 0..k {
        let mut u = c.y.clone();
        let mut t_old: Option<DVector<f64>> = None;
        let mut w = DVector::zeros(p);
        let mut t = DVector::zeros(xk.nrows());
        let mut q = 0.0;
        for _ in 0..NIPALS_MAX_ITER {
            w = xk.transpose() * &u;
            let norm = w.norm();
            if norm < 1e-14 {
                break;
            }
            w /= norm;
            t = &xk * &w;
            let tt = t.dot(&t);
            q = c.y.dot(&t) / tt;
            u = &c.y * (1.0 / q);
            let done = t_old.as_ref().is_some_and(|o| (&t - o).norm() <= NIPALS_TOL * t.norm());
            if done {
                break;
            }
            t_old = Some(t.clone());
        }
        let tt = t.dot(&t);
        if !(tt > 1e-24) || !q.is_finite() {
            warning = Some(format!("only {comp} PLS components carry signal; stopped early"));
            break;
        }
        let load = xk.transpose() * &t / tt;
        xk -= &t * load.transpose();
        ws.push(w);
        ps.push(load);
        qs.push(q);
    }
    if ws.is_empty() {
        return Ok((LinearModel::from_centered(&c, DVector::zeros(p)), warning));
    }
    let w_mat = DMatrix::from_columns(&ws);
    let p_mat = DMatrix::from_columns(&ps);
    let ptw = p_mat.transpose() * &w_mat;
    let inv = ptw.try_inverse().ok_or_else(|| Error::Model("PLS loading matrix is singular".into()))?;
    let b = w_mat * inv * DVector::from_vec(qs);
    Ok((LinearModel::from_centered(&c, b), warning))
}
