//! Dense linear-algebra helpers shared by the cleaning and fitting steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used for every numerical-rank decision.
pub const RANK_TOL: f64 = 1e-8;

/// Default relative cutoff for pseudoinverse truncation.
pub const PINV_TOL: f64 = 1e-10;

/// Thin SVD `M = U diag(s) Vᵀ` with `s` nonincreasing.
///
/// `u` is `rows × q`, `v` is `cols × q`, `q = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension(format!("cannot decompose a {rows}x{cols} matrix")));
    }
    let non_finite = m.iter().filter(|v| !v.is_finite()).count();
    let fail = |message: &str| Error::Numerical {
        message: message.to_string(),
        rows,
        cols,
        max_abs: m.iter().fold(0.0_f64, |a, v| a.max(v.abs())),
        non_finite,
    };
    if non_finite > 0 {
        return Err(fail("matrix has non-finite entries"));
    }
    // nalgebra's bidiagonal SVD returns wrong factors for some exactly
    // rank-deficient inputs, which cleaned matrices and interacted designs
    // always are; faer's does not.
    let f = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = f.thin_svd().map_err(|_| fail("SVD did not converge"))?;
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let q = s.nrows();

    // Stable descending sort: ties keep decomposition order.
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));

    let u_sorted = DMatrix::from_fn(rows, q, |i, j| u[(i, order[j])]);
    let v_sorted = DMatrix::from_fn(cols, q, |i, j| v[(i, order[j])]);
    let s_sorted = order.iter().map(|&j| s[j]).collect();
    Ok(ThinSvd { u: u_sorted, singular_values: s_sorted, v: v_sorted })
}

impl ThinSvd {
    /// Rank-k reconstruction `U_k S_k V_kᵀ`.
    pub fn truncate(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.singular_values.len());
        let u_k = self.u.columns(0, k);
        let v_k = self.v.columns(0, k);
        let s_k = DMatrix::from_diagonal(&DVector::from_iterator(
            k,
            self.singular_values[..k].iter().copied(),
        ));
        u_k * s_k * v_k.transpose()
    }

    /// Number of singular values above `rel_tol × s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        numerical_rank(&self.singular_values, rel_tol)
    }
}

pub fn numerical_rank(singular_values: &[f64], rel_tol: f64) -> usize {
    let top = singular_values.iter().copied().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Minimal-norm least squares `argmin ‖b − A x‖` through the truncated SVD
/// of `A`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub rank: usize,
    /// Smallest singular value kept by the truncation.
    pub min_retained: f64,
}

pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> Result<LeastSquares> {
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows but response has {}",
            a.nrows(),
            b.len()
        )));
    }
    let svd = thin_svd(a)?;
    let rank = svd.rank(rel_tol);
    if rank == 0 {
        return Err(Error::DegenerateFit("design matrix is numerically zero".into()));
    }
    let mut solution = DVector::zeros(a.ncols());
    for j in 0..rank {
        let coef = svd.u.column(j).dot(b) / svd.singular_values[j];
        solution.axpy(coef, &svd.v.column(j), 1.0);
    }
    Ok(LeastSquares { solution, rank, min_retained: svd.singular_values[rank - 1] })
}

/// `G† m` for a symmetric positive semidefinite `G`.
pub fn psd_pinv_apply(g: &DMatrix<f64>, m: &DVector<f64>, rel_tol: f64) -> Result<LeastSquares> {
    if !g.is_square() || g.nrows() != m.len() {
        return Err(Error::Dimension(format!(
            "gram is {}x{}, moment has length {}",
            g.nrows(),
            g.ncols(),
            m.len()
        )));
    }
    // For a PSD matrix the SVD coincides with the eigendecomposition.
    let svd = thin_svd(g)?;
    let rank = svd.rank(rel_tol);
    if rank == 0 {
        return Err(Error::DegenerateFit("gram matrix is numerically zero".into()));
    }
    let mut solution = DVector::zeros(g.ncols());
    for j in 0..rank {
        let coef = svd.u.column(j).dot(m) / svd.singular_values[j];
        solution.axpy(coef, &svd.v.column(j), 1.0);
    }
    Ok(LeastSquares { solution, rank, min_retained: svd.singular_values[rank - 1] })
}

/// Pairwise (cascade) summation. Summation order depends only on the
/// length of the input, so results are reproducible.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Variance with divisor `n`.
pub fn population_variance(values: &[f64]) -> f64 {
    let mu = mean(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - mu) * (v - mu)).collect();
    mean(&dev)
}

pub fn population_covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    mean(&prod)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Squared (2,∞) norm: the largest squared column norm.
pub fn two_inf_sq(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max)
}
