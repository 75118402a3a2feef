//! Data cleaning: estimate observation rates, fill missing cells with zero and
//! rescale, then keep the top `k` principal components.
//!
//! Only the training fold is ever cleaned. Test rows are filled with the
//! training rates (see [`fill_row`]) and never projected.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{MaskedMatrix, MaskedRow};
use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};

/// Everything learned from the training fold that later steps need.
#[derive(Debug, Clone, Serialize)]
pub struct CleaningModel {
    /// Estimated observation rates, each in `[1/m_train, 1]`.
    pub rho_hat: Vec<f64>,
    pub k: usize,
    /// Full spectrum of the filled training matrix, nonincreasing.
    pub singular_values: Vec<f64>,
    #[serde(skip)]
    pub left_vectors: DMatrix<f64>,
    #[serde(skip)]
    pub right_vectors: DMatrix<f64>,
    pub m_train: usize,
}

/// Rank-`k` reconstruction of the filled training covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanedMatrix {
    pub values: DMatrix<f64>,
}

/// `ρ̂_j = max(#observed_j / m, 1/m)`.
pub fn estimate_rates(z: &MaskedMatrix) -> Result<Vec<f64>> {
    let (m, p) = z.shape();
    if m == 0 || p == 0 {
        return Err(Error::Dimension(format!("cannot estimate rates of a {m}x{p} matrix")));
    }
    let floor = 1.0 / m as f64;
    Ok((0..p)
        .map(|j| {
            let observed = (0..m).filter(|&i| z.is_observed(i, j)).count();
            (observed as f64 / m as f64).max(floor)
        })
        .collect())
}

/// Observed cells become `z / ρ̂_j`, missing cells become 0. The rates may
/// come from a different fold than `z`.
pub fn fill(z: &MaskedMatrix, rho_hat: &[f64]) -> Result<DMatrix<f64>> {
    let (m, p) = z.shape();
    if rho_hat.len() != p {
        return Err(Error::Dimension(format!("{} rates for {p} columns", rho_hat.len())));
    }
    Ok(DMatrix::from_fn(m, p, |i, j| if z.is_observed(i, j) { z.observed(i, j) / rho_hat[j] } else { 0.0 }))
}

pub fn fill_row(row: &MaskedRow, rho_hat: &[f64]) -> Result<Vec<f64>> {
    if row.len() != rho_hat.len() {
        return Err(Error::Dimension(format!("row has {} entries, {} rates", row.len(), rho_hat.len())));
    }
    Ok(row
        .values
        .iter()
        .zip(&row.mask)
        .zip(rho_hat)
        .map(|((&v, &observed), &rho)| if observed { v / rho } else { 0.0 })
        .collect())
}

/// Hard singular value thresholding: keep the first `k` components of the
/// SVD of `m`. With tied singular values the decomposition order decides.
///
/// The returned model carries unit rates; [`fit_cleaning`] replaces them.
pub fn pca_truncate(m: &DMatrix<f64>, k: usize) -> Result<(CleanedMatrix, CleaningModel)> {
    let (rows, cols) = m.shape();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::Config(format!("k={k} must lie in 1..={}", rows.min(cols))));
    }
    let svd = linalg::thin_svd(m)?;
    Ok(truncate_with(svd, k, vec![1.0; cols], rows))
}

fn truncate_with(svd: ThinSvd, k: usize, rho_hat: Vec<f64>, m_train: usize) -> (CleanedMatrix, CleaningModel) {
    let values = svd.truncate(k);
    let model = CleaningModel {
        rho_hat,
        k,
        left_vectors: svd.u.columns(0, k).into_owned(),
        right_vectors: svd.v.columns(0, k).into_owned(),
        singular_values: svd.singular_values,
        m_train,
    };
    (CleanedMatrix { values }, model)
}

/// Estimate rates, fill, and truncate the training fold.
pub fn fit_cleaning(z_train: &MaskedMatrix, k: usize) -> Result<(CleanedMatrix, CleaningModel)> {
    let (m, p) = z_train.shape();
    if k == 0 || k > m.min(p) {
        return Err(Error::Config(format!("k={k} must lie in 1..={} for a {m}x{p} training fold", m.min(p))));
    }
    let rho_hat = estimate_rates(z_train)?;
    let filled = fill(z_train, &rho_hat)?;
    let svd = linalg::thin_svd(&filled)?;
    Ok(truncate_with(svd, k, rho_hat, m))
}

/// Singular values of the matrix after filling it with its own rates.
pub fn scree(z: &MaskedMatrix) -> Result<Vec<f64>> {
    let rho_hat = estimate_rates(z)?;
    scree_dense(&fill(z, &rho_hat)?)
}

pub fn scree_dense(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(linalg::thin_svd(m)?.singular_values)
}

/// Elbow heuristic: the number of singular values above `fraction` of the
/// largest one. Advisory only; nothing applies it automatically.
pub fn suggest_k(singular_values: &[f64], fraction: f64) -> usize {
    let top = singular_values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    singular_values.iter().take_while(|&&s| s > fraction * top).count()
}

pub const SUGGEST_K_FRACTION: f64 = 0.2;
