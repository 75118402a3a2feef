//! Masked covariate matrices and the dataset container.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Value stored in unobserved cells. Any arithmetic that touches it turns
/// into NaN, so an accidental read cannot go unnoticed.
pub const MISSING_SENTINEL: f64 = f64::NAN;

/// A real matrix with an observation mask (`true` = observed).
#[derive(Debug, Clone)]
pub struct MaskedMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

// Masked cells hold NaN, so equality compares the mask and observed cells only.
impl PartialEq for MaskedMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask
            && self.values.iter().zip(other.values.iter()).zip(self.mask.iter()).all(|((a, b), &m)| !m || a == b)
    }
}

impl MaskedMatrix {
    pub fn new(mut values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Dimension(format!(
                "values are {:?} but mask is {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        for (v, &observed) in values.iter_mut().zip(mask.iter()) {
            if observed {
                if !v.is_finite() {
                    return Err(Error::InvalidSpec("observed entry is not finite".into()));
                }
            } else {
                *v = MISSING_SENTINEL;
            }
        }
        Ok(Self { values, mask })
    }

    pub fn fully_observed(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(values, mask)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask[(i, j)].then(|| self.values[(i, j)])
    }

    /// Observed value; reading a masked cell is a bug.
    pub fn observed(&self, i: usize, j: usize) -> f64 {
        debug_assert!(self.mask[(i, j)], "read of masked cell ({i}, {j})");
        self.values[(i, j)]
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    /// Values with every missing cell replaced by `fill`.
    pub fn values_or(&self, fill: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| self.get(i, j).unwrap_or(fill))
    }

    pub fn row(&self, i: usize) -> MaskedRow {
        MaskedRow {
            values: (0..self.ncols()).map(|j| self.get(i, j).unwrap_or(MISSING_SENTINEL)).collect(),
            mask: (0..self.ncols()).map(|j| self.mask[(i, j)]).collect(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> MaskedMatrix {
        let values = self.values.select_rows(rows);
        let mask = DMatrix::from_fn(rows.len(), self.ncols(), |i, j| self.mask[(rows[i], j)]);
        MaskedMatrix { values, mask }
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// One corrupted covariate row.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRow {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl MaskedRow {
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::Dimension("row values and mask differ in length".into()));
        }
        let values = values
            .into_iter()
            .zip(&mask)
            .map(|(v, &m)| if m { v } else { MISSING_SENTINEL })
            .collect();
        Ok(Self { values, mask })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Outcome, treatment, corrupted covariates and optional extras for `n` units.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedDataset {
    pub y: Option<Vec<f64>>,
    pub d: Option<Vec<f64>>,
    /// Instrument for LATE / partially linear IV.
    pub instrument: Option<Vec<f64>>,
    pub z: MaskedMatrix,
    pub weights: Option<Vec<f64>>,
    /// Localization covariate for heterogeneous effects.
    pub v: Option<Vec<f64>>,
    pub theta_true: Option<f64>,
}

impl CorruptedDataset {
    pub fn covariates_only(z: MaskedMatrix) -> Self {
        Self { y: None, d: None, instrument: None, z, weights: None, v: None, theta_true: None }
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let vectors = [
            ("Y", &self.y),
            ("D", &self.d),
            ("U", &self.instrument),
            ("weights", &self.weights),
            ("V", &self.v),
        ];
        for (name, v) in vectors {
            if let Some(v) = v {
                if v.len() != n {
                    return Err(Error::Dimension(format!("{name} has length {} but Z has {n} rows", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidSpec(format!("{name} contains non-finite values")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_cells_carry_sentinel() {
        let values = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let mask = DMatrix::from_row_slice(1, 2, &[true, false]);
        let m = MaskedMatrix::new(values, mask).unwrap();
        assert_eq!(m.get(0, 0), Some(1.0));
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.values_or(0.0)[(0, 1)], 0.0);
        assert!(m.row(0).values[1].is_nan());
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "read of masked cell")]
    fn reading_masked_cell_traps() {
        let m = MaskedMatrix::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, false)).unwrap();
        let _ = m.observed(0, 0);
    }

    #[test]
    fn observed_nan_rejected() {
        let values = DMatrix::from_element(1, 1, f64::NAN);
        assert!(MaskedMatrix::fully_observed(values).is_err());
    }

    #[test]
    fn dataset_length_mismatch() {
        let z = MaskedMatrix::fully_observed(DMatrix::zeros(3, 2)).unwrap();
        let mut ds = CorruptedDataset::covariates_only(z);
        ds.y = Some(vec![0.0; 2]);
        assert!(matches!(ds.validate(), Err(Error::Dimension(_))));
    }
}
