//! Technical regressors `b(d, x)`.
//!
//! Every layout is at most linear in the corrupted covariates `x`; the
//! treatment `d` is uncorrupted and may enter nonlinearly. Column order is
//! fixed because it defines coefficient indexing downstream:
//!
//! | kind                   | layout                          | width      |
//! |------------------------|---------------------------------|------------|
//! | `Identity`             | `x`                             | `p`        |
//! | `Interacted`           | `(d·x, (1−d)·x)`                | `2p`       |
//! | `PartiallyLinear`      | `(d, x)`                        | `1 + p`    |
//! | `QuadraticInteracted`  | `(1, d, d², x, d·x, d²·x)`      | `3 + 3p`   |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictKind {
    Identity,
    Interacted,
    #[serde(alias = "plinear")]
    PartiallyLinear,
    #[serde(alias = "quad")]
    QuadraticInteracted,
}

impl DictKind {
    pub fn output_width(self, p: usize) -> usize {
        match self {
            DictKind::Identity => p,
            DictKind::Interacted => 2 * p,
            DictKind::PartiallyLinear => 1 + p,
            DictKind::QuadraticInteracted => 3 + 3 * p,
        }
    }

    /// Highest total polynomial degree of any basis function in `(d, x)`.
    pub fn degree(self) -> u32 {
        match self {
            DictKind::Identity | DictKind::PartiallyLinear => 1,
            DictKind::Interacted => 2,
            DictKind::QuadraticInteracted => 3,
        }
    }

    /// True if the layout contains a constant slot.
    pub fn has_constant(self) -> bool {
        matches!(self, DictKind::QuadraticInteracted)
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            DictKind::Identity => "identity",
            DictKind::Interacted => "interacted",
            DictKind::PartiallyLinear => "plinear",
            DictKind::QuadraticInteracted => "quad",
        }
    }
}

impl fmt::Display for DictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for DictKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(DictKind::Identity),
            "interacted" => Ok(DictKind::Interacted),
            "plinear" | "partially_linear" => Ok(DictKind::PartiallyLinear),
            "quad" | "quadratic_interacted" => Ok(DictKind::QuadraticInteracted),
            other => Err(Error::Config(format!("unknown dictionary '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionary {
    pub kind: DictKind,
    pub p_in: usize,
    pub p_out: usize,
}

impl Dictionary {
    pub fn new(kind: DictKind, p_in: usize) -> Self {
        Self { kind, p_in, p_out: kind.output_width(p_in) }
    }

    pub fn apply(&self, d: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.p_out];
        self.apply_into(d, x, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, d: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.p_in;
        if x.len() != p {
            return Err(Error::Dimension(format!("dictionary expects {p} covariates, got {}", x.len())));
        }
        if out.len() != self.p_out {
            return Err(Error::Dimension(format!("output buffer has {} slots, need {}", out.len(), self.p_out)));
        }
        match self.kind {
            DictKind::Identity => out.copy_from_slice(x),
            DictKind::Interacted => {
                for (j, &v) in x.iter().enumerate() {
                    out[j] = d * v;
                    out[p + j] = (1.0 - d) * v;
                }
            }
            DictKind::PartiallyLinear => {
                out[0] = d;
                out[1..].copy_from_slice(x);
            }
            DictKind::QuadraticInteracted => {
                let d2 = d * d;
                out[0] = 1.0;
                out[1] = d;
                out[2] = d2;
                for (j, &v) in x.iter().enumerate() {
                    out[3 + j] = v;
                    out[3 + p + j] = d * v;
                    out[3 + 2 * p + j] = d2 * v;
                }
            }
        }
        Ok(())
    }

    /// `∂b/∂d` at `(d, x)`.
    pub fn derivative(&self, d: f64, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.p_in;
        if x.len() != p {
            return Err(Error::Dimension(format!("dictionary expects {p} covariates, got {}", x.len())));
        }
        let mut out = vec![0.0; self.p_out];
        match self.kind {
            DictKind::Identity => {}
            DictKind::Interacted => {
                out[..p].copy_from_slice(x);
                for (o, &v) in out[p..].iter_mut().zip(x) {
                    *o = -v;
                }
            }
            DictKind::PartiallyLinear => out[0] = 1.0,
            DictKind::QuadraticInteracted => {
                out[1] = 1.0;
                out[2] = 2.0 * d;
                for (j, &v) in x.iter().enumerate() {
                    out[3 + p + j] = v;
                    out[3 + 2 * p + j] = 2.0 * d * v;
                }
            }
        }
        Ok(out)
    }

    /// Covariate feeding each output slot linearly, or `None` for slots that
    /// depend on `d` alone.
    pub fn slot_source(&self, slot: usize) -> Option<usize> {
        let p = self.p_in;
        match self.kind {
            DictKind::Identity => Some(slot),
            DictKind::Interacted => Some(slot % p),
            DictKind::PartiallyLinear => slot.checked_sub(1),
            DictKind::QuadraticInteracted => slot.checked_sub(3).map(|s| s % p),
        }
    }

    pub fn apply_matrix(&self, d: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if d.len() != x.nrows() {
            return Err(Error::Dimension(format!("{} treatments for {} rows", d.len(), x.nrows())));
        }
        if x.ncols() != self.p_in {
            return Err(Error::Dimension(format!("dictionary expects {} covariates, got {}", self.p_in, x.ncols())));
        }
        let mut out = DMatrix::zeros(x.nrows(), self.p_out);
        let mut row = vec![0.0; self.p_in];
        let mut buf = vec![0.0; self.p_out];
        for i in 0..x.nrows() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(i, j)];
            }
            self.apply_into(d[i], &row, &mut buf)?;
            for (j, &v) in buf.iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

pub type RowFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// User-supplied row map. Usable for feature construction only; the
/// fitting pipeline accepts [`Dictionary`] alone because moments and
/// implicit cleaning rely on the known layouts.
#[derive(Clone)]
pub struct CustomDictionary {
    pub p_in: usize,
    pub p_out: usize,
    f: Arc<RowFn>,
}

impl CustomDictionary {
    pub fn new(p_in: usize, p_out: usize, f: Arc<RowFn>) -> Self {
        Self { p_in, p_out, f }
    }

    pub fn apply(&self, d: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p_in {
            return Err(Error::Dimension(format!("dictionary expects {} covariates, got {}", self.p_in, x.len())));
        }
        let out = (self.f)(d, x);
        if out.len() != self.p_out {
            return Err(Error::Dimension(format!("row function returned {} values, declared {}", out.len(), self.p_out)));
        }
        Ok(out)
    }

    pub fn apply_matrix(&self, d: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if d.len() != x.nrows() {
            return Err(Error::Dimension(format!("{} treatments for {} rows", d.len(), x.nrows())));
        }
        let mut out = DMatrix::zeros(x.nrows(), self.p_out);
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            for (j, v) in self.apply(d[i], &row)?.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

impl fmt::Debug for CustomDictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDictionary").field("p_in", &self.p_in).field("p_out", &self.p_out).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn widths() {
        assert_eq!(Dictionary::new(DictKind::Identity, 4).p_out, 4);
        assert_eq!(Dictionary::new(DictKind::Interacted, 4).p_out, 8);
        assert_eq!(Dictionary::new(DictKind::PartiallyLinear, 4).p_out, 5);
        assert_eq!(Dictionary::new(DictKind::QuadraticInteracted, 4).p_out, 15);
    }

    #[test]
    fn interacted_layout() {
        let dict = Dictionary::new(DictKind::Interacted, 2);
        assert_eq!(dict.apply(1.0, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0, 0.0, 0.0]);
        assert_eq!(dict.apply(0.0, &[3.0, 4.0]).unwrap(), vec![0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn quadratic_layout() {
        let dict = Dictionary::new(DictKind::QuadraticInteracted, 1);
        assert_eq!(dict.apply(2.0, &[1.0]).unwrap(), vec![1.0, 2.0, 4.0, 1.0, 2.0, 4.0]);
        assert_eq!(dict.derivative(2.0, &[1.0]).unwrap(), vec![0.0, 1.0, 4.0, 0.0, 1.0, 4.0]);
    }

    #[test]
    fn length_mismatch() {
        let dict = Dictionary::new(DictKind::Identity, 3);
        assert!(matches!(dict.apply(0.0, &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn matrix_matches_rowwise_loop() {
        let dict = Dictionary::new(DictKind::QuadraticInteracted, 2);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 3.0, -1.5, 0.25]);
        let d = [0.0, 1.0, 2.5];
        let b = dict.apply_matrix(&d, &x).unwrap();
        for i in 0..3 {
            let row = dict.apply(d[i], &[x[(i, 0)], x[(i, 1)]]).unwrap();
            for j in 0..dict.p_out {
                assert_eq!(b[(i, j)], row[j]);
            }
        }
    }

    #[test]
    fn identity_and_all_treated_blocks() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(Dictionary::new(DictKind::Identity, 2).apply_matrix(&[7.0, 8.0], &x).unwrap(), x);
        let b = Dictionary::new(DictKind::Interacted, 2).apply_matrix(&[1.0, 1.0], &x).unwrap();
        assert_eq!(b.columns(0, 2).into_owned(), x);
        assert!(b.columns(2, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slot_sources() {
        let dict = Dictionary::new(DictKind::QuadraticInteracted, 2);
        let sources: Vec<_> = (0..dict.p_out).map(|s| dict.slot_source(s)).collect();
        assert_eq!(sources, vec![None, None, None, Some(0), Some(1), Some(0), Some(1), Some(0), Some(1)]);
        let dict = Dictionary::new(DictKind::PartiallyLinear, 2);
        assert_eq!(dict.slot_source(0), None);
        assert_eq!(dict.slot_source(2), Some(1));
    }

    #[test]
    fn parse_names() {
        assert_eq!("plinear".parse::<DictKind>().unwrap(), DictKind::PartiallyLinear);
        assert_eq!("quad".parse::<DictKind>().unwrap(), DictKind::QuadraticInteracted);
        assert!("cubic".parse::<DictKind>().is_err());
    }

    #[test]
    fn custom_checks_declared_width() {
        let c = CustomDictionary::new(1, 2, Arc::new(|d, x| vec![d, x[0] * x[0]]));
        assert_eq!(c.apply(2.0, &[3.0]).unwrap(), vec![2.0, 9.0]);
        let bad = CustomDictionary::new(1, 3, Arc::new(|d, _| vec![d]));
        assert!(bad.apply(0.0, &[1.0]).is_err());
    }

    fn kind() -> impl Strategy<Value = DictKind> {
        prop_oneof![
            Just(DictKind::Identity),
            Just(DictKind::Interacted),
            Just(DictKind::PartiallyLinear),
            Just(DictKind::QuadraticInteracted),
        ]
    }

    proptest! {
        #[test]
        fn linear_in_covariates(
            kind in kind(),
            d in -3.0f64..3.0,
            x in prop::collection::vec(-5i32..5, 3),
            y in prop::collection::vec(-5i32..5, 3),
            a in -4i32..4,
            c in -4i32..4,
        ) {
            // Small integers keep every product exact in floating point.
            let dict = Dictionary::new(kind, 3);
            let d = (d * 4.0).round() / 4.0;
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let (a, c) = (f64::from(a), f64::from(c));
            let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + c * v).collect();
            let lhs = dict.apply(d, &combo).unwrap();
            let bx = dict.apply(d, &x).unwrap();
            let by = dict.apply(d, &y).unwrap();
            for s in 0..dict.p_out {
                if dict.slot_source(s).is_some() {
                    prop_assert_eq!(lhs[s], a * bx[s] + c * by[s]);
                } else {
                    prop_assert_eq!(lhs[s], bx[s]);
                }
            }
        }

        #[test]
        fn interacted_has_one_live_block(treated in any::<bool>(), x in prop::collection::vec(-5.0f64..5.0, 4)) {
            let dict = Dictionary::new(DictKind::Interacted, 4);
            let b = dict.apply(if treated { 1.0 } else { 0.0 }, &x).unwrap();
            let (left, right) = b.split_at(4);
            if treated {
                prop_assert!(right.iter().all(|&v| v == 0.0));
            } else {
                prop_assert!(left.iter().all(|&v| v == 0.0));
            }
        }

        #[test]
        fn lipschitz_in_two_inf_norm(
            kind in kind(),
            seed_d in prop::collection::vec(1u8..3, 6),
            m1 in prop::collection::vec(-2.0f64..2.0, 12),
            m2 in prop::collection::vec(-2.0f64..2.0, 12),
        ) {
            let d: Vec<f64> = seed_d.into_iter().map(f64::from).collect();
            let x1 = DMatrix::from_row_slice(6, 2, &m1);
            let x2 = DMatrix::from_row_slice(6, 2, &m2);
            let dict = Dictionary::new(kind, 2);
            let diff = dict.apply_matrix(&d, &x1).unwrap() - dict.apply_matrix(&d, &x2).unwrap();
            let lhs = crate::linalg::two_inf_sq(&diff);
            let rhs = crate::linalg::two_inf_sq(&(&x1 - &x2));
            // Max norms are over the full input (D | X); D ≥ 1 keeps them ≥ 1.
            let max1 = crate::linalg::max_abs(x1.iter().copied().chain(d.iter().copied()));
            let max2 = crate::linalg::max_abs(x2.iter().copied().chain(d.iter().copied()));
            let deg = kind.degree() as i32;
            let c_b = 2f64.powi(deg) * max1.powi(2 * deg) * max2.powi(2 * deg);
            prop_assert!(lhs <= c_b * rhs * (1.0 + 1e-12) + 1e-12, "lhs={} bound={}", lhs, c_b * rhs);
        }
    }
}
