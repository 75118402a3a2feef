//! Error-in-variable regression and balancing weights on a cleaned training
//! fold, and implicit-cleaning prediction on raw test rows.
//!
//! Conventions: `Ĝ = BᵀB/m`, `M̂` is the row mean of the per-row moments, so
//! `η̂ = Ĝ†M̂` and `β̂ = Ĝ†BᵀY/m`. Both pseudoinverses drop eigenvalues of
//! `Ĝ` below `tol × λ_max`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clean::{self, CleanedMatrix, CleaningModel};
use crate::data::{MaskedMatrix, MaskedRow};
use crate::dict::{DictKind, Dictionary};
use crate::dr::Estimand;
use crate::error::{Error, Result};
use crate::linalg::{self, ThinSvd};

/// How covariate rows are turned into dictionary input.
///
/// The dictionary sees `(1?, V?, x)`: an optional uncorrupted constant, the
/// uncorrupted covariate `V` when the data carry one, then the `p` corrupted
/// covariates. Only the corrupted block is ever filled or cleaned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Design {
    pub kind: DictKind,
    pub p: usize,
    pub intercept: bool,
    pub with_v: bool,
}

impl Design {
    /// The design an estimand uses. A constant is added only when asked for
    /// and the layout has none of its own.
    pub fn for_estimand(estimand: &Estimand, kind: DictKind, p: usize, intercept: bool, has_v: bool) -> Result<Self> {
        check_compatible(estimand, kind)?;
        if matches!(estimand, Estimand::LocalizedAte { .. }) && !has_v {
            return Err(Error::Config("localized estimand needs V".into()));
        }
        if let Estimand::PolicyAffine { t1, t2 } = estimand {
            if t1.len() != p || t2.len() != p {
                return Err(Error::Config(format!(
                    "policy vectors have lengths {} and {}, covariates have {p}",
                    t1.len(),
                    t2.len()
                )));
            }
        }
        Ok(Self {
            kind,
            p,
            intercept: intercept && !kind.has_constant(),
            with_v: has_v,
        })
    }

    /// Design without extra columns.
    pub fn plain(kind: DictKind, p: usize) -> Self {
        Self { kind, p, intercept: false, with_v: false }
    }

    pub fn n_extra(&self) -> usize {
        usize::from(self.intercept) + usize::from(self.with_v)
    }

    pub fn dictionary(&self) -> Dictionary {
        Dictionary::new(self.kind, self.n_extra() + self.p)
    }

    pub fn augment_row(&self, v: Option<f64>, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p {
            return Err(Error::Dimension(format!("row has {} covariates, design expects {}", x.len(), self.p)));
        }
        let mut out = Vec::with_capacity(self.n_extra() + self.p);
        if self.intercept {
            out.push(1.0);
        }
        if self.with_v {
            out.push(v.ok_or_else(|| Error::Config("design expects V".into()))?);
        }
        out.extend_from_slice(x);
        Ok(out)
    }

    pub fn augment_matrix(&self, v: Option<&[f64]>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.p {
            return Err(Error::Dimension(format!("matrix has {} covariates, design expects {}", x.ncols(), self.p)));
        }
        if self.with_v {
            match v {
                Some(v) if v.len() == x.nrows() => {}
                Some(v) => return Err(Error::Dimension(format!("V has length {}, X has {} rows", v.len(), x.nrows()))),
                None => return Err(Error::Config("design expects V".into())),
            }
        }
        let extra = self.n_extra();
        Ok(DMatrix::from_fn(x.nrows(), extra + self.p, |i, j| {
            if j >= extra {
                x[(i, j - extra)]
            } else if self.intercept && j == 0 {
                1.0
            } else {
                v.map_or(f64::NAN, |v| v[i])
            }
        }))
    }

    /// Multiplier applied to each dictionary input when a raw row is used in
    /// place of a filled one: `1/ρ̂_j` on corrupted columns, `1` elsewhere.
    fn input_scale(&self, rho_hat: &[f64]) -> Vec<f64> {
        let mut scale = vec![1.0; self.n_extra()];
        scale.extend(rho_hat.iter().map(|r| 1.0 / r));
        scale
    }
}

/// Which dictionary each estimand requires.
pub fn required_dict(estimand: &Estimand) -> DictKind {
    match estimand {
        Estimand::Ate | Estimand::Late | Estimand::LocalizedAte { .. } => DictKind::Interacted,
        Estimand::PolicyAffine { .. } => DictKind::Identity,
        Estimand::AverageDerivative => DictKind::QuadraticInteracted,
        Estimand::PartiallyLinear { .. } | Estimand::Pliv { .. } => DictKind::PartiallyLinear,
    }
}

pub fn check_compatible(estimand: &Estimand, kind: DictKind) -> Result<()> {
    let needed = required_dict(estimand);
    if needed != kind {
        return Err(Error::Config(format!(
            "estimand {} requires the {needed} dictionary, got {kind}",
            estimand.name()
        )));
    }
    Ok(())
}

/// Per-row counterfactual moment `m̂_i` at dictionary input `xa`
/// (already augmented). Linear in the coefficient it is later dotted with.
pub fn moment_row(estimand: &Estimand, design: &Design, d: f64, xa: &[f64]) -> Result<Vec<f64>> {
    let dict = design.dictionary();
    match estimand {
        Estimand::Ate | Estimand::Late | Estimand::LocalizedAte { .. } => {
            let treated = dict.apply(1.0, xa)?;
            let control = dict.apply(0.0, xa)?;
            Ok(treated.iter().zip(&control).map(|(a, b)| a - b).collect())
        }
        Estimand::PolicyAffine { t1, t2 } => {
            let extra = design.n_extra();
            let mut moved = xa.to_vec();
            for (j, v) in moved[extra..].iter_mut().enumerate() {
                *v = t1[j] * *v + t2[j];
            }
            let after = dict.apply(d, &moved)?;
            let before = dict.apply(d, xa)?;
            Ok(after.iter().zip(&before).map(|(a, b)| a - b).collect())
        }
        Estimand::AverageDerivative | Estimand::PartiallyLinear { .. } | Estimand::Pliv { .. } => {
            dict.derivative(d, xa)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterfactualMoment {
    pub m_hat: Vec<f64>,
    pub estimand: String,
}

/// `M̂ = (1/m) Σ_i m̂_i` over the cleaned training rows.
pub fn counterfactual_moment(
    estimand: &Estimand,
    d_train: &[f64],
    xhat: &CleanedMatrix,
    v_train: Option<&[f64]>,
    design: &Design,
) -> Result<CounterfactualMoment> {
    check_compatible(estimand, design.kind)?;
    let m = xhat.values.nrows();
    if d_train.len() != m {
        return Err(Error::Dimension(format!("{} treatments for {m} cleaned rows", d_train.len())));
    }
    let xa = design.augment_matrix(v_train, &xhat.values)?;
    let p_out = design.dictionary().p_out;
    let mut columns = vec![Vec::with_capacity(m); p_out];
    let mut row = vec![0.0; xa.ncols()];
    for i in 0..m {
        for (j, r) in row.iter_mut().enumerate() {
            *r = xa[(i, j)];
        }
        for (col, v) in columns.iter_mut().zip(moment_row(estimand, design, d_train[i], &row)?) {
            col.push(v);
        }
    }
    Ok(CounterfactualMoment {
        m_hat: columns.iter().map(|c| linalg::mean(c)).collect(),
        estimand: estimand.name().to_string(),
    })
}

/// Coefficients from one pseudoinverse solve.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coef: DVector<f64>,
    /// `Ĝ = BᵀB/m`.
    pub gram: DMatrix<f64>,
    pub rank_used: usize,
    /// Smallest singular value of the decomposed matrix that was kept.
    pub min_nonzero_singular: f64,
}

/// SVD of a dictionary matrix `B`, reused for the regression, the balancing
/// weight and the row-space diagnostic of one fold.
#[derive(Debug, Clone)]
pub struct DesignDecomposition {
    svd: ThinSvd,
    rank: usize,
    m: usize,
}

impl DesignDecomposition {
    /// Keeps singular values with `s² > tol · s_max²`, i.e. eigenvalues of
    /// `Ĝ` above `tol · λ_max`.
    pub fn new(b: &DMatrix<f64>, tol: f64) -> Result<Self> {
        let svd = linalg::thin_svd(b)?;
        let top = svd.singular_values.first().copied().unwrap_or(0.0);
        let rank = svd.singular_values.iter().filter(|&&s| s * s > tol * top * top).count();
        if top == 0.0 || rank == 0 {
            return Err(Error::DegenerateFit("dictionary matrix is numerically zero".into()));
        }
        Ok(Self { svd, rank, m: b.nrows() })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn min_retained(&self) -> f64 {
        self.svd.singular_values[self.rank - 1]
    }

    /// `β̂ = B†y`.
    pub fn regress(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.m {
            return Err(Error::Dimension(format!("response has length {}, design has {} rows", y.len(), self.m)));
        }
        let mut coef = DVector::zeros(self.svd.v.nrows());
        for j in 0..self.rank {
            coef.axpy(self.svd.u.column(j).dot(y) / self.svd.singular_values[j], &self.svd.v.column(j), 1.0);
        }
        Ok(coef)
    }

    /// `η̂ = Ĝ†M̂ = m · V S⁻² Vᵀ M̂`.
    pub fn balance(&self, m_hat: &DVector<f64>) -> Result<DVector<f64>> {
        if m_hat.len() != self.svd.v.nrows() {
            return Err(Error::Dimension(format!("moment has length {}, design has {} columns", m_hat.len(), self.svd.v.nrows())));
        }
        let mut eta = DVector::zeros(m_hat.len());
        for j in 0..self.rank {
            let s = self.svd.singular_values[j];
            eta.axpy(self.m as f64 * self.svd.v.column(j).dot(m_hat) / (s * s), &self.svd.v.column(j), 1.0);
        }
        Ok(eta)
    }

    /// Max-abs residual of projecting `M̂` onto the retained row space of `B`.
    pub fn row_space_residual(&self, m_hat: &DVector<f64>) -> f64 {
        let mut proj = DVector::zeros(m_hat.len());
        for j in 0..self.rank {
            proj.axpy(self.svd.v.column(j).dot(m_hat), &self.svd.v.column(j), 1.0);
        }
        linalg::max_abs((m_hat - proj).iter().copied())
    }
}

fn gram(b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = b.tr_mul(b) / b.nrows() as f64;
    // Exact symmetry; the product is symmetric only up to rounding.
    for i in 0..g.nrows() {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// `β̂ = (BᵀB)† BᵀY`, minimal norm.
pub fn fit_regression(b: &DMatrix<f64>, y: &[f64], tol: f64) -> Result<LinearFit> {
    if b.nrows() != y.len() {
        return Err(Error::Dimension(format!("B has {} rows, Y has {}", b.nrows(), y.len())));
    }
    let dec = DesignDecomposition::new(b, tol)?;
    let coef = dec.regress(&DVector::from_column_slice(y))?;
    Ok(LinearFit { coef, gram: gram(b), rank_used: dec.rank, min_nonzero_singular: dec.min_retained() })
}

/// `η̂ = Ĝ† M̂`, minimal norm, from the gram matrix itself.
pub fn fit_balance(gram: &DMatrix<f64>, moment: &CounterfactualMoment, tol: f64) -> Result<LinearFit> {
    let m_hat = DVector::from_column_slice(&moment.m_hat);
    let sol = linalg::psd_pinv_apply(gram, &m_hat, tol)?;
    Ok(LinearFit {
        coef: sol.solution,
        gram: gram.clone(),
        rank_used: sol.rank,
        min_nonzero_singular: sol.min_retained,
    })
}

/// A fitted coefficient vector bound to the training fold that produced it.
#[derive(Debug, Clone)]
pub struct EivFit {
    pub fit: LinearFit,
    /// Coefficients with `1/ρ̂` folded into the covariate-linear slots, so a
    /// raw row (missing cells as 0) predicts with one dot product.
    pub absorbed: Vec<f64>,
    pub cleaning: Arc<CleaningModel>,
    pub design: Design,
}

impl EivFit {
    pub fn new(fit: LinearFit, cleaning: Arc<CleaningModel>, design: Design) -> Result<Self> {
        let dict = design.dictionary();
        if fit.coef.len() != dict.p_out {
            return Err(Error::Dimension(format!("{} coefficients for {} dictionary slots", fit.coef.len(), dict.p_out)));
        }
        if cleaning.rho_hat.len() != design.p {
            return Err(Error::Dimension("cleaning model and design disagree on p".into()));
        }
        let scale = design.input_scale(&cleaning.rho_hat);
        let absorbed = (0..dict.p_out)
            .map(|s| fit.coef[s] * dict.slot_source(s).map_or(1.0, |j| scale[j]))
            .collect();
        Ok(Self { fit, absorbed, cleaning, design })
    }

    pub fn coef(&self) -> &DVector<f64> {
        &self.fit.coef
    }
}

/// `b(d, fill(z; ρ̂_train)) · coef`, computed as `b(d, z⁰) · β̃` where `z⁰`
/// has missing cells set to 0. The row is never projected.
pub fn predict(fit: &EivFit, d: f64, v: Option<f64>, z: &MaskedRow) -> Result<f64> {
    let raw: Vec<f64> = z.values.iter().zip(&z.mask).map(|(&x, &o)| if o { x } else { 0.0 }).collect();
    let xa = fit.design.augment_row(v, &raw)?;
    let b = fit.design.dictionary().apply(d, &xa)?;
    Ok(dot(&b, &fit.absorbed))
}

/// Same value as [`predict`], through the explicitly filled row.
pub fn predict_filled(fit: &EivFit, d: f64, v: Option<f64>, z: &MaskedRow) -> Result<f64> {
    let filled = clean::fill_row(z, &fit.cleaning.rho_hat)?;
    let xa = fit.design.augment_row(v, &filled)?;
    let b = fit.design.dictionary().apply(d, &xa)?;
    Ok(dot(&b, fit.fit.coef.as_slice()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(1/m) Σ_i b_i (b_i · η̂) − M̂`, one entry per dictionary slot.
pub fn balance_report(b: &DMatrix<f64>, eta: &DVector<f64>, moment: &CounterfactualMoment) -> Result<Vec<f64>> {
    if b.ncols() != eta.len() || eta.len() != moment.m_hat.len() {
        return Err(Error::Dimension("balance report inputs disagree in width".into()));
    }
    let omega = b * eta;
    let achieved = b.tr_mul(&omega) / b.nrows() as f64;
    Ok(achieved.iter().zip(&moment.m_hat).map(|(a, m)| a - m).collect())
}

/// Fit summary for one training fold.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rank_used: usize,
    pub min_nonzero_singular: f64,
    pub balance_residual_max_abs: f64,
    pub moment_row_space_residual: f64,
    pub rho_hat_min: f64,
}

/// Everything fit on one training fold.
#[derive(Debug, Clone)]
pub struct TrainedNuisances {
    /// One regression per supplied response.
    pub outcomes: Vec<EivFit>,
    pub balance: EivFit,
    pub moment: CounterfactualMoment,
    pub diagnostics: FoldDiagnostics,
}

pub struct TrainInput<'a> {
    pub z: &'a MaskedMatrix,
    /// Uncorrupted regressor entering the dictionary (treatment, or the
    /// instrument for ratio estimands).
    pub d: &'a [f64],
    pub responses: &'a [&'a [f64]],
    pub v: Option<&'a [f64]>,
}

pub fn fit_nuisances(input: &TrainInput<'_>, estimand: &Estimand, design: &Design, k: usize, tol: f64) -> Result<TrainedNuisances> {
    let m = input.z.nrows();
    if input.d.len() != m || input.responses.iter().any(|r| r.len() != m) {
        return Err(Error::Dimension("training vectors disagree with Z rows".into()));
    }
    let (xhat, cleaning) = clean::fit_cleaning(input.z, k)?;
    let cleaning = Arc::new(cleaning);
    let xa = design.augment_matrix(input.v, &xhat.values)?;
    let b = design.dictionary().apply_matrix(input.d, &xa)?;
    let dec = DesignDecomposition::new(&b, tol)?;
    let g = gram(&b);

    let moment = counterfactual_moment(estimand, input.d, &xhat, input.v, design)?;
    let m_hat = DVector::from_column_slice(&moment.m_hat);
    let eta = dec.balance(&m_hat)?;
    let balance_residual = linalg::max_abs(balance_report(&b, &eta, &moment)?);

    let base = |coef| LinearFit { coef, gram: g.clone(), rank_used: dec.rank, min_nonzero_singular: dec.min_retained() };
    let outcomes = input
        .responses
        .iter()
        .map(|y| EivFit::new(base(dec.regress(&DVector::from_column_slice(y))?), cleaning.clone(), *design))
        .collect::<Result<Vec<_>>>()?;
    let balance = EivFit::new(base(eta), cleaning.clone(), *design)?;

    let diagnostics = FoldDiagnostics {
        fold: 0,
        n_train: m,
        n_test: 0,
        rank_used: dec.rank,
        min_nonzero_singular: dec.min_retained(),
        balance_residual_max_abs: balance_residual,
        moment_row_space_residual: dec.row_space_residual(&m_hat),
        rho_hat_min: cleaning.rho_hat.iter().copied().fold(f64::INFINITY, f64::min),
    };
    Ok(TrainedNuisances { outcomes, balance, moment, diagnostics })
}
