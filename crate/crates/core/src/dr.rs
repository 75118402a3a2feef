//! Cross-fitted doubly robust estimation.
//!
//! Scores are stored un-centered: `ψ_i = ℓ_i·{m(w_i, γ̂) + α̂(w_i)(y_i − γ̂(w_i))}`,
//! `θ̂ = mean(ψ)`, `σ̂² = (1/n)Σ(ψ_i − θ̂)²`, and the interval is
//! `θ̂ ± 1.96·σ̂/√n`. Ratio estimands store the linearized score so the same
//! three formulas apply.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CorruptedDataset, MaskedRow};
use crate::dict::DictKind;
use crate::eiv::{self, Design, EivFit, FoldDiagnostics, TrainInput};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Stream};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// Denominators closer to zero than this are treated as a failed first stage.
pub const WEAK_INSTRUMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Gaussian,
    Epanechnikov,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Estimand {
    /// `E[γ(1, X) − γ(0, X)]`.
    Ate,
    /// `E[γ(t₁⊙X + t₂) − γ(X)]`.
    PolicyAffine { t1: Vec<f64>, t2: Vec<f64> },
    /// `E[∂_d γ(D, X)]`.
    AverageDerivative,
    /// Coefficient on `D` in `Y = θD + g(X) + ε`, optionally unit weighted.
    PartiallyLinear {
        #[serde(default)]
        weighted: bool,
    },
    /// Partially linear IV: reduced form over first stage, both partially
    /// linear in the instrument.
    Pliv {
        #[serde(default)]
        weighted: bool,
    },
    /// ATE of the instrument on `Y` over its ATE on `D`.
    Late,
    /// ATE localized at `V = v` with bandwidth `h`.
    LocalizedAte { v: f64, h: f64, kernel: Kernel },
}

impl Estimand {
    pub fn name(&self) -> &'static str {
        match self {
            Estimand::Ate => "ate",
            Estimand::PolicyAffine { .. } => "policy",
            Estimand::AverageDerivative => "derivative",
            Estimand::PartiallyLinear { .. } => "plm",
            Estimand::Pliv { .. } => "pliv",
            Estimand::Late => "late",
            Estimand::LocalizedAte { .. } => "cate",
        }
    }

    pub fn is_ratio(&self) -> bool {
        matches!(self, Estimand::Late | Estimand::Pliv { .. })
    }

    fn weighted(&self) -> bool {
        matches!(self, Estimand::PartiallyLinear { weighted: true } | Estimand::Pliv { weighted: true })
    }

    pub fn validate(&self) -> Result<()> {
        if let Estimand::LocalizedAte { h, v, .. } = self {
            if !(*h > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
            }
            if !v.is_finite() {
                return Err(Error::Config("localization point must be finite".into()));
            }
        }
        Ok(())
    }
}

/// `K((V_i − v)/h)` normalized by its mean over the supplied rows.
pub fn kernel_weights(values: &[f64], v: f64, h: f64, kernel: Kernel) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    let raw: Vec<f64> = values.iter().map(|&x| kernel.eval((x - v) / h)).collect();
    let mean = linalg::mean(&raw);
    if !(mean > 0.0) {
        return Err(Error::EmptyWindow { v, h });
    }
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

/// One unit as seen by the score.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRow<'a> {
    /// Position in the full dataset.
    pub index: usize,
    /// Regressor entering `γ` (treatment, or the instrument for ratios).
    pub d: f64,
    pub y: f64,
    pub z: &'a MaskedRow,
    pub v: Option<f64>,
    /// Multiplier `ℓ_i` (kernel or unit weight); 1 when unused.
    pub weight: f64,
}

pub trait OutcomeModel: Sync {
    fn predict(&self, d: f64, row: &ScoreRow<'_>) -> Result<f64>;

    /// `m(w, γ)` for this row. The default covers moments expressible
    /// through `γ` at other treatment values; transport needs the model.
    fn moment(&self, estimand: &Estimand, row: &ScoreRow<'_>) -> Result<f64> {
        match estimand {
            Estimand::Ate | Estimand::Late | Estimand::LocalizedAte { .. } => {
                Ok(self.predict(1.0, row)? - self.predict(0.0, row)?)
            }
            Estimand::AverageDerivative | Estimand::PartiallyLinear { .. } | Estimand::Pliv { .. } => {
                // Central difference is exact for polynomials of degree ≤ 2 in d.
                let h = 0.5;
                Ok((self.predict(row.d + h, row)? - self.predict(row.d - h, row)?) / (2.0 * h))
            }
            Estimand::PolicyAffine { .. } => {
                Err(Error::Config("policy moment needs a model that can transport covariates".into()))
            }
        }
    }
}

pub trait BalancingModel: Sync {
    fn weight(&self, row: &ScoreRow<'_>) -> Result<f64>;
}

/// Outcome model from a closure `(d, row) ↦ γ(d, ·)`.
pub struct FnOutcome<F>(pub F);

impl<F: Fn(f64, &ScoreRow<'_>) -> f64 + Sync> OutcomeModel for FnOutcome<F> {
    fn predict(&self, d: f64, row: &ScoreRow<'_>) -> Result<f64> {
        Ok((self.0)(d, row))
    }
}

/// Balancing weight from a closure `row ↦ α(w)`.
pub struct FnBalancing<F>(pub F);

impl<F: Fn(&ScoreRow<'_>) -> f64 + Sync> BalancingModel for FnBalancing<F> {
    fn weight(&self, row: &ScoreRow<'_>) -> Result<f64> {
        Ok((self.0)(row))
    }
}

impl OutcomeModel for EivFit {
    fn predict(&self, d: f64, row: &ScoreRow<'_>) -> Result<f64> {
        eiv::predict(self, d, row.v, row.z)
    }

    /// Evaluated through the moment layout on the filled row, so the score's
    /// `m` matches the `M̂` used for balancing.
    fn moment(&self, estimand: &Estimand, row: &ScoreRow<'_>) -> Result<f64> {
        let filled = crate::clean::fill_row(row.z, &self.cleaning.rho_hat)?;
        let xa = self.design.augment_row(row.v, &filled)?;
        let m = eiv::moment_row(estimand, &self.design, row.d, &xa)?;
        Ok(eiv::dot(&m, self.coef().as_slice()))
    }
}

impl BalancingModel for EivFit {
    fn weight(&self, row: &ScoreRow<'_>) -> Result<f64> {
        eiv::predict(self, row.d, row.v, row.z)
    }
}

/// Un-centered score `ℓ·{m(w, γ̂) + α̂(w)(y − γ̂(w))}`.
pub fn influence_score(
    estimand: &Estimand,
    gamma: &dyn OutcomeModel,
    alpha: &dyn BalancingModel,
    row: &ScoreRow<'_>,
) -> Result<f64> {
    let m = gamma.moment(estimand, row)?;
    let residual = row.y - gamma.predict(row.d, row)?;
    Ok(row.weight * (m + alpha.weight(row)? * residual))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossFitConfig {
    pub k: usize,
    pub folds: usize,
    pub seed: u64,
    /// Add an uncorrupted constant to layouts without one.
    pub intercept: bool,
    pub pinv_tol: f64,
}

impl CrossFitConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, folds: 2, seed, intercept: true, pinv_tol: linalg::PINV_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioParts {
    pub theta_num: f64,
    pub theta_den: f64,
    pub sigma_num: f64,
    pub sigma_den: f64,
    pub cov_num_den: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub estimand: String,
    pub theta_hat: f64,
    pub sigma_hat: f64,
    /// `σ̂/√n`.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub psi: Vec<f64>,
    pub fold_diagnostics: Vec<FoldDiagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<RatioParts>,
}

impl InferenceResult {
    /// Summary statistics of a score vector.
    pub fn from_scores(estimand: &str, psi: Vec<f64>, fold_diagnostics: Vec<FoldDiagnostics>) -> Self {
        let n = psi.len();
        let theta_hat = linalg::mean(&psi);
        let sigma_hat = linalg::population_variance(&psi).max(0.0).sqrt();
        let se = sigma_hat / (n as f64).sqrt();
        Self {
            estimand: estimand.to_string(),
            theta_hat,
            sigma_hat,
            se,
            ci_low: theta_hat - Z_95 * se,
            ci_high: theta_hat + Z_95 * se,
            n,
            psi,
            fold_diagnostics,
            ratio: None,
        }
    }

    pub fn covers(&self, theta: f64) -> bool {
        self.ci_low <= theta && theta <= self.ci_high
    }
}

/// Seeded fold labels: a shuffled permutation cut into `folds` contiguous
/// chunks whose sizes differ by at most one.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Folds));
    let mut labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = pos * folds / n;
    }
    labels
}

struct Prepared<'a> {
    d: &'a [f64],
    responses: Vec<&'a [f64]>,
    unit_weights: Option<Vec<f64>>,
}

fn prepare<'a>(data: &'a CorruptedDataset, estimand: &Estimand) -> Result<Prepared<'a>> {
    let need = |v: &'a Option<Vec<f64>>, name: &str| {
        v.as_deref().ok_or_else(|| Error::Config(format!("estimand {} needs {name}", estimand.name())))
    };
    let y = need(&data.y, "Y")?;
    let (d, responses) = if estimand.is_ratio() {
        (need(&data.instrument, "an instrument U")?, vec![y, need(&data.d, "D")?])
    } else {
        (need(&data.d, "D")?, vec![y])
    };
    if matches!(estimand, Estimand::LocalizedAte { .. }) {
        need(&data.v, "V")?;
    }
    let unit_weights = if estimand.weighted() {
        let w = need(&data.weights, "weights")?;
        if w.iter().any(|&x| x < 0.0) {
            return Err(Error::Config("weights must be nonnegative".into()));
        }
        let mean = linalg::mean(w);
        if !(mean > 0.0) {
            return Err(Error::Config("weights sum to zero".into()));
        }
        Some(w.iter().map(|x| x / mean).collect())
    } else {
        None
    };
    Ok(Prepared { d, responses, unit_weights })
}

/// Score every row of one test fold with nuisances fit on its complement.
fn run_fold(
    fold: usize,
    labels: &[usize],
    data: &CorruptedDataset,
    prep: &Prepared<'_>,
    estimand: &Estimand,
    design: &Design,
    config: &CrossFitConfig,
) -> Result<(Vec<usize>, Vec<Vec<f64>>, FoldDiagnostics)> {
    let train: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != fold).collect();
    let test: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == fold).collect();
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();

    let z_train = data.z.select_rows(&train);
    let d_train = pick(prep.d, &train);
    let responses: Vec<Vec<f64>> = prep.responses.iter().map(|r| pick(r, &train)).collect();
    let response_refs: Vec<&[f64]> = responses.iter().map(Vec::as_slice).collect();
    let v_train = data.v.as_deref().map(|v| pick(v, &train));
    let input = TrainInput { z: &z_train, d: &d_train, responses: &response_refs, v: v_train.as_deref() };
    let trained = eiv::fit_nuisances(&input, estimand, design, config.k, config.pinv_tol)?;

    let local = match estimand {
        Estimand::LocalizedAte { v, h, kernel } => {
            let vs = pick(data.v.as_deref().expect("checked in prepare"), &test);
            Some(kernel_weights(&vs, *v, *h, *kernel)?)
        }
        _ => None,
    };

    let mut scores = vec![Vec::with_capacity(test.len()); prep.responses.len()];
    for (pos, &i) in test.iter().enumerate() {
        let z = data.z.row(i);
        let weight = match (&local, &prep.unit_weights) {
            (Some(l), _) => l[pos],
            (None, Some(w)) => w[i],
            (None, None) => 1.0,
        };
        for (r, outcome) in trained.outcomes.iter().enumerate() {
            let row = ScoreRow { index: i, d: prep.d[i], y: prep.responses[r][i], z: &z, v: data.v.as_ref().map(|v| v[i]), weight };
            scores[r].push(influence_score(estimand, outcome, &trained.balance, &row)?);
        }
    }
    let diagnostics = FoldDiagnostics { fold, n_test: test.len(), ..trained.diagnostics };
    Ok((test, scores, diagnostics))
}

/// Cross-fitted estimate, standard error and 95% interval.
pub fn cross_fit_estimate(
    data: &CorruptedDataset,
    estimand: &Estimand,
    dict: DictKind,
    config: &CrossFitConfig,
) -> Result<InferenceResult> {
    data.validate()?;
    estimand.validate()?;
    let n = data.n();
    if config.folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {}", config.folds)));
    }
    if n < 2 * config.folds {
        return Err(Error::Config(format!("n={n} is too small for {} folds", config.folds)));
    }
    let design = Design::for_estimand(estimand, dict, data.p(), config.intercept, data.v.is_some())?;
    let prep = prepare(data, estimand)?;
    let labels = assign_folds(n, config.folds, config.seed);

    let per_fold = (0..config.folds)
        .into_par_iter()
        .map(|f| run_fold(f, &labels, data, &prep, estimand, &design, config))
        .collect::<Result<Vec<_>>>()?;

    let mut scores = vec![vec![0.0; n]; prep.responses.len()];
    let mut diagnostics = Vec::with_capacity(config.folds);
    for (test, fold_scores, diag) in per_fold {
        for (r, s) in fold_scores.iter().enumerate() {
            for (&i, &v) in test.iter().zip(s) {
                scores[r][i] = v;
            }
        }
        diagnostics.push(diag);
    }

    if !estimand.is_ratio() {
        let psi = scores.pop().expect("one response");
        return Ok(InferenceResult::from_scores(estimand.name(), psi, diagnostics));
    }
    let (num, den) = (&scores[0], &scores[1]);
    let (theta_num, theta_den) = (linalg::mean(num), linalg::mean(den));
    if theta_den.abs() < WEAK_INSTRUMENT_TOL {
        return Err(Error::WeakInstrument { denominator: theta_den });
    }
    let theta = theta_num / theta_den;
    let psi: Vec<f64> = num
        .iter()
        .zip(den)
        .map(|(a, b)| theta + ((a - theta_num) - theta * (b - theta_den)) / theta_den)
        .collect();
    let mut result = InferenceResult::from_scores(estimand.name(), psi, diagnostics);
    result.ratio = Some(RatioParts {
        theta_num,
        theta_den,
        sigma_num: linalg::population_variance(num).sqrt(),
        sigma_den: linalg::population_variance(den).sqrt(),
        cov_num_den: linalg::population_covariance(num, den),
    });
    Ok(result)
}

/// Plain least squares of `Y` on `(1, D, Z filled with zeros)`; the `D`
/// coefficient. Contrast only, no inference.
pub fn naive_ols(data: &CorruptedDataset) -> Result<f64> {
    let y = data.y.as_deref().ok_or_else(|| Error::Config("OLS needs Y".into()))?;
    let d = data.d.as_deref().ok_or_else(|| Error::Config("OLS needs D".into()))?;
    let z = data.z.values_or(0.0);
    let x = DMatrix::from_fn(data.n(), data.p() + 2, |i, j| match j {
        0 => 1.0,
        1 => d[i],
        _ => z[(i, j - 2)],
    });
    let fit = linalg::min_norm_solve(&x, &nalgebra::DVector::from_column_slice(y), linalg::PINV_TOL)?;
    Ok(fit.solution[1])
}
