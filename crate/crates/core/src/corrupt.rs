//! Synthetic low-rank signals, the four corruption types, and the simulation
//! design used for the coverage experiments.
//!
//! Observed covariates are `Z = (X + H) ⊙ π`: additive noise `H` followed by
//! a missingness mask `π`. Noise draws never depend on the mask, and the mask
//! never depends on the noise.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CorruptedDataset, MaskedMatrix};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Stream};

/// Average treatment effect built into [`simulate_dgp`].
pub const DGP_THETA: f64 = 2.2;

/// True covariates together with the rank used to generate them.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    pub values: DMatrix<f64>,
    pub rank: usize,
}

impl SignalMatrix {
    pub fn numerical_rank(&self) -> Result<usize> {
        Ok(linalg::thin_svd(&self.values)?.rank(linalg::RANK_TOL))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    /// `N(0, sd²)`.
    Gaussian { sd: f64 },
    /// Laplace with standard deviation `sd`, i.e. scale `sd/√2`.
    Laplace { sd: f64 },
    /// `Z = sign(X)·Poisson(|X|)`; the noise is implicitly `Z − X`.
    DiscretizePoisson,
}

impl NoiseKind {
    fn validate(&self) -> Result<()> {
        match *self {
            NoiseKind::Gaussian { sd } | NoiseKind::Laplace { sd } if !(sd >= 0.0 && sd.is_finite()) => {
                Err(Error::InvalidSpec(format!("noise sd must be finite and nonnegative, got {sd}")))
            }
            _ => Ok(()),
        }
    }
}

/// Per-column observation probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rates {
    Uniform(f64),
    PerColumn(Vec<f64>),
}

impl Rates {
    pub fn rate(&self, j: usize) -> f64 {
        match self {
            Rates::Uniform(r) => *r,
            Rates::PerColumn(v) => v[j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingSpec {
    /// Probability that a cell is observed, `ρ_j ∈ (0, 1]`.
    pub rates: Rates,
    /// Draw missingness with positive within-row dependence; see
    /// [`draw_mask`].
    #[serde(default)]
    pub correlated: bool,
}

impl MissingSpec {
    pub fn complete() -> Self {
        Self { rates: Rates::Uniform(1.0), correlated: false }
    }

    pub fn mcar(rho: f64) -> Self {
        Self { rates: Rates::Uniform(rho), correlated: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub noise: NoiseKind,
    pub missing: MissingSpec,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn clean(seed: u64) -> Self {
        Self { noise: NoiseKind::None, missing: MissingSpec::complete(), seed }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        self.noise.validate()?;
        if let Rates::PerColumn(v) = &self.missing.rates {
            if v.len() != p {
                return Err(Error::Dimension(format!("{} observation rates for {p} columns", v.len())));
            }
        }
        for j in 0..p {
            let rho = self.missing.rates.rate(j);
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidSpec(format!("observation rate {rho} for column {j} not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Noise standard deviation for a noise-to-signal variance ratio, given the
/// per-entry signal variance (`r` for the factor signal).
pub fn sd_from_ratio(ratio: f64, signal_variance: f64) -> f64 {
    (ratio * signal_variance).sqrt()
}

/// `X = U Vᵀ` with `U` (n×r) and `V` (p×r) i.i.d. standard normal, so every
/// entry has mean 0 and variance `r`.
pub fn generate_factor_signal(n: usize, p: usize, r: usize, seed: u64) -> Result<SignalMatrix> {
    if n == 0 || p == 0 || r == 0 || r > n.min(p) {
        return Err(Error::Dimension(format!("need 1 <= r <= min(n, p), got n={n}, p={p}, r={r}")));
    }
    let mut rng = rng::stream(seed, Stream::Signal);
    let u = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = DMatrix::from_fn(p, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(SignalMatrix { values: u * v.transpose(), rank: r })
}

/// `X + H` before masking, with noise drawn column-major from `rng`.
pub fn add_noise<R: Rng + ?Sized>(x: &DMatrix<f64>, noise: &NoiseKind, rng: &mut R) -> DMatrix<f64> {
    match *noise {
        NoiseKind::None => x.clone(),
        NoiseKind::Gaussian { sd } => {
            let normal = Normal::new(0.0, sd).expect("validated sd");
            x.map(|v| v + normal.sample(rng))
        }
        NoiseKind::Laplace { sd } => {
            let scale = sd / std::f64::consts::SQRT_2;
            x.map(|v| v + rng::laplace(rng, scale))
        }
        NoiseKind::DiscretizePoisson => x.map(|v| {
            if v == 0.0 {
                0.0
            } else {
                let draw: f64 = Poisson::new(v.abs()).expect("positive mean").sample(rng);
                v.signum() * draw
            }
        }),
    }
}

/// Observation mask: `true` with probability `ρ_j`, independently across rows.
///
/// Without the correlation flag cells are independent (MCAR). With it, each
/// row draws a shared factor `f ~ Bernoulli(1/2)` and observes column `j`
/// with probability `min(1, 2ρ_j)` when `f = 1` and `max(0, 2ρ_j − 1)` when
/// `f = 0`. The marginal rate stays exactly `ρ_j` while cells in a row become
/// positively dependent. This is one admissible dependent generator, not a
/// canonical one.
pub fn draw_mask<R: Rng + ?Sized>(n: usize, p: usize, missing: &MissingSpec, rng: &mut R) -> DMatrix<bool> {
    let mut mask = DMatrix::from_element(n, p, true);
    for i in 0..n {
        let factor = missing.correlated && rng.random_bool(0.5);
        for j in 0..p {
            let rho = missing.rates.rate(j);
            let prob = if !missing.correlated {
                rho
            } else if factor {
                (2.0 * rho).min(1.0)
            } else {
                (2.0 * rho - 1.0).max(0.0)
            };
            mask[(i, j)] = prob >= 1.0 || rng.random::<f64>() < prob;
        }
    }
    mask
}

pub fn corrupt_matrix(x: &DMatrix<f64>, spec: &CorruptionSpec) -> Result<MaskedMatrix> {
    spec.validate(x.ncols())?;
    let mut noise_rng = rng::stream(spec.seed, Stream::Noise);
    let noisy = add_noise(x, &spec.noise, &mut noise_rng);
    let mut mask_rng = rng::stream(spec.seed, Stream::Mask);
    let mask = draw_mask(x.nrows(), x.ncols(), &spec.missing, &mut mask_rng);
    MaskedMatrix::new(noisy, mask)
}

/// Corrupted covariates only; `Y` and `D` are left empty.
pub fn corrupt(x: &SignalMatrix, spec: &CorruptionSpec) -> Result<CorruptedDataset> {
    Ok(CorruptedDataset::covariates_only(corrupt_matrix(&x.values, spec)?))
}

/// Entrywise Monte Carlo mean of `H = (Z before masking) − X` over `reps`
/// independent noise draws.
pub fn conditional_mean_check(x: &SignalMatrix, spec: &CorruptionSpec, reps: usize) -> Result<DMatrix<f64>> {
    if reps == 0 {
        return Err(Error::InvalidSpec("reps must be at least 1".into()));
    }
    spec.validate(x.values.ncols())?;
    let mut rng = rng::stream(spec.seed, Stream::Noise);
    let mut total = DMatrix::zeros(x.values.nrows(), x.values.ncols());
    for _ in 0..reps {
        total += add_noise(&x.values, &spec.noise, &mut rng) - &x.values;
    }
    Ok(total / reps as f64)
}

/// `Λ(t) = 0.90·eᵗ/(1+eᵗ) + 0.05`, a logistic squeezed into `[0.05, 0.95]`.
pub fn truncated_logistic(t: f64) -> f64 {
    let logistic = if t >= 0.0 { 1.0 / (1.0 + (-t).exp()) } else { t.exp() / (1.0 + t.exp()) };
    (0.90 * logistic + 0.05).clamp(0.05, 0.95)
}

/// Coefficients `β_j = j⁻²`, `j = 1..p`.
pub fn dgp_coefficients(p: usize) -> Vec<f64> {
    (1..=p).map(|j| 1.0 / (j * j) as f64).collect()
}

/// A simulated draw together with the quantities only a simulator knows.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: CorruptedDataset,
    pub signal: SignalMatrix,
    pub propensity: Vec<f64>,
}

/// Simulation design with a known average treatment effect of 2.2:
///
/// ```text
/// D_i ~ Bernoulli(Λ(0.25·X_i·β))
/// Y_i = 2.2·D_i + 1.2·X_i·β + D_i·X_i1 + ε_i,   ε_i ~ N(0, 1)
/// ```
///
/// `seed` drives the signal, treatment and outcome; `spec.seed` drives the
/// corruption.
pub fn simulate_dgp(n: usize, p: usize, r: usize, spec: &CorruptionSpec, seed: u64) -> Result<CorruptedDataset> {
    Ok(simulate_dgp_full(n, p, r, spec, seed)?.dataset)
}

pub fn simulate_dgp_full(n: usize, p: usize, r: usize, spec: &CorruptionSpec, seed: u64) -> Result<Simulation> {
    if n < 2 || p < 2 {
        return Err(Error::Dimension(format!("simulation needs n, p >= 2, got n={n}, p={p}")));
    }
    let signal = generate_factor_signal(n, p, r, seed)?;
    let beta = dgp_coefficients(p);
    let index: Vec<f64> = (0..n)
        .map(|i| signal.values.row(i).iter().zip(&beta).map(|(x, b)| x * b).sum())
        .collect();

    let mut rng = rng::stream(seed, Stream::Outcome);
    let propensity: Vec<f64> = index.iter().map(|&t| truncated_logistic(0.25 * t)).collect();
    let d: Vec<f64> = propensity.iter().map(|&pi| if rng.random::<f64>() < pi { 1.0 } else { 0.0 }).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eps: f64 = rng.sample(StandardNormal);
            DGP_THETA * d[i] + 1.2 * index[i] + d[i] * signal.values[(i, 0)] + eps
        })
        .collect();

    let z = corrupt_matrix(&signal.values, spec)?;
    let dataset = CorruptedDataset {
        y: Some(y),
        d: Some(d),
        instrument: None,
        z,
        weights: None,
        v: None,
        theta_true: Some(DGP_THETA),
    };
    Ok(Simulation { dataset, signal, propensity })
}
