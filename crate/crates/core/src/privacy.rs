//! Laplace mechanisms calibrated to a privacy loss `ε`.
//!
//! `Laplace(b)` always means scale `b`, variance `2b²`. The corruption
//! module is parametrized by standard deviation instead; use
//! [`laplace_scale_to_sd`] and [`sd_to_laplace_scale`] to move between them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Noise on aggregate statistics; unit `i` averages `L_i` individuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralDpSpec {
    pub epsilon: f64,
    /// Number of published variables.
    pub p: usize,
    /// Per-unit bound on microdata entries.
    pub a_bar: Vec<f64>,
    /// Individuals per aggregate unit.
    pub l: Vec<f64>,
}

/// Noise on individual rows; only the first `t` covariates are privatized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroDpSpec {
    pub epsilon: f64,
    pub t: usize,
    pub a_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum PrivacySpec {
    Central(CentralDpSpec),
    Micro(MicroDpSpec),
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidSpec(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

impl CentralDpSpec {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.p == 0 {
            return Err(Error::InvalidSpec("p must be at least 1".into()));
        }
        if self.a_bar.len() != self.l.len() {
            return Err(Error::Dimension(format!("{} bounds for {} units", self.a_bar.len(), self.l.len())));
        }
        if self.a_bar.is_empty() {
            return Err(Error::InvalidSpec("no units".into()));
        }
        if self.a_bar.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidSpec("every A_bar must be positive".into()));
        }
        if self.l.iter().any(|&l| !(l >= 1.0 && l.is_finite())) {
            return Err(Error::InvalidSpec("every L must be at least 1".into()));
        }
        Ok(())
    }
}

impl MicroDpSpec {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if self.t == 0 {
            return Err(Error::InvalidSpec("T must be at least 1".into()));
        }
        if !(self.a_bar > 0.0 && self.a_bar.is_finite()) {
            return Err(Error::InvalidSpec("A_bar must be positive".into()));
        }
        Ok(())
    }
}

/// `b_i = 2·Ā_i·p / (ε·L_i)`.
pub fn central_scale(spec: &CentralDpSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let p = spec.p as f64;
    Ok(spec.a_bar.iter().zip(&spec.l).map(|(&a, &l)| 2.0 * a * p / (spec.epsilon * l)).collect())
}

/// Bounds on the sub-exponential parameters of the injected noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubExpBound {
    pub k_a: f64,
    pub kappa: f64,
}

/// `K_a, κ ≤ max_i 2^{3/2}·Ā_i·p / (ε·L_i)`.
pub fn central_subexp_bound(spec: &CentralDpSpec) -> Result<SubExpBound> {
    spec.validate()?;
    let p = spec.p as f64;
    let c = 2f64.powf(1.5);
    let bound = spec
        .a_bar
        .iter()
        .zip(&spec.l)
        .map(|(&a, &l)| c * a * p / (spec.epsilon * l))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SubExpBound { k_a: bound, kappa: bound })
}

/// `b = 2·Ā·T / ε`.
pub fn micro_scale(spec: &MicroDpSpec) -> Result<f64> {
    spec.validate()?;
    Ok(2.0 * spec.a_bar * spec.t as f64 / spec.epsilon)
}

/// `K_a, κ ≤ 2^{3/2}·Ā·T / ε`.
pub fn micro_subexp_bound(spec: &MicroDpSpec) -> Result<SubExpBound> {
    spec.validate()?;
    let bound = 2f64.powf(1.5) * spec.a_bar * spec.t as f64 / spec.epsilon;
    Ok(SubExpBound { k_a: bound, kappa: bound })
}

pub fn laplace_scale_to_sd(scale: f64) -> f64 {
    scale * std::f64::consts::SQRT_2
}

pub fn sd_to_laplace_scale(sd: f64) -> f64 {
    sd / std::f64::consts::SQRT_2
}

/// Published variables per individual, compared with `ln(n·p)`. Advisory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlDiagnostic {
    pub max_p_over_l: f64,
    pub threshold: f64,
    pub passes: bool,
}

pub fn p_over_l_diagnostic(spec: &CentralDpSpec, n: usize, p: usize) -> Result<PlDiagnostic> {
    spec.validate()?;
    if n == 0 || p == 0 {
        return Err(Error::InvalidSpec("n and p must be positive".into()));
    }
    let max_p_over_l = spec.l.iter().map(|&l| p as f64 / l).fold(f64::NEG_INFINITY, f64::max);
    let threshold = ((n * p) as f64).ln();
    Ok(PlDiagnostic { max_p_over_l, threshold, passes: max_p_over_l <= threshold })
}

/// Add calibrated Laplace noise. Central: row `i` gets scale `b_i` on every
/// column, so the spec must list one unit per row. Micro: columns `0..T`
/// get scale `b`, the rest are copied untouched.
pub fn privatize(x: &DMatrix<f64>, spec: &PrivacySpec, seed: u64) -> Result<MaskedMatrix> {
    let (n, p) = x.shape();
    let mut rng = rng::stream(seed, Stream::Privacy);
    let mut z = x.clone();
    match spec {
        PrivacySpec::Central(c) => {
            let scales = central_scale(c)?;
            if scales.len() != n {
                return Err(Error::Dimension(format!("{} units for {n} rows", scales.len())));
            }
            for j in 0..p {
                for i in 0..n {
                    z[(i, j)] += rng::laplace(&mut rng, scales[i]);
                }
            }
        }
        PrivacySpec::Micro(m) => {
            let scale = micro_scale(m)?;
            if m.t > p {
                return Err(Error::Dimension(format!("T={} exceeds p={p}", m.t)));
            }
            for j in 0..m.t {
                for i in 0..n {
                    z[(i, j)] += rng::laplace(&mut rng, scale);
                }
            }
        }
    }
    MaskedMatrix::fully_observed(z)
}
