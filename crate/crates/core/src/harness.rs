//! Monte Carlo coverage experiments on the simulation design.
//!
//! A grid is the cartesian product `cells × k_values`, emitted in that
//! order. Replication `t = 1..=reps` of every grid entry uses seed
//! `base_seed ^ t`, so entries that differ only in `k` or in corruption
//! share their signal, treatment and outcome draws.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrupt::{self, CorruptionSpec, MissingSpec, NoiseKind, Rates};
use crate::data::CorruptedDataset;
use crate::dict::DictKind;
use crate::dr::{self, CrossFitConfig, Estimand, InferenceResult};
use crate::error::{Error, Result};
use crate::linalg;
use crate::privacy::{self, CentralDpSpec, MicroDpSpec, PrivacySpec};
use crate::rng;

/// A cell is flagged when more than this share of its replications fail.
pub const FAILURE_FLAG_SHARE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseName {
    None,
    Gaussian,
    Laplace,
    Discretize,
}

/// One corruption setting of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cell {
    /// Noise at `ratio = σ_H²/r`, then MCAR missingness of share `missing`.
    Synthetic {
        noise: NoiseName,
        #[serde(default)]
        ratio: f64,
        #[serde(default)]
        missing: f64,
        #[serde(default)]
        correlated: bool,
    },
    /// Laplace mechanism on the signal. For the central regime the bounds
    /// are uniform across units.
    CentralDp { epsilon: f64, a_bar: f64, l: f64 },
    MicroDp { epsilon: f64, t: usize, a_bar: f64 },
}

impl Cell {
    pub fn label(&self) -> String {
        match self {
            Cell::Synthetic { noise, ratio, missing, correlated } => {
                let noise = match noise {
                    NoiseName::None => "none".to_string(),
                    NoiseName::Gaussian => format!("gaussian:{ratio}"),
                    NoiseName::Laplace => format!("laplace:{ratio}"),
                    NoiseName::Discretize => "discretize".to_string(),
                };
                let dep = if *correlated { ":correlated" } else { "" };
                format!("{noise}|missing:{missing}{dep}")
            }
            Cell::CentralDp { epsilon, a_bar, l } => format!("central_dp:eps={epsilon},a={a_bar},L={l}"),
            Cell::MicroDp { epsilon, t, a_bar } => format!("micro_dp:eps={epsilon},T={t},a={a_bar}"),
        }
    }

    pub fn corruption(&self, r: usize, seed: u64) -> Result<CorruptionSpec> {
        match *self {
            Cell::Synthetic { noise, ratio, missing, correlated } => {
                if !(0.0..1.0).contains(&missing) {
                    return Err(Error::Config(format!("missing share {missing} not in [0, 1)")));
                }
                if !(ratio >= 0.0) {
                    return Err(Error::Config(format!("noise ratio {ratio} must be nonnegative")));
                }
                let sd = corrupt::sd_from_ratio(ratio, r as f64);
                let noise = match noise {
                    NoiseName::None => NoiseKind::None,
                    NoiseName::Gaussian => NoiseKind::Gaussian { sd },
                    NoiseName::Laplace => NoiseKind::Laplace { sd },
                    NoiseName::Discretize => NoiseKind::DiscretizePoisson,
                };
                Ok(CorruptionSpec { noise, missing: MissingSpec { rates: Rates::Uniform(1.0 - missing), correlated }, seed })
            }
            _ => Ok(CorruptionSpec::clean(seed)),
        }
    }

    fn privacy(&self, n: usize, p: usize) -> Option<PrivacySpec> {
        match *self {
            Cell::Synthetic { .. } => None,
            Cell::CentralDp { epsilon, a_bar, l } => {
                Some(PrivacySpec::Central(CentralDpSpec { epsilon, p, a_bar: vec![a_bar; n], l: vec![l; n] }))
            }
            Cell::MicroDp { epsilon, t, a_bar } => Some(PrivacySpec::Micro(MicroDpSpec { epsilon, t, a_bar })),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cleaning-adjusted cross-fitted estimate with a confidence interval.
    #[default]
    Dr,
    /// Least squares on the zero-filled covariates, point estimate only.
    Ols,
}

fn default_folds() -> usize {
    2
}

fn default_intercept() -> bool {
    true
}

fn default_estimand() -> Estimand {
    Estimand::Ate
}

fn default_dict() -> DictKind {
    DictKind::Interacted
}

/// JSON schema of `coverage --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub cells: Vec<Cell>,
    pub k_values: Vec<usize>,
    #[serde(default = "default_estimand")]
    pub estimand: Estimand,
    #[serde(default = "default_dict")]
    pub dict: DictKind,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub reps: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_intercept")]
    pub intercept: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.n < 2 || self.p < 2 || self.r == 0 || self.r > self.n.min(self.p) {
            return Err(Error::Config(format!("invalid dimensions n={}, p={}, r={}", self.n, self.p, self.r)));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k == 0 || k > self.n.min(self.p)) {
            return Err(Error::Config(format!("k={k} must lie in 1..={}", self.n.min(self.p))));
        }
        if !matches!(self.estimand, Estimand::Ate) {
            return Err(Error::Config("the simulation design supports the ate estimand only".into()));
        }
        crate::eiv::check_compatible(&self.estimand, self.dict)?;
        for cell in &self.cells {
            cell.corruption(self.r, 0)?;
            match cell.privacy(self.n, self.p) {
                Some(PrivacySpec::Central(c)) => c.validate()?,
                Some(PrivacySpec::Micro(m)) => {
                    m.validate()?;
                    if m.t > self.p {
                        return Err(Error::Config(format!("T={} exceeds p={}", m.t, self.p)));
                    }
                }
                None => {}
            }
        }
        Ok(())
    }
}

/// Simulated data for replication seed `seed`.
pub fn generate(config: &ExperimentConfig, cell: &Cell, seed: u64) -> Result<CorruptedDataset> {
    let spec = cell.corruption(config.r, seed)?;
    let sim = corrupt::simulate_dgp_full(config.n, config.p, config.r, &spec, seed)?;
    let mut data = sim.dataset;
    if let Some(privacy) = cell.privacy(config.n, config.p) {
        data.z = privacy::privatize(&sim.signal.values, &privacy, seed)?;
    }
    Ok(data)
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub seed: u64,
    pub theta_hat: f64,
    /// `σ̂/√n`; absent for point-estimate-only methods.
    pub se: Option<f64>,
    pub covered: Option<bool>,
}

fn run_rep(config: &ExperimentConfig, cell: &Cell, k: usize, rep: u64) -> Result<RepRecord> {
    let seed = rng::replication_seed(config.base_seed, rep);
    let data = generate(config, cell, seed)?;
    let theta0 = data.theta_true.unwrap_or(corrupt::DGP_THETA);
    match config.method {
        Method::Dr => {
            let cfg = CrossFitConfig { k, folds: config.folds, seed, intercept: config.intercept, pinv_tol: linalg::PINV_TOL };
            let r: InferenceResult = dr::cross_fit_estimate(&data, &config.estimand, config.dict, &cfg)?;
            if !(r.theta_hat.is_finite() && r.se.is_finite()) {
                return Err(Error::DegenerateFit("non-finite estimate".into()));
            }
            Ok(RepRecord { rep, seed, theta_hat: r.theta_hat, se: Some(r.se), covered: Some(r.covers(theta0)) })
        }
        Method::Ols => Ok(RepRecord { rep, seed, theta_hat: dr::naive_ols(&data)?, se: None, covered: None }),
    }
}

/// Order-independent collection of replication outcomes. Merging shards in
/// any order and finalizing gives bit-identical statistics, because
/// finalization sorts by replication index before summing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageAccumulator {
    records: Vec<RepRecord>,
    failed: Vec<u64>,
}

impl CoverageAccumulator {
    pub fn push(&mut self, rep: u64, outcome: std::result::Result<RepRecord, String>) {
        match outcome {
            Ok(r) => self.records.push(r),
            Err(_) => self.failed.push(rep),
        }
    }

    pub fn merge(&mut self, other: CoverageAccumulator) {
        self.records.extend(other.records);
        self.failed.extend(other.failed);
    }

    pub fn records(&self) -> Vec<RepRecord> {
        let mut r = self.records.clone();
        r.sort_by_key(|x| x.rep);
        r
    }

    pub fn finalize(&self, cell_id: usize, corruption: String, k: usize) -> CoverageRow {
        let records = self.records();
        let thetas: Vec<f64> = records.iter().map(|r| r.theta_hat).collect();
        let ses: Vec<f64> = records.iter().filter_map(|r| r.se).collect();
        let covered: Vec<bool> = records.iter().filter_map(|r| r.covered).collect();
        let reps_ok = records.len();
        let reps_failed = self.failed.len();
        let total = reps_ok + reps_failed;
        CoverageRow {
            cell_id,
            corruption,
            k,
            reps: total,
            mean_theta: if thetas.is_empty() { None } else { Some(linalg::mean(&thetas)) },
            mean_se: if ses.is_empty() { None } else { Some(linalg::mean(&ses)) },
            coverage: if covered.is_empty() {
                None
            } else {
                Some(covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64)
            },
            reps_failed,
            flagged: total > 0 && reps_failed as f64 > FAILURE_FLAG_SHARE * total as f64,
        }
    }
}

/// Summary of one grid entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub cell_id: usize,
    pub corruption: String,
    pub k: usize,
    pub reps: usize,
    pub mean_theta: Option<f64>,
    /// Mean of `σ̂/√n`.
    pub mean_se: Option<f64>,
    /// Share of successful replications whose interval covers `θ₀`.
    pub coverage: Option<f64>,
    pub reps_failed: usize,
    pub flagged: bool,
}

/// Run replications `reps` (1-based indices) of one grid entry in parallel.
pub fn run_reps(config: &ExperimentConfig, cell: &Cell, k: usize, reps: std::ops::RangeInclusive<u64>) -> CoverageAccumulator {
    let outcomes: Vec<(u64, std::result::Result<RepRecord, String>)> = reps
        .into_par_iter()
        .map(|t| (t, run_rep(config, cell, k, t).map_err(|e| e.to_string())))
        .collect();
    let mut acc = CoverageAccumulator::default();
    for (t, o) in outcomes {
        acc.push(t, o);
    }
    acc
}

pub fn run_cell(config: &ExperimentConfig, cell_id: usize, k: usize) -> Result<CoverageRow> {
    config.validate()?;
    let cell = config.cells.get(cell_id).ok_or_else(|| Error::Config(format!("no cell {cell_id}")))?;
    Ok(run_reps(config, cell, k, 1..=config.reps as u64).finalize(cell_id, cell.label(), k))
}

pub fn run_grid(config: &ExperimentConfig) -> Result<Vec<CoverageRow>> {
    config.validate()?;
    let mut rows = Vec::with_capacity(config.cells.len() * config.k_values.len());
    for cell_id in 0..config.cells.len() {
        for &k in &config.k_values {
            rows.push(run_cell(config, cell_id, k)?);
        }
    }
    Ok(rows)
}

/// `(θ̂ − θ₀)/(σ̂/√n)` for every successful replication, in replication order.
pub fn studentized(records: &[RepRecord], theta0: f64) -> Vec<f64> {
    records.iter().filter_map(|r| r.se.map(|se| (r.theta_hat - theta0) / se)).collect()
}

pub fn studentized_dump(config: &ExperimentConfig, cell_id: usize, k: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let cell = config.cells.get(cell_id).ok_or_else(|| Error::Config(format!("no cell {cell_id}")))?;
    let acc = run_reps(config, cell, k, 1..=config.reps as u64);
    Ok(studentized(&acc.records(), corrupt::DGP_THETA))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn write_rows_csv<W: Write>(rows: &[CoverageRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell_id", "corruption", "k", "reps", "mean_theta", "mean_se", "coverage", "reps_failed", "flagged"])?;
    for r in rows {
        w.write_record([
            r.cell_id.to_string(),
            r.corruption.clone(),
            r.k.to_string(),
            r.reps.to_string(),
            fmt_opt(r.mean_theta),
            fmt_opt(r.mean_se),
            fmt_opt(r.coverage),
            r.reps_failed.to_string(),
            r.flagged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_studentized_csv<W: Write>(values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "studentized"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:.16e}")])?;
    }
    w.flush()?;
    Ok(())
}
