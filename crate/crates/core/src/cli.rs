//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime error. Results go to
//! `--out` or standard output; diagnostics go to standard error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::clean;
use crate::corrupt::{self, DGP_THETA};
use crate::dict::DictKind;
use crate::dr::{self, CrossFitConfig, Estimand, InferenceResult, Kernel};
use crate::eiv;
use crate::error::{Error, Result};
use crate::harness::{self, Cell, ExperimentConfig, NoiseName};
use crate::io::{self as dataio, Sidecar, SCHEMA_VERSION};
use crate::linalg;
use crate::privacy::{self, CentralDpSpec, MicroDpSpec, PlDiagnostic, SubExpBound};

#[derive(Debug, Parser)]
#[command(name = "cleancausal", version, about = "Causal inference with corrupted covariates")]
struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the corrupted-covariate design and write it as CSV.
    Simulate(SimulateArgs),
    /// Singular values of the filled covariate matrix.
    Scree(ScreeArgs),
    /// Cross-fitted estimate with a 95% confidence interval.
    Estimate(EstimateArgs),
    /// Monte Carlo coverage table.
    Coverage(CoverageArgs),
    /// Laplace noise calibration for a privacy budget.
    PrivacyCalibrate(PrivacyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    None,
    Gaussian,
    Laplace,
    Discretize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, value_enum, default_value = "none")]
    noise: NoiseArg,
    /// Noise variance over signal variance.
    #[arg(long, default_value_t = 0.0)]
    ratio: f64,
    /// Share of covariate cells that are missing.
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    /// Positively dependent missingness within rows.
    #[arg(long)]
    correlated: bool,
}

#[derive(Debug, Args)]
struct ScreeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Treat every column as a covariate.
    #[arg(long)]
    matrix: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimandArg {
    Ate,
    Late,
    Policy,
    Derivative,
    Plm,
    Pliv,
    Cate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Gaussian,
    Epanechnikov,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    estimand: EstimandArg,
    /// identity, interacted, plinear or quad; defaults to the one the
    /// estimand requires.
    #[arg(long)]
    dict: Option<DictKind>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 2)]
    folds: usize,
    #[arg(long)]
    no_intercept: bool,
    /// Policy `x -> scale·x + shift`, applied to every covariate.
    #[arg(long, default_value_t = 1.0)]
    policy_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    policy_shift: f64,
    /// Localization point for `cate`.
    #[arg(long)]
    v: Option<f64>,
    /// Bandwidth for `cate`; `inf` gives the plain ATE.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum, default_value = "gaussian")]
    kernel: KernelArg,
    /// Use the `W` column as unit weights (plm, pliv).
    #[arg(long)]
    weighted: bool,
}

#[derive(Debug, Args)]
struct CoverageArgs {
    /// Experiment configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Also write studentized estimates of every grid entry here.
    #[arg(long)]
    studentized: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Regime {
    Central,
    Micro,
}

#[derive(Debug, Args)]
struct PrivacyArgs {
    #[arg(long, value_enum)]
    regime: Regime,
    #[arg(long)]
    epsilon: f64,
    /// Bound on the magnitude of any microdata entry.
    #[arg(long)]
    a_bar: f64,
    /// Published variables (central).
    #[arg(long)]
    p: Option<usize>,
    /// Individuals per aggregate unit (central).
    #[arg(long)]
    l: Option<f64>,
    /// Units, for the p/L diagnostic (central).
    #[arg(long)]
    n: Option<usize>,
    /// Privatized covariates per row (micro).
    #[arg(long)]
    t: Option<usize>,
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {t} threads: {e}")))?;
            pool.install(|| dispatch(&cli))
        }
        None => dispatch(&cli),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate(a) => simulate(a, seed, out),
        Command::Scree(a) => scree(a, out),
        Command::Estimate(a) => estimate(a, seed, out),
        Command::Coverage(a) => coverage(a, cli.seed, out),
        Command::PrivacyCalibrate(a) => privacy_calibrate(a, out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn emit_json<S: Serialize>(out: Option<&Path>, value: &S) -> Result<()> {
    emit(out, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn simulate(a: &SimulateArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let noise = match a.noise {
        NoiseArg::None => NoiseName::None,
        NoiseArg::Gaussian => NoiseName::Gaussian,
        NoiseArg::Laplace => NoiseName::Laplace,
        NoiseArg::Discretize => NoiseName::Discretize,
    };
    if a.n < 2 || a.p < 2 || a.r == 0 || a.r > a.n.min(a.p) {
        return Err(Error::Config(format!("invalid dimensions n={}, p={}, r={}", a.n, a.p, a.r)));
    }
    let cell = Cell::Synthetic { noise, ratio: a.ratio, missing: a.missing, correlated: a.correlated };
    let spec = cell.corruption(a.r, seed)?;
    let data = corrupt::simulate_dgp(a.n, a.p, a.r, &spec, seed)?;
    emit(out, |w| dataio::write_dataset(&data, w))?;
    if let Some(path) = out {
        let sidecar = Sidecar { schema_version: SCHEMA_VERSION, theta_true: data.theta_true, n: a.n, p: a.p, r: a.r, seed, corruption: spec };
        emit_json(Some(&path.with_extension("json")), &sidecar)?;
    }
    Ok(())
}

fn scree(a: &ScreeArgs, out: Option<&Path>) -> Result<()> {
    let file = open(&a.input)?;
    let z = if a.matrix { dataio::read_matrix(file)? } else { dataio::read_dataset(file, false)?.z };
    let values = clean::scree(&z)?;
    emit(out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["index", "singular_value"])?;
        for (i, s) in values.iter().enumerate() {
            csv.write_record([(i + 1).to_string(), dataio::format_float(*s)])?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn build_estimand(a: &EstimateArgs, p: usize) -> Result<Estimand> {
    Ok(match a.estimand {
        EstimandArg::Ate => Estimand::Ate,
        EstimandArg::Late => Estimand::Late,
        EstimandArg::Policy => Estimand::PolicyAffine { t1: vec![a.policy_scale; p], t2: vec![a.policy_shift; p] },
        EstimandArg::Derivative => Estimand::AverageDerivative,
        EstimandArg::Plm => Estimand::PartiallyLinear { weighted: a.weighted },
        EstimandArg::Pliv => Estimand::Pliv { weighted: a.weighted },
        EstimandArg::Cate => {
            let (Some(v), Some(h)) = (a.v, a.h) else {
                return Err(Error::Config("cate needs --v and --h".into()));
            };
            let kernel = match a.kernel {
                KernelArg::Gaussian => Kernel::Gaussian,
                KernelArg::Epanechnikov => Kernel::Epanechnikov,
            };
            Estimand::LocalizedAte { v, h, kernel }
        }
    })
}

#[derive(Serialize)]
struct EstimateConfigEcho<'a> {
    input: String,
    estimand: &'a Estimand,
    dict: DictKind,
    k: usize,
    folds: usize,
    intercept: bool,
    seed: u64,
    pinv_tol: f64,
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    schema_version: u32,
    config: EstimateConfigEcho<'a>,
    result: &'a InferenceResult,
}

fn estimate(a: &EstimateArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    // Pairing and flag checks come before any file is touched.
    let probe = build_estimand(a, 0)?;
    let dict = a.dict.unwrap_or_else(|| eiv::required_dict(&probe));
    eiv::check_compatible(&probe, dict)?;
    probe.validate()?;
    if a.weighted && !matches!(a.estimand, EstimandArg::Plm | EstimandArg::Pliv) {
        return Err(Error::Config("--weighted applies to plm and pliv only".into()));
    }
    let input = a.input.as_deref().ok_or_else(|| Error::Config("--input is required".into()))?;
    let k = a.k.ok_or_else(|| Error::Config("--k is required".into()))?;

    let data = dataio::read_dataset(open(input)?, probe.is_ratio())?;
    let estimand = build_estimand(a, data.p())?;
    let config = CrossFitConfig { k, folds: a.folds, seed, intercept: !a.no_intercept, pinv_tol: linalg::PINV_TOL };
    let result = dr::cross_fit_estimate(&data, &estimand, dict, &config)?;
    let doc = EstimateOutput {
        schema_version: SCHEMA_VERSION,
        config: EstimateConfigEcho {
            input: input.display().to_string(),
            estimand: &estimand,
            dict,
            k,
            folds: a.folds,
            intercept: config.intercept,
            seed,
            pinv_tol: config.pinv_tol,
        },
        result: &result,
    };
    emit_json(out, &doc)
}

fn coverage(a: &CoverageArgs, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut config: ExperimentConfig =
        serde_json::from_reader(io::BufReader::new(open(&a.config)?)).map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    if let Some(s) = seed {
        config.base_seed = s;
    }
    config.validate()?;
    let mut rows = Vec::new();
    let mut dump: Vec<(usize, usize, u64, f64)> = Vec::new();
    for (cell_id, cell) in config.cells.iter().enumerate() {
        for &k in &config.k_values {
            let acc = harness::run_reps(&config, cell, k, 1..=config.reps as u64);
            let row = acc.finalize(cell_id, cell.label(), k);
            if row.flagged {
                eprintln!("warning: cell {cell_id} (k={k}) lost {} of {} replications", row.reps_failed, row.reps);
            }
            rows.push(row);
            if a.studentized.is_some() {
                let records: Vec<_> = acc.records().into_iter().filter(|r| r.se.is_some()).collect();
                let values = harness::studentized(&records, DGP_THETA);
                dump.extend(records.iter().zip(values).map(|(r, v)| (cell_id, k, r.rep, v)));
            }
        }
    }
    emit(out, |w| harness::write_rows_csv(&rows, w))?;
    if let Some(path) = &a.studentized {
        let mut csv = csv::Writer::from_writer(create(path)?);
        csv.write_record(["cell_id", "k", "rep", "studentized"])?;
        for (cell_id, k, rep, v) in dump {
            csv.write_record([cell_id.to_string(), k.to_string(), rep.to_string(), dataio::format_float(v)])?;
        }
        csv.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrationOutput {
    schema_version: u32,
    regime: &'static str,
    /// Laplace scale `b`.
    scale: f64,
    /// `2b²`.
    variance: f64,
    subexponential_bound: SubExpBound,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_over_l: Option<PlDiagnostic>,
}

fn privacy_calibrate(a: &PrivacyArgs, out: Option<&Path>) -> Result<()> {
    let doc = match a.regime {
        Regime::Central => {
            let (Some(p), Some(l)) = (a.p, a.l) else {
                return Err(Error::Config("central regime needs --p and --l".into()));
            };
            let spec = CentralDpSpec { epsilon: a.epsilon, p, a_bar: vec![a.a_bar], l: vec![l] };
            let scale = privacy::central_scale(&spec)?[0];
            let p_over_l = a.n.map(|n| privacy::p_over_l_diagnostic(&spec, n, p)).transpose()?;
            if let Some(d) = &p_over_l {
                if !d.passes {
                    eprintln!("warning: p/L = {} exceeds ln(np) = {}", d.max_p_over_l, d.threshold);
                }
            }
            CalibrationOutput {
                schema_version: SCHEMA_VERSION,
                regime: "central",
                scale,
                variance: 2.0 * scale * scale,
                subexponential_bound: privacy::central_subexp_bound(&spec)?,
                p_over_l,
            }
        }
        Regime::Micro => {
            let t = a.t.ok_or_else(|| Error::Config("micro regime needs --t".into()))?;
            let spec = MicroDpSpec { epsilon: a.epsilon, t, a_bar: a.a_bar };
            let scale = privacy::micro_scale(&spec)?;
            CalibrationOutput {
                schema_version: SCHEMA_VERSION,
                regime: "micro",
                scale,
                variance: 2.0 * scale * scale,
                subexponential_bound: privacy::micro_subexp_bound(&spec)?,
                p_over_l: None,
            }
        }
    };
    emit_json(out, &doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        parse_and_dispatch(std::iter::once("cleancausal").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(code(&["estimate", "--estimand", "ate", "--dict", "plinear"]), 2);
        assert_eq!(code(&["estimate", "--estimand", "policy", "--dict", "interacted"]), 2);
        assert_eq!(code(&["simulate", "--n", "10", "--bogus", "1"]), 2);
        assert_eq!(code(&["nonsense"]), 2);
        assert_eq!(code(&["estimate", "--estimand", "cate", "--k", "2"]), 2);
        assert_eq!(code(&["privacy-calibrate", "--regime", "central", "--epsilon", "0", "--a-bar", "1", "--p", "3", "--l", "2"]), 2);
        assert_eq!(code(&["simulate", "--n", "10", "--p", "10", "--r", "20"]), 2);
    }

    #[test]
    fn runtime_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("absent.csv");
        assert_eq!(code(&["scree", "--input", missing.to_str().unwrap()]), 1);
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "Y,D,Z_1\n1,0,oops\n").unwrap();
        assert_eq!(code(&["scree", "--input", bad.to_str().unwrap()]), 1);
    }

    #[test]
    fn simulate_then_estimate() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        let res = dir.path().join("r.json");
        let c = code(&["--seed", "4", "--out", csv.to_str().unwrap(), "simulate", "--n", "80", "--p", "20", "--r", "3", "--noise", "gaussian", "--ratio", "0.2", "--missing", "0.1"]);
        assert_eq!(c, 0);
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
        assert_eq!(sidecar.theta_true, Some(DGP_THETA));
        let c = code(&["--seed", "4", "--out", res.to_str().unwrap(), "estimate", "--input", csv.to_str().unwrap(), "--estimand", "ate", "--k", "3"]);
        assert_eq!(c, 0);
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&res).unwrap()).unwrap();
        assert_eq!(doc["schema_version"], SCHEMA_VERSION);
        assert_eq!(doc["config"]["dict"], "interacted");
        assert_eq!(doc["result"]["n"], 80);
        assert_eq!(doc["result"]["psi"].as_array().unwrap().len(), 80);
    }
}
