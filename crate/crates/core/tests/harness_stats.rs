mod common;

use std::process::Command;

use cleancausal::corrupt::DGP_THETA;
use cleancausal::harness::{self, Cell, ExperimentConfig, Method, NoiseName};
use statrs::distribution::{ContinuousCDF, Normal};

fn config(n: usize, p: usize, r: usize, reps: usize, k: usize) -> ExperimentConfig {
    ExperimentConfig {
        n,
        p,
        r,
        cells: vec![Cell::Synthetic { noise: NoiseName::Gaussian, ratio: 0.2, missing: 0.1, correlated: false }],
        k_values: vec![k],
        estimand: cleancausal::dr::Estimand::Ate,
        dict: cleancausal::dict::DictKind::Interacted,
        folds: 2,
        reps,
        base_seed: common::ACCEPTANCE_SEED,
        method: Method::Dr,
        intercept: true,
    }
}

/// Kolmogorov–Smirnov distance between a sample and the standard normal.
pub fn ks_to_normal(values: &[f64]) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn studentized_estimates_are_close_to_normal() {
    let mut c = config(100, 100, 5, 200, 5);
    c.cells = vec![Cell::Synthetic { noise: NoiseName::Gaussian, ratio: 0.2, missing: 0.0, correlated: false }];
    let z = harness::studentized_dump(&c, 0, 5).unwrap();
    assert_eq!(z.len(), 200);
    let d = ks_to_normal(&z);
    println!("KS distance to N(0,1): {d:.4}");
    assert!(d < 0.12, "KS distance {d}");
}

#[test]
fn ks_oracle_sanity() {
    assert!(ks_to_normal(&[0.0]) == 0.5);
    let grid: Vec<f64> = (1..1000).map(|i| Normal::new(0.0, 1.0).unwrap().inverse_cdf(i as f64 / 1000.0)).collect();
    assert!(ks_to_normal(&grid) < 0.002);
}

/// Each replication, rerun through the command line from its own seed, gives
/// a result JSON from which `(θ̂ − 2.2)·√n/σ̂` reproduces the dump.
#[test]
fn studentized_dump_matches_cli_recomputation() {
    let (n, p, r, k, reps) = (60, 30, 3, 3, 4);
    let c = config(n, p, r, reps, k);
    let dump = harness::studentized_dump(&c, 0, k).unwrap();
    assert_eq!(dump.len(), reps);
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_cleancausal");
    for (t, expected) in (1..=reps as u64).zip(&dump) {
        let seed = (common::ACCEPTANCE_SEED ^ t).to_string();
        let csv = dir.path().join(format!("rep{t}.csv"));
        let json = dir.path().join(format!("rep{t}.result.json"));
        let status = Command::new(bin)
            .args(["--seed", &seed, "--out", csv.to_str().unwrap(), "simulate"])
            .args(["--n", &n.to_string(), "--p", &p.to_string(), "--r", &r.to_string()])
            .args(["--noise", "gaussian", "--ratio", "0.2", "--missing", "0.1"])
            .status()
            .unwrap();
        assert!(status.success());
        let status = Command::new(bin)
            .args(["--seed", &seed, "--out", json.to_str().unwrap(), "estimate", "--input", csv.to_str().unwrap()])
            .args(["--estimand", "ate", "--k", &k.to_string()])
            .status()
            .unwrap();
        assert!(status.success());
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        let theta = doc["result"]["theta_hat"].as_f64().unwrap();
        let sigma = doc["result"]["sigma_hat"].as_f64().unwrap();
        let rows = doc["result"]["n"].as_f64().unwrap();
        let recomputed = (theta - DGP_THETA) * rows.sqrt() / sigma;
        assert!((recomputed - expected).abs() <= 1e-9 * expected.abs().max(1.0), "rep {t}: {recomputed} vs {expected}");
    }
}
