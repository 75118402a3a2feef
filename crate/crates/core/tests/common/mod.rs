//! Shared oracles for the integration tests. Nothing here calls into the
//! library's linear algebra.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ACCEPTANCE_SEED: u64 = 0x5EED_2026;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: eigenvalues in
/// nonincreasing order and eigenvectors as matching columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
        }
        if off <= 1e-32 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// `M·W_S·W_Sᵀ` for the eigenvectors `W_S` of `MᵀM` selected by `cols`.
pub fn project_onto(m: &DMatrix<f64>, w: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let ws = DMatrix::from_fn(w.nrows(), cols.len(), |r, c| w[(r, cols[c])]);
    m * &ws * ws.transpose()
}

/// Best rank-`k` approximation through the eigenvectors of `MᵀM`.
pub fn oracle_truncate(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (_, w) = jacobi_eigen(&(m.transpose() * m));
    project_onto(m, &w, &(0..k).collect::<Vec<_>>())
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    frobenius(&(a - b)) / frobenius(b).max(f64::MIN_POSITIVE)
}

/// Entries uniform on `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Variance with divisor `n`.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn report(criterion: &str, pass: bool, detail: &str) {
    println!("ACCEPTANCE {criterion}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
}

/// One randomly drawn fitting problem: corruption, dimensions and estimand
/// all vary with `seed`.
pub struct BalanceCase {
    pub label: String,
    /// Library diagnostic: how far `M̂` sits from the row space of `B`.
    pub row_space_residual: f64,
    /// `max_j |(1/m) Σ_i b_ij (b_i · η̂) − M̂_j|`, computed here by loops.
    pub balance_residual: f64,
}

pub fn balance_case(seed: u64) -> BalanceCase {
    use cleancausal::clean;
    use cleancausal::corrupt::{self, CorruptionSpec, MissingSpec, NoiseKind, Rates};
    use cleancausal::dict::DictKind;
    use cleancausal::dr::{Estimand, Kernel};
    use cleancausal::eiv::{self, Design, TrainInput};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(40..=120);
    let p = rng.random_range(8..=30);
    let r = rng.random_range(2..=4);
    let k = rng.random_range(r..=r + 3);
    let sd = rng.random_range(0.0..1.5);
    let noise = match rng.random_range(0..4) {
        0 => NoiseKind::None,
        1 => NoiseKind::Gaussian { sd },
        2 => NoiseKind::Laplace { sd },
        _ => NoiseKind::DiscretizePoisson,
    };
    let rho = [1.0, 0.9, 0.7][rng.random_range(0..3)];
    let missing = MissingSpec { rates: Rates::Uniform(rho), correlated: rng.random_bool(0.3) };
    let spec = CorruptionSpec { noise: noise.clone(), missing, seed };
    let mut data = corrupt::simulate_dgp(n, p, r, &spec, seed).unwrap();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (estimand, kind) = match rng.random_range(0..5) {
        0 => (Estimand::Ate, DictKind::Interacted),
        1 => {
            let t1 = (0..p).map(|_| rng.random_range(0.5..1.5)).collect();
            let t2 = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
            (Estimand::PolicyAffine { t1, t2 }, DictKind::Identity)
        }
        2 => (Estimand::AverageDerivative, DictKind::QuadraticInteracted),
        3 => (Estimand::PartiallyLinear { weighted: false }, DictKind::PartiallyLinear),
        _ => {
            data.v = Some(v);
            (Estimand::LocalizedAte { v: 0.0, h: 0.5, kernel: Kernel::Gaussian }, DictKind::Interacted)
        }
    };
    if matches!(kind, DictKind::QuadraticInteracted | DictKind::PartiallyLinear) {
        // Continuous treatment for the derivative and partially linear cases.
        data.d = Some((0..n).map(|_| rng.random_range(0.0..2.0)).collect());
    }
    let d = data.d.clone().unwrap();
    let y = data.y.clone().unwrap();
    let design = Design::for_estimand(&estimand, kind, p, true, data.v.is_some()).unwrap();
    let input = TrainInput { z: &data.z, d: &d, responses: &[&y], v: data.v.as_deref() };
    let trained = eiv::fit_nuisances(&input, &estimand, &design, k, cleancausal::linalg::PINV_TOL).unwrap();

    // Rebuild B from the cleaned matrix and check balance entry by entry.
    let (xhat, _) = clean::fit_cleaning(&data.z, k).unwrap();
    let xa = design.augment_matrix(data.v.as_deref(), &xhat.values).unwrap();
    let b = design.dictionary().apply_matrix(&d, &xa).unwrap();
    let eta = trained.balance.coef();
    let (m, q) = b.shape();
    let fitted: Vec<f64> = (0..m).map(|i| (0..q).map(|j| b[(i, j)] * eta[j]).sum()).collect();
    let mut worst: f64 = 0.0;
    for j in 0..q {
        let achieved = (0..m).map(|i| b[(i, j)] * fitted[i]).sum::<f64>() / m as f64;
        worst = worst.max((achieved - trained.moment.m_hat[j]).abs());
    }
    BalanceCase {
        label: format!("n={n} p={p} r={r} k={k} {} {noise:?} rho={rho}", estimand.name()),
        row_space_residual: trained.diagnostics.moment_row_space_residual,
        balance_residual: worst,
    }
}
