mod common;

use cleancausal::corrupt::{self, conditional_mean_check, CorruptionSpec, MissingSpec, NoiseKind, SignalMatrix};
use nalgebra::DMatrix;

fn small_signal() -> SignalMatrix {
    SignalMatrix { values: DMatrix::from_row_slice(2, 3, &[0.0, 1.5, -2.0, 0.3, -0.7, 4.0]), rank: 2 }
}

fn spec(noise: NoiseKind) -> CorruptionSpec {
    CorruptionSpec { noise, missing: MissingSpec::complete(), seed: 41 }
}

#[test]
fn gaussian_noise_has_zero_conditional_mean() {
    let reps = 100_000;
    let h = conditional_mean_check(&small_signal(), &spec(NoiseKind::Gaussian { sd: 1.0 }), reps).unwrap();
    let bound = 4.0 / (reps as f64).sqrt();
    assert!(h.iter().all(|v| v.abs() <= bound), "{h}");
}

#[test]
fn no_noise_gives_exact_zero() {
    let h = conditional_mean_check(&small_signal(), &spec(NoiseKind::None), 3).unwrap();
    assert!(h.iter().all(|&v| v == 0.0));
}

#[test]
fn discretization_has_zero_conditional_mean() {
    let reps = 100_000;
    let x = small_signal();
    let h = conditional_mean_check(&x, &spec(NoiseKind::DiscretizePoisson), reps).unwrap();
    for (m, xv) in h.iter().zip(x.values.iter()) {
        let bound = 4.0 * xv.abs().sqrt() / (reps as f64).sqrt();
        assert!(m.abs() <= bound, "mean {m} for x={xv}");
    }
}

fn noise_variance(noise: NoiseKind) -> f64 {
    let x = DMatrix::zeros(400, 250);
    let z = corrupt::corrupt_matrix(&x, &spec(noise)).unwrap().values_or(0.0);
    common::variance(z.as_slice())
}

#[test]
fn additive_noise_variance_within_five_percent() {
    for noise in [NoiseKind::Gaussian { sd: 1.3 }, NoiseKind::Laplace { sd: 1.3 }] {
        let v = noise_variance(noise.clone());
        assert!((v / 1.69 - 1.0).abs() < 0.05, "{noise:?}: variance {v}");
    }
}

#[test]
fn discretization_variance_equals_mean_absolute_signal() {
    let x = corrupt::generate_factor_signal(400, 400, 5, 77).unwrap();
    let z = corrupt::corrupt(&x, &spec(NoiseKind::DiscretizePoisson)).unwrap().z.values_or(0.0);
    let h: Vec<f64> = (&z - &x.values).iter().copied().collect();
    let mean_abs = common::mean(&x.values.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let var = common::variance(&h);
    assert!(common::mean(&h).abs() < 0.02);
    assert!((var - mean_abs).abs() <= 0.15, "Var(H)={var}, E|X|={mean_abs}");
    assert!((var - 1.7).abs() <= 0.15, "Var(H)={var}");
}

#[test]
fn same_seed_same_dataset_across_thread_pools() {
    let spec = CorruptionSpec { noise: NoiseKind::Laplace { sd: 1.0 }, missing: MissingSpec::mcar(0.8), seed: 5 };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| corrupt::simulate_dgp(50, 20, 3, &spec, 5).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a, b);
    assert_eq!(a.z.mask(), b.z.mask());
}
