//! Cross-checks of the in-house spectral path against an independent
//! eigensolver (nalgebra's symmetric eigendecomposition of the Gram matrix).

use kvq_core::matrix::Matrix;
use kvq_core::rng::SplitMix64;
use kvq_core::spectral::{frobenius_norm, singular_values, spectral_norm, svd};
use kvq_core::synth::{gaussian_matrix, generate_synthetic, SyntheticSpec};

/// Singular values from nalgebra's symmetric eigensolver on the small-side
/// Gram matrix, formed here from scratch.
fn oracle_singular_values(a: &Matrix) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    let data: Vec<f64> = a.as_slice().iter().map(|&v| v as f64).collect();
    let mat = nalgebra::DMatrix::from_row_slice(m, n, &data);
    let gram = if m <= n {
        &mat * mat.transpose()
    } else {
        mat.transpose() * &mat
    };
    let mut evals: Vec<f64> = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    evals.sort_by(|x, y| y.partial_cmp(x).unwrap());
    evals
}

fn assert_spectra_match(got: &[f64], want: &[f64], rel_tol: f64) {
    assert_eq!(got.len(), want.len());
    let scale = want.first().copied().unwrap_or(0.0).max(1e-300);
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        let tol = rel_tol * w.max(1e-9 * scale);
        assert!(
            (g - w).abs() <= tol,
            "sigma_{i}: got {g}, oracle {w} (tol {tol})"
        );
    }
}

#[test]
fn singular_values_match_oracle_on_seeded_matrices() {
    let mut rng = SplitMix64::new(0xACE);
    for trial in 0..40 {
        let m = 1 + (rng.next_u64() % 96) as usize;
        let n = 1 + (rng.next_u64() % 96) as usize;
        let a = gaussian_matrix(m, n, 1.5, rng.next_u64()).unwrap();
        let got = singular_values(&a).unwrap();
        let want = oracle_singular_values(&a);
        assert_spectra_match(&got, &want, 1e-5);

        let sum_sq: f64 = got.iter().map(|s| s * s).sum();
        let fro2 = frobenius_norm(&a).powi(2);
        assert!(
            (sum_sq - fro2).abs() <= 1e-4 * fro2,
            "trial {trial}: Parseval violated ({sum_sq} vs {fro2})"
        );
    }
}

#[test]
fn singular_values_match_oracle_at_full_scale() {
    for (seed, m, n) in [(1u64, 128usize, 1024usize), (2, 96, 640), (3, 200, 64)] {
        let a = gaussian_matrix(m, n, 1.0, seed).unwrap();
        let got = singular_values(&a).unwrap();
        let want = oracle_singular_values(&a);
        assert_spectra_match(&got, &want, 1e-5);
    }
}

#[test]
fn power_iteration_agrees_with_full_spectrum() {
    let mut rng = SplitMix64::new(0xBEEF);
    for _ in 0..20 {
        let m = 2 + (rng.next_u64() % 60) as usize;
        let n = 2 + (rng.next_u64() % 60) as usize;
        let a = gaussian_matrix(m, n, 1.0, rng.next_u64()).unwrap();
        let tol = 1e-6;
        let via_power = spectral_norm(&a, tol, 1000).unwrap();
        let via_svd = singular_values(&a).unwrap()[0];
        assert!(
            (via_power - via_svd).abs() <= 10.0 * tol * via_svd,
            "{via_power} vs {via_svd}"
        );
    }
}

#[test]
fn synthetic_spectra_verified_by_oracle() {
    let spec = SyntheticSpec {
        d_head: 2,
        seq_len: 4,
        singular_values: vec![3.0, 1.0],
        seed: 7,
    };
    let m = generate_synthetic(&spec).unwrap();
    let got = singular_values(&m).unwrap();
    let oracle = oracle_singular_values(&m);
    assert_spectra_match(&got, &oracle, 1e-6);
    assert!((got[0] - 3.0).abs() <= 3.0 * 1e-5);
    assert!((got[1] - 1.0).abs() <= 1e-5);

    // Longer spectra at a more realistic shape.
    let sigmas: Vec<f64> = (0..32).map(|i| 10.0 * 0.8f64.powi(i)).collect();
    let spec = SyntheticSpec {
        d_head: 32,
        seq_len: 128,
        singular_values: sigmas.clone(),
        seed: 99,
    };
    let m = generate_synthetic(&spec).unwrap();
    let got = singular_values(&m).unwrap();
    assert_spectra_match(&got, &sigmas, 1e-5);
}

#[test]
fn svd_reconstruction_at_full_scale() {
    let a = gaussian_matrix(128, 1024, 1.0, 55).unwrap();
    let f = svd(&a).unwrap();
    let rec = f.reconstruct();
    let mut err = 0.0f64;
    for (i, &v) in a.as_slice().iter().enumerate() {
        let d = v as f64 - rec[i];
        err += d * d;
    }
    let rel = err.sqrt() / frobenius_norm(&a);
    assert!(rel <= 1e-4, "reconstruction error {rel}");
}
