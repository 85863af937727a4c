//! Quantization error measurement and the closed-form error bounds.
//!
//! For a matrix with max entry magnitude `M` quantized at `b` bits, both the
//! spectral and Frobenius error are bounded by
//! `sqrt(m n) * M / (2 (2^(b-1) - 1))`; the two bounds share the closed form
//! but are checked against different measured norms.

use rayon::prelude::*;

use crate::dump::{CacheKind, KVDump};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quant::{self, max_code};
use crate::spectral;

/// Measured errors and bound checks for one matrix at one bit-width.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub bit_width: u8,
    pub mse: f64,
    pub frobenius_error: f64,
    pub spectral_error: f64,
    pub spectral_bound: f64,
    pub frobenius_bound: f64,
    pub spectral_bound_ok: bool,
    pub frobenius_bound_ok: bool,
}

/// Mean squared entrywise difference; 0 iff the matrices are equal.
pub fn mse(a: &Matrix, a_hat: &Matrix) -> Result<f64> {
    if a.rows() != a_hat.rows() || a.cols() != a_hat.cols() {
        return Err(Error::Parameter(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            a_hat.rows(),
            a_hat.cols()
        )));
    }
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(a_hat.as_slice())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

fn bound(m_max: f64, rows: usize, cols: usize, bits: u8) -> f64 {
    ((rows * cols) as f64).sqrt() * m_max / (2.0 * max_code(bits) as f64)
}

/// Spectral-norm error bound: `sqrt(m n) * m_max / (2 (2^(b-1) - 1))`.
pub fn spectral_bound(m_max: f64, rows: usize, cols: usize, bits: u8) -> f64 {
    bound(m_max, rows, cols, bits)
}

/// Frobenius-norm error bound; same closed form as the spectral bound but
/// compared against the measured Frobenius error.
pub fn frobenius_bound(m_max: f64, rows: usize, cols: usize, bits: u8) -> f64 {
    bound(m_max, rows, cols, bits)
}

/// Absolute slack granted to the bound checks for floating-point noise.
pub const BOUND_SLACK: f64 = 1e-9;

/// Quantize, dequantize, measure both error norms, and compare each against
/// its bound evaluated with the matrix's own max magnitude.
pub fn verify_bounds(a: &Matrix, bits: u8) -> Result<ErrorRecord> {
    let q = quant::quantize(a, bits)?;
    let a_hat = quant::dequantize(&q)?;
    let diff = a.sub(&a_hat)?;

    let mse_value = mse(a, &a_hat)?;
    let frob_err = spectral::frobenius_norm(&diff);
    let spec_err = if frob_err == 0.0 {
        0.0
    } else {
        spectral::spectral_norm(&diff, spectral::DEFAULT_TOL, spectral::DEFAULT_MAX_ITERS)?
    };

    let m_max = q.max_magnitude() as f64;
    let s_bound = spectral_bound(m_max, a.rows(), a.cols(), bits);
    let f_bound = frobenius_bound(m_max, a.rows(), a.cols(), bits);
    Ok(ErrorRecord {
        bit_width: bits,
        mse: mse_value,
        frobenius_error: frob_err,
        spectral_error: spec_err,
        spectral_bound: s_bound,
        frobenius_bound: f_bound,
        spectral_bound_ok: spec_err <= s_bound + BOUND_SLACK,
        frobenius_bound_ok: frob_err <= f_bound + BOUND_SLACK,
    })
}

/// One record per bit-width in `[2, 8]`.
pub fn bit_sweep(a: &Matrix) -> Result<Vec<ErrorRecord>> {
    (quant::MIN_BITS..=quant::MAX_BITS)
        .map(|bits| verify_bounds(a, bits))
        .collect()
}

/// Least-squares slope of `log2(y)` against `x`; pairs with `y <= 0` are
/// skipped (an exactly-zero error carries no slope information).
pub fn log2_slope(points: &[(f64, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, y)| *y > 0.0)
        .map(|&(x, y)| (x, y.log2()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let cov: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = usable.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    (var > 0.0).then(|| cov / var)
}

/// Error record for one matrix of a dump.
#[derive(Debug, Clone)]
pub struct MatrixErrorRecord {
    pub layer: usize,
    pub head: usize,
    pub kind: CacheKind,
    /// Short-sequence regime flag (`seq_len < d_head`); such matrices are
    /// reported, not skipped.
    pub short_sequence: bool,
    pub record: ErrorRecord,
}

/// Mean and population standard deviation of MSE for one cache kind.
#[derive(Debug, Clone, PartialEq)]
pub struct KindSummary {
    pub kind: CacheKind,
    pub bit_width: u8,
    pub mean_mse: f64,
    pub std_mse: f64,
}

/// Evaluation of a whole dump at a (b_K, b_V) setting.
#[derive(Debug, Clone)]
pub struct DumpEvaluation {
    /// Ordered by (layer, head), K before V.
    pub records: Vec<MatrixErrorRecord>,
    /// K summary then V summary.
    pub summary: [KindSummary; 2],
}

impl DumpEvaluation {
    pub fn summary_for(&self, kind: CacheKind) -> &KindSummary {
        self.summary
            .iter()
            .find(|s| s.kind == kind)
            .expect("both kinds summarized")
    }
}

fn population_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Quantize every K at `bits_k` and every V at `bits_v`, verify bounds, and
/// summarize per cache kind. (layer, head) pairs run in parallel with a
/// deterministic index-ordered merge.
pub fn evaluate_dump(dump: &KVDump, bits_k: u8, bits_v: u8) -> Result<DumpEvaluation> {
    dump.validate()?;
    let short = dump.seq_len < dump.d_head;
    let pairs: Vec<(usize, usize)> = (0..dump.n_layers)
        .flat_map(|l| (0..dump.n_heads).map(move |h| (l, h)))
        .collect();

    let per_pair: Vec<Result<[MatrixErrorRecord; 2]>> = pairs
        .par_iter()
        .map(|&(layer, head)| {
            let k = verify_bounds(dump.key(layer, head), bits_k)?;
            let v = verify_bounds(dump.value(layer, head), bits_v)?;
            Ok([
                MatrixErrorRecord {
                    layer,
                    head,
                    kind: CacheKind::Key,
                    short_sequence: short,
                    record: k,
                },
                MatrixErrorRecord {
                    layer,
                    head,
                    kind: CacheKind::Value,
                    short_sequence: short,
                    record: v,
                },
            ])
        })
        .collect();

    let mut records = Vec::with_capacity(pairs.len() * 2);
    for pair in per_pair {
        records.extend(pair?);
    }

    let summary = [CacheKind::Key, CacheKind::Value].map(|kind| {
        let mses: Vec<f64> = records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.record.mse)
            .collect();
        let (mean, std) = population_stats(&mses);
        KindSummary {
            kind,
            bit_width: if kind == CacheKind::Key {
                bits_k
            } else {
                bits_v
            },
            mean_mse: mean,
            std_mse: std,
        }
    });

    Ok(DumpEvaluation { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::synth::{gaussian_matrix, synthesize_dump};

    #[test]
    fn mse_of_identical_matrices_is_zero() {
        let a = gaussian_matrix(4, 6, 1.0, 1).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mse_worked_example() {
        let a = Matrix::from_rows(&[&[1.0, -1.0], &[0.5, -0.25]]).unwrap();
        let a_hat = quant::quantize_dequantize(&a, 2).unwrap();
        assert_eq!(a_hat.as_slice(), &[1.0, -1.0, 1.0, 0.0]);
        assert_eq!(mse(&a, &a_hat).unwrap(), 0.078125);
    }

    #[test]
    fn mse_of_constant_shift() {
        let a = gaussian_matrix(5, 5, 1.0, 2).unwrap();
        let c = 0.5f32;
        let shifted = Matrix::new(5, 5, a.as_slice().iter().map(|&x| x + c).collect()).unwrap();
        let got = mse(&a, &shifted).unwrap();
        // f32 rounding of (x + c) perturbs each difference at ~1e-7 relative.
        assert!((got - 0.25).abs() < 1e-6, "{got}");
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = Matrix::zeros(2, 3).unwrap();
        let b = Matrix::zeros(3, 2).unwrap();
        assert!(matches!(mse(&a, &b), Err(Error::Parameter(_))));
    }

    #[test]
    fn bound_plug_in_values() {
        assert_eq!(spectral_bound(0.0, 10, 10, 4), 0.0);
        assert_eq!(spectral_bound(1.0, 1, 1, 2), 0.5);
        let got = spectral_bound(1.0, 4, 4, 4);
        assert!((got - 4.0 / 14.0).abs() < 1e-12, "{got}");

        assert_eq!(frobenius_bound(0.0, 3, 3, 2), 0.0);
        assert_eq!(frobenius_bound(1.0, 1, 1, 2), 0.5);
        // sqrt(16) * 2 / (2 * 3) = 4/3
        let got = frobenius_bound(2.0, 2, 8, 3);
        assert!((got - 4.0 / 3.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn verify_bounds_zero_matrix() {
        let rec = verify_bounds(&Matrix::zeros(4, 4).unwrap(), 3).unwrap();
        assert_eq!(rec.mse, 0.0);
        assert_eq!(rec.frobenius_error, 0.0);
        assert_eq!(rec.spectral_error, 0.0);
        assert_eq!(rec.spectral_bound, 0.0);
        assert!(rec.spectral_bound_ok && rec.frobenius_bound_ok);
    }

    #[test]
    fn verify_bounds_grid_aligned_matrix() {
        // b=3: alpha = 3/3 = 1, so integer entries with max magnitude 3 are exact.
        let a = Matrix::from_rows(&[&[3.0, -3.0], &[0.0, -1.0]]).unwrap();
        let rec = verify_bounds(&a, 3).unwrap();
        assert_eq!(rec.frobenius_error, 0.0);
        assert_eq!(rec.spectral_error, 0.0);
        assert!(rec.spectral_bound_ok && rec.frobenius_bound_ok);
    }

    #[test]
    fn bounds_hold_on_random_matrices() {
        let mut rng = SplitMix64::new(0xB0);
        for trial in 0..50 {
            let m = 1 + (rng.next_u64() % 40) as usize;
            let n = 1 + (rng.next_u64() % 40) as usize;
            let a = gaussian_matrix(m, n, 2.0, rng.next_u64()).unwrap();
            for bits in [2u8, 4, 8] {
                let rec = verify_bounds(&a, bits).unwrap();
                assert!(
                    rec.spectral_bound_ok && rec.frobenius_bound_ok,
                    "trial {trial} {m}x{n} b={bits}: {rec:?}"
                );
                // MSE and Frobenius error are the same quantity up to 1/(mn).
                let derived = rec.frobenius_error.powi(2) / (m * n) as f64;
                let rel = if rec.mse == 0.0 {
                    (derived - rec.mse).abs()
                } else {
                    (derived - rec.mse).abs() / rec.mse
                };
                assert!(rel <= 1e-6, "mse consistency: {rel}");
            }
        }
    }

    #[test]
    fn sweep_on_zero_matrix_is_all_zero() {
        let records = bit_sweep(&Matrix::zeros(3, 7).unwrap()).unwrap();
        assert_eq!(records.len(), 7);
        for rec in records {
            assert_eq!(rec.mse, 0.0);
            assert_eq!(rec.frobenius_error, 0.0);
        }
    }

    #[test]
    fn sweep_mse_is_monotone() {
        let a = gaussian_matrix(32, 64, 1.0, 8).unwrap();
        let records = bit_sweep(&a).unwrap();
        assert!(records.last().unwrap().mse <= records.first().unwrap().mse);
        for pair in records.windows(2) {
            assert!(pair[1].mse <= pair[0].mse + 1e-12);
        }
    }

    #[test]
    fn sweep_slope_matches_exponential_decay() {
        let a = gaussian_matrix(128, 1024, 1.0, 31).unwrap();
        let records = bit_sweep(&a).unwrap();
        let points: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (r.bit_width as f64, r.mse))
            .collect();
        let slope = log2_slope(&points).unwrap();
        assert!(
            (-2.2..=-1.8).contains(&slope),
            "slope {slope} outside [-2.2, -1.8]"
        );
    }

    #[test]
    fn evaluate_zero_dump() {
        let z = Matrix::zeros(2, 2).unwrap();
        let dump = KVDump::new(
            1,
            2,
            2,
            2,
            "z".into(),
            vec![(z.clone(), z.clone()), (z.clone(), z)],
        )
        .unwrap();
        let eval = evaluate_dump(&dump, 4, 2).unwrap();
        assert_eq!(eval.summary_for(CacheKind::Key).mean_mse, 0.0);
        assert_eq!(eval.summary_for(CacheKind::Value).std_mse, 0.0);
    }

    #[test]
    fn evaluate_single_matrix_dump_has_zero_std() {
        let (k, v) = crate::synth::synthesize_kv_pair(2.0, 8, 16, 3).unwrap();
        let dump = KVDump::new(1, 1, 8, 16, "one".into(), vec![(k.clone(), v)]).unwrap();
        let eval = evaluate_dump(&dump, 3, 3).unwrap();
        assert_eq!(eval.records.len(), 2);
        assert_eq!(eval.summary_for(CacheKind::Key).std_mse, 0.0);
        assert!(
            (eval.summary_for(CacheKind::Key).mean_mse - eval.records[0].record.mse).abs() < 1e-15
        );
    }

    #[test]
    fn key_error_dominates_at_table_ratio() {
        let dump = synthesize_dump(6.2, 2, 3, 16, 64, 9, "ratio62").unwrap();
        let eval = evaluate_dump(&dump, 2, 2).unwrap();
        for layer in 0..2 {
            let layer_mean = |kind: CacheKind| {
                let v: Vec<f64> = eval
                    .records
                    .iter()
                    .filter(|r| r.layer == layer && r.kind == kind)
                    .map(|r| r.record.mse)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            assert!(layer_mean(CacheKind::Key) > layer_mean(CacheKind::Value));
        }
    }

    #[test]
    fn short_sequence_matrices_are_flagged() {
        let dump = synthesize_dump(1.0, 1, 1, 16, 8, 5, "short").unwrap();
        let eval = evaluate_dump(&dump, 4, 4).unwrap();
        assert!(eval.records.iter().all(|r| r.short_sequence));
    }

    #[test]
    fn norm_ordering_transfers_to_error_ordering() {
        // ||K||_F = 2 ||V||_F from the same generator family: at equal bits
        // the K error should exceed the V error in at least 99% of trials.
        let mut wins = 0usize;
        let trials = 100u64;
        for seed in 0..trials {
            let (k, v) = crate::synth::synthesize_kv_pair(2.0, 16, 64, 0xAB00 + seed).unwrap();
            let k_err = mse(&k, &quant::quantize_dequantize(&k, 4).unwrap()).unwrap();
            let v_err = mse(&v, &quant::quantize_dequantize(&v, 4).unwrap()).unwrap();
            if k_err > v_err {
                wins += 1;
            }
        }
        assert!(
            wins >= 99,
            "K error exceeded V error in only {wins}/{trials} trials"
        );
    }
}
