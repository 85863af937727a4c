//! Norms, singular value spectra, and rank analysis of cache matrices.
//!
//! Singular values come from the d x d Gram matrix on the smaller side
//! (d = min(rows, cols)), diagonalized with cyclic Jacobi rotations; this is
//! accurate and cheap for head-sized matrices. The spectral norm has a
//! separate power-iteration path so the two can cross-check each other.

use rayon::prelude::*;

use crate::dump::{CacheKind, KVDump};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Default relative tolerance for power iteration.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default power-iteration budget.
pub const DEFAULT_MAX_ITERS: usize = 1000;
/// Default relative cutoff for rank estimation.
pub const DEFAULT_RANK_REL_TOL: f64 = 1e-6;
/// Desk-scale guard: full spectra only up to this Gram dimension.
pub const MAX_SVD_DIM: usize = 512;

const JACOBI_MAX_SWEEPS: usize = 30;
const JACOBI_OFF_TOL: f64 = 1e-10;
const POWER_RESTART_SEED: u64 = 0x5EED_0001;

/// Frobenius norm: sqrt of the sum of squared entries, accumulated in f64.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt()
}

/// Largest singular value via power iteration on the smaller-side Gram
/// operator. Starts from the normalized all-ones vector; restarts from a
/// seeded random vector if the first iterate collapses.
pub fn spectral_norm(a: &Matrix, tol: f64, max_iters: usize) -> Result<f64> {
    if tol <= 0.0 {
        return Err(Error::Parameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if frobenius_norm(a) == 0.0 {
        return Ok(0.0);
    }

    let small = a.rows().min(a.cols());
    let apply = |x: &[f64]| -> (f64, Vec<f64>) {
        // Returns (sigma estimate at x, Gram * x) for unit x.
        if a.rows() <= a.cols() {
            let half = a.matvec_transposed(x);
            let sigma = norm2(&half);
            (sigma, a.matvec(&half))
        } else {
            let half = a.matvec(x);
            let sigma = norm2(&half);
            (sigma, a.matvec_transposed(&half))
        }
    };

    let mut x = vec![1.0 / (small as f64).sqrt(); small];
    let mut last = 0.0f64;
    let mut stalled = 0u32;
    let mut restarted = false;
    for iter in 0..max_iters {
        let (sigma, z) = apply(&x);
        let zn = norm2(&z);
        if zn < 1e-12 {
            if restarted {
                return Err(Error::Convergence {
                    iterations: iter,
                    last_estimate: sigma,
                });
            }
            restarted = true;
            let mut rng = crate::rng::SplitMix64::new(POWER_RESTART_SEED);
            x = (0..small).map(|_| rng.next_normal()).collect();
            let n = norm2(&x);
            x.iter_mut().for_each(|v| *v /= n);
            continue;
        }
        // For unit x the Rayleigh residual ||Bx - lambda x|| bounds the
        // distance from lambda = sigma^2 to the nearest eigenvalue, which
        // translates to a sigma error of about residual / (2 sigma).
        let lambda = sigma * sigma;
        let w: Vec<f64> = z
            .iter()
            .zip(&x)
            .map(|(&zi, &xi)| zi - lambda * xi)
            .collect();
        let residual = norm2(&w);
        if residual <= 2.0 * tol * lambda {
            return Ok(sigma);
        }
        // A dense spectral edge makes the residual stall at the local gap
        // width while the estimate barely moves. Once three consecutive
        // increments fall under half the tolerance, polish with a short
        // Krylov expansion from the stalled iterate: its top Ritz value
        // improves on the Rayleigh estimate and never exceeds the true top
        // eigenvalue.
        let change = (sigma - last).abs();
        if iter > 0 && change <= 0.5 * tol * sigma {
            stalled += 1;
            if stalled >= 3 {
                let (mu, _) = krylov_top(&apply, &x, lambda);
                return Ok(mu.max(lambda).max(0.0).sqrt());
            }
        } else {
            stalled = 0;
        }
        last = sigma;
        x = z;
        x.iter_mut().for_each(|v| *v /= zn);
    }

    // Budget exhausted with steady progress still being made: polish once
    // and accept only if the Ritz pair's own residual certifies the
    // tolerance, otherwise report non-convergence with the best estimate.
    let (_, y) = krylov_top(&apply, &x, last * last);
    let (sigma_y, by) = apply(&y);
    let mu_y = sigma_y * sigma_y;
    let res = norm2(
        &by.iter()
            .zip(&y)
            .map(|(&bi, &yi)| bi - mu_y * yi)
            .collect::<Vec<_>>(),
    );
    if res <= 2.0 * tol * mu_y {
        return Ok(sigma_y);
    }
    Err(Error::Convergence {
        iterations: max_iters,
        last_estimate: sigma_y.max(last),
    })
}

/// Spectral norm with the module defaults.
pub fn spectral_norm_default(a: &Matrix) -> Result<f64> {
    spectral_norm(a, DEFAULT_TOL, DEFAULT_MAX_ITERS)
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Top Ritz pair of the Gram operator over a short, fully reorthogonalized
/// Krylov expansion seeded at `x` (unit norm). Ritz values of a subspace
/// never exceed the true top eigenvalue, so the returned value lies in
/// `[rayleigh, lambda_max]`; the returned vector is unit norm.
fn krylov_top<F: Fn(&[f64]) -> (f64, Vec<f64>)>(
    apply: &F,
    x: &[f64],
    rayleigh: f64,
) -> (f64, Vec<f64>) {
    let steps = 8.min(x.len());
    let mut basis: Vec<Vec<f64>> = vec![x.to_vec()];
    while basis.len() < steps {
        let (_, mut w) = apply(basis.last().expect("non-empty"));
        // Two orthogonalization passes keep the tiny basis numerically clean.
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = b.iter().zip(&w).map(|(&bi, &wi)| bi * wi).sum();
                for (wk, &bk) in w.iter_mut().zip(b) {
                    *wk -= dot * bk;
                }
            }
        }
        let beta = norm2(&w);
        if beta < 1e-12 * rayleigh.abs().max(1.0) {
            break;
        }
        basis.push(w.iter().map(|v| v / beta).collect());
    }

    let k = basis.len();
    let mut projected = vec![0.0f64; k * k];
    for (j, b_j) in basis.iter().enumerate() {
        let (_, bz) = apply(b_j);
        for (i, b_i) in basis.iter().enumerate() {
            projected[i * k + j] = b_i.iter().zip(&bz).map(|(&bi, &zi)| bi * zi).sum();
        }
    }
    for i in 0..k {
        for j in 0..i {
            let avg = (projected[i * k + j] + projected[j * k + i]) / 2.0;
            projected[i * k + j] = avg;
            projected[j * k + i] = avg;
        }
    }
    let (evals, vectors) = jacobi_symmetric(&mut projected, k, true);
    let coeffs = vectors.expect("vectors requested");
    let mut y = vec![0.0f64; x.len()];
    for (i, b_i) in basis.iter().enumerate() {
        let c = coeffs[i * k]; // top eigenvector is the first column
        for (yk, &bk) in y.iter_mut().zip(b_i) {
            *yk += c * bk;
        }
    }
    let n = norm2(&y);
    if n > 0.0 {
        y.iter_mut().for_each(|v| *v /= n);
    }
    (evals[0].max(rayleigh), y)
}

/// Gram matrix of the smaller side in f64: `A A^T` if rows <= cols,
/// else `A^T A`. Row-major d x d.
fn gram_small(a: &Matrix) -> (Vec<f64>, usize) {
    let (m, n) = (a.rows(), a.cols());
    if m <= n {
        let mut g = vec![0.0f64; m * m];
        for i in 0..m {
            for j in i..m {
                let dot: f64 = a
                    .row(i)
                    .iter()
                    .zip(a.row(j))
                    .map(|(&x, &y)| x as f64 * y as f64)
                    .sum();
                g[i * m + j] = dot;
                g[j * m + i] = dot;
            }
        }
        (g, m)
    } else {
        let mut g = vec![0.0f64; n * n];
        for row in a.as_slice().chunks_exact(n) {
            for i in 0..n {
                let xi = row[i] as f64;
                for j in i..n {
                    g[i * n + j] += xi * row[j] as f64;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g[i * n + j] = g[j * n + i];
            }
        }
        (g, n)
    }
}

/// Cyclic Jacobi diagonalization of a symmetric matrix (row-major, d x d).
/// Returns eigenvalues descending; optionally accumulates eigenvectors as
/// columns of a row-major d x d matrix.
fn jacobi_symmetric(g: &mut [f64], d: usize, want_vectors: bool) -> (Vec<f64>, Option<Vec<f64>>) {
    let mut vectors = if want_vectors {
        let mut v = vec![0.0f64; d * d];
        for i in 0..d {
            v[i * d + i] = 1.0;
        }
        Some(v)
    } else {
        None
    };

    // The Frobenius norm is invariant under the rotations, so the target is fixed.
    let fro = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let target = JACOBI_OFF_TOL * fro;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                off += 2.0 * g[i * d + j] * g[i * d + j];
            }
        }
        if off.sqrt() <= target {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = g[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = g[p * d + p];
                let aqq = g[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..d {
                    let gpk = g[p * d + k];
                    let gqk = g[q * d + k];
                    g[p * d + k] = c * gpk - s * gqk;
                    g[q * d + k] = s * gpk + c * gqk;
                }
                for k in 0..d {
                    let gkp = g[k * d + p];
                    let gkq = g[k * d + q];
                    g[k * d + p] = c * gkp - s * gkq;
                    g[k * d + q] = s * gkp + c * gkq;
                }
                if let Some(v) = vectors.as_mut() {
                    for k in 0..d {
                        let vkp = v[k * d + p];
                        let vkq = v[k * d + q];
                        v[k * d + p] = c * vkp - s * vkq;
                        v[k * d + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    let evals: Vec<f64> = (0..d).map(|i| g[i * d + i]).collect();
    order.sort_by(|&i, &j| evals[j].partial_cmp(&evals[i]).expect("finite eigenvalues"));
    let sorted: Vec<f64> = order.iter().map(|&i| evals[i]).collect();
    let sorted_vectors = vectors.map(|v| {
        let mut out = vec![0.0f64; d * d];
        for (new_col, &old_col) in order.iter().enumerate() {
            for k in 0..d {
                out[k * d + new_col] = v[k * d + old_col];
            }
        }
        out
    });
    (sorted, sorted_vectors)
}

fn check_svd_guard(a: &Matrix) -> Result<usize> {
    let d = a.rows().min(a.cols());
    if d > MAX_SVD_DIM {
        return Err(Error::Size(format!(
            "min dimension {d} exceeds the {MAX_SVD_DIM} guard for full spectra"
        )));
    }
    Ok(d)
}

/// Full set of min(rows, cols) singular values, descending.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    let _ = check_svd_guard(a)?;
    let (mut g, d) = gram_small(a);
    let (evals, _) = jacobi_symmetric(&mut g, d, false);
    Ok(evals.into_iter().map(|l| l.max(0.0).sqrt()).collect())
}

/// Full SVD factors in f64: `u` is rows x r, `vt` is r x cols, r = min side.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub vt: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl SvdFactors {
    /// Rebuild `U diag(sigma) V^T` in f64, row-major rows x cols.
    pub fn reconstruct(&self) -> Vec<f64> {
        let r = self.singular_values.len();
        let mut out = vec![0.0f64; self.rows * self.cols];
        for i in 0..self.rows {
            for (k, &s) in self.singular_values.iter().enumerate() {
                let uis = self.u[i * r + k] * s;
                if uis == 0.0 {
                    continue;
                }
                let vt_row = &self.vt[k * self.cols..(k + 1) * self.cols];
                let out_row = &mut out[i * self.cols..(i + 1) * self.cols];
                for (o, &v) in out_row.iter_mut().zip(vt_row) {
                    *o += uis * v;
                }
            }
        }
        out
    }
}

/// Full SVD via the Gram route: eigenvectors of the small-side Gram matrix
/// give one factor, the other follows from `A` and the singular values.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    let _ = check_svd_guard(a)?;
    let (mut g, d) = gram_small(a);
    let (evals, vectors) = jacobi_symmetric(&mut g, d, true);
    let vectors = vectors.expect("vectors requested");
    let sigmas: Vec<f64> = evals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let (m, n) = (a.rows(), a.cols());
    let cutoff = sigmas.first().copied().unwrap_or(0.0) * 1e-12;

    if m <= n {
        // Gram was A A^T: columns of `vectors` are left singular vectors.
        let u = vectors;
        let mut vt = vec![0.0f64; d * n];
        for (k, &s) in sigmas.iter().enumerate() {
            if s <= cutoff {
                continue;
            }
            let uk: Vec<f64> = (0..m).map(|i| u[i * d + k]).collect();
            let av = a.matvec_transposed(&uk);
            for (j, &v) in av.iter().enumerate() {
                vt[k * n + j] = v / s;
            }
        }
        Ok(SvdFactors {
            u,
            singular_values: sigmas,
            vt,
            rows: m,
            cols: n,
        })
    } else {
        // Gram was A^T A: columns of `vectors` are right singular vectors.
        let mut u = vec![0.0f64; m * d];
        for (k, &s) in sigmas.iter().enumerate() {
            if s <= cutoff {
                continue;
            }
            let vk: Vec<f64> = (0..n).map(|j| vectors[j * d + k]).collect();
            let av = a.matvec(&vk);
            for (i, &v) in av.iter().enumerate() {
                u[i * d + k] = v / s;
            }
        }
        let mut vt = vec![0.0f64; d * n];
        for k in 0..d {
            for j in 0..n {
                vt[k * n + j] = vectors[j * d + k];
            }
        }
        Ok(SvdFactors {
            u,
            singular_values: sigmas,
            vt,
            rows: m,
            cols: n,
        })
    }
}

/// Count of singular values above `rel_tol * sigma_max`; 0 for the zero matrix.
pub fn rank_estimate(a: &Matrix, rel_tol: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&rel_tol) || rel_tol == 0.0 {
        return Err(Error::Parameter(format!(
            "rank tolerance must lie in (0, 1), got {rel_tol}"
        )));
    }
    let sigmas = singular_values(a)?;
    let max = sigmas.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0);
    }
    Ok(sigmas.iter().filter(|&&s| s > rel_tol * max).count())
}

/// Per-matrix spectrum summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Descending, length min(rows, cols).
    pub singular_values: Vec<f64>,
    /// Equal to `singular_values[0]`.
    pub spectral_norm: f64,
    pub frobenius_norm: f64,
    pub rank_estimate: usize,
}

/// Compute the spectrum report for one matrix.
pub fn spectrum_report(a: &Matrix, rank_rel_tol: f64) -> Result<SpectrumReport> {
    if !(0.0..1.0).contains(&rank_rel_tol) || rank_rel_tol == 0.0 {
        return Err(Error::Parameter(format!(
            "rank tolerance must lie in (0, 1), got {rank_rel_tol}"
        )));
    }
    let sigmas = singular_values(a)?;
    let spectral = sigmas.first().copied().unwrap_or(0.0);
    let rank = if spectral == 0.0 {
        0
    } else {
        sigmas
            .iter()
            .filter(|&&s| s > rank_rel_tol * spectral)
            .count()
    };
    Ok(SpectrumReport {
        spectral_norm: spectral,
        frobenius_norm: frobenius_norm(a),
        rank_estimate: rank,
        singular_values: sigmas,
    })
}

/// Spectrum report for one cache matrix of a dump.
#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub layer: usize,
    pub head: usize,
    pub kind: CacheKind,
    pub spectrum: SpectrumReport,
}

/// One statistic (mean, min or max across heads) of a layer's spectra.
#[derive(Debug, Clone)]
pub struct SpectrumStats {
    pub spectral_norm: f64,
    pub frobenius_norm: f64,
    pub singular_values: Vec<f64>,
}

/// Across-head aggregate of one layer and cache kind.
#[derive(Debug, Clone)]
pub struct LayerAggregate {
    pub layer: usize,
    pub kind: CacheKind,
    pub mean: SpectrumStats,
    pub min: SpectrumStats,
    pub max: SpectrumStats,
}

/// Full analysis of a dump: one report per matrix plus per-layer aggregates.
#[derive(Debug, Clone)]
pub struct DumpAnalysis {
    /// Ordered by (layer, head), K before V.
    pub reports: Vec<MatrixReport>,
    /// Ordered by layer, K before V.
    pub aggregates: Vec<LayerAggregate>,
}

/// Analyze every matrix of a dump and aggregate across heads per layer.
/// (layer, head) pairs are processed in parallel; results keep index order.
pub fn analyze_dump(dump: &KVDump) -> Result<DumpAnalysis> {
    analyze_dump_with(dump, DEFAULT_RANK_REL_TOL)
}

/// [`analyze_dump`] with an explicit rank cutoff.
pub fn analyze_dump_with(dump: &KVDump, rank_rel_tol: f64) -> Result<DumpAnalysis> {
    dump.validate()?;
    let pairs: Vec<(usize, usize)> = (0..dump.n_layers)
        .flat_map(|l| (0..dump.n_heads).map(move |h| (l, h)))
        .collect();

    let per_pair: Vec<Result<[MatrixReport; 2]>> = pairs
        .par_iter()
        .map(|&(layer, head)| {
            let k = spectrum_report(dump.key(layer, head), rank_rel_tol)?;
            let v = spectrum_report(dump.value(layer, head), rank_rel_tol)?;
            Ok([
                MatrixReport {
                    layer,
                    head,
                    kind: CacheKind::Key,
                    spectrum: k,
                },
                MatrixReport {
                    layer,
                    head,
                    kind: CacheKind::Value,
                    spectrum: v,
                },
            ])
        })
        .collect();

    let mut reports = Vec::with_capacity(pairs.len() * 2);
    for pair in per_pair {
        reports.extend(pair?);
    }

    let mut aggregates = Vec::with_capacity(dump.n_layers * 2);
    for layer in 0..dump.n_layers {
        for kind in CacheKind::BOTH {
            let spectra: Vec<&SpectrumReport> = reports
                .iter()
                .filter(|r| r.layer == layer && r.kind == kind)
                .map(|r| &r.spectrum)
                .collect();
            aggregates.push(aggregate_layer(layer, kind, &spectra));
        }
    }

    Ok(DumpAnalysis {
        reports,
        aggregates,
    })
}

fn aggregate_layer(layer: usize, kind: CacheKind, spectra: &[&SpectrumReport]) -> LayerAggregate {
    let heads = spectra.len() as f64;
    let d = spectra[0].singular_values.len();

    let stats = |combine: &dyn Fn(&[f64]) -> f64| SpectrumStats {
        spectral_norm: combine(&spectra.iter().map(|s| s.spectral_norm).collect::<Vec<_>>()),
        frobenius_norm: combine(&spectra.iter().map(|s| s.frobenius_norm).collect::<Vec<_>>()),
        singular_values: (0..d)
            .map(|i| {
                combine(
                    &spectra
                        .iter()
                        .map(|s| s.singular_values[i])
                        .collect::<Vec<_>>(),
                )
            })
            .collect(),
    };

    LayerAggregate {
        layer,
        kind,
        mean: stats(&|xs: &[f64]| xs.iter().sum::<f64>() / heads),
        min: stats(&|xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min)),
        max: stats(&|xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    }
}
