//! Synthetic cache matrices with controlled spectra and norm ratios.
//!
//! Matrices are built as `U diag(sigma) V^T` where the orthonormal factors
//! come from Gram-Schmidt on seeded standard-normal matrices drawn from the
//! crate's fixed splitmix64 stream, so identical seeds reproduce identical
//! matrices.

use crate::dump::KVDump;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, derive_seed2, SplitMix64};

/// Recipe for one synthetic matrix: shape, target spectrum, seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub d_head: usize,
    pub seq_len: usize,
    /// Descending, non-negative, length min(d_head, seq_len).
    pub singular_values: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_head == 0 || self.seq_len == 0 {
            return Err(Error::InvalidSpec("dimensions must be positive".into()));
        }
        let expect = self.d_head.min(self.seq_len);
        if self.singular_values.len() != expect {
            return Err(Error::InvalidSpec(format!(
                "{} singular values for min dimension {expect}",
                self.singular_values.len()
            )));
        }
        if self
            .singular_values
            .iter()
            .any(|s| !s.is_finite() || *s < 0.0)
        {
            return Err(Error::InvalidSpec(
                "singular values must be finite and >= 0".into(),
            ));
        }
        if self.singular_values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidSpec(
                "singular values must be descending".into(),
            ));
        }
        Ok(())
    }
}

/// Seeded standard-normal matrix (f64 draws cast to f32).
pub fn gaussian_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Result<Matrix> {
    let mut rng = SplitMix64::new(seed);
    let data: Vec<f32> = (0..rows * cols)
        .map(|_| (rng.next_normal() * scale) as f32)
        .collect();
    Matrix::new(rows, cols, data)
}

/// Orthonormal columns: Gram-Schmidt (two passes, for orthogonality near
/// machine precision) over a rows x cols Gaussian draw. Row-major f64.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut SplitMix64) -> Vec<f64> {
    assert!(
        cols <= rows,
        "cannot fit {cols} orthonormal columns in R^{rows}"
    );
    let mut q = vec![0.0f64; rows * cols];
    for j in 0..cols {
        let mut col: Vec<f64> = (0..rows).map(|_| rng.next_normal()).collect();
        loop {
            for _pass in 0..2 {
                for i in 0..j {
                    let dot: f64 = (0..rows).map(|k| q[k * cols + i] * col[k]).sum();
                    for (k, c) in col.iter_mut().enumerate() {
                        *c -= dot * q[k * cols + i];
                    }
                }
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (k, c) in col.iter().enumerate() {
                    q[k * cols + j] = c / norm;
                }
                break;
            }
            // Degenerate draw; take the next one from the same stream.
            col = (0..rows).map(|_| rng.next_normal()).collect();
        }
    }
    q
}

/// Build `U diag(sigma) V^T` with the spec's singular values, deterministically
/// from the spec's seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Matrix> {
    spec.validate()?;
    let (m, n) = (spec.d_head, spec.seq_len);
    let r = spec.singular_values.len();
    let mut rng = SplitMix64::new(spec.seed);
    let u = orthonormal_columns(m, r, &mut rng);
    let v = orthonormal_columns(n, r, &mut rng);

    let mut data = vec![0.0f32; m * n];
    for i in 0..m {
        for (k, &s) in spec.singular_values.iter().enumerate() {
            let uis = u[i * r + k] * s;
            if uis == 0.0 {
                continue;
            }
            let row = &mut data[i * n..(i + 1) * n];
            for (j, value) in row.iter_mut().enumerate() {
                *value += (uis * v[j * r + k]) as f32;
            }
        }
    }
    Matrix::new(m, n, data)
}

/// A full-rank (K, V) pair with `||K||_F / ||V||_F` equal to `norm_ratio`.
///
/// Both sides are Gaussian; K is rescaled so the Frobenius ratio lands on
/// target (up to f32 rounding).
pub fn synthesize_kv_pair(
    norm_ratio: f64,
    d_head: usize,
    seq_len: usize,
    seed: u64,
) -> Result<(Matrix, Matrix)> {
    if !norm_ratio.is_finite() || norm_ratio <= 0.0 {
        return Err(Error::Parameter(format!(
            "norm ratio must be positive, got {norm_ratio}"
        )));
    }
    if d_head == 0 || seq_len == 0 {
        return Err(Error::Parameter("dimensions must be positive".into()));
    }
    let k0 = gaussian_matrix(d_head, seq_len, 1.0, derive_seed(seed, 0))?;
    let v = gaussian_matrix(d_head, seq_len, 1.0, derive_seed(seed, 1))?;
    let fk = crate::spectral::frobenius_norm(&k0);
    let fv = crate::spectral::frobenius_norm(&v);
    let factor = norm_ratio * fv / fk;
    let k = Matrix::new(
        d_head,
        seq_len,
        k0.as_slice()
            .iter()
            .map(|&x| (x as f64 * factor) as f32)
            .collect(),
    )?;
    Ok((k, v))
}

/// Build a whole dump of `synthesize_kv_pair` outputs, one pair per
/// (layer, head), each on its own derived seed.
pub fn synthesize_dump(
    norm_ratio: f64,
    n_layers: usize,
    n_heads: usize,
    d_head: usize,
    seq_len: usize,
    seed: u64,
    model_name: &str,
) -> Result<KVDump> {
    if n_layers == 0 || n_heads == 0 {
        return Err(Error::Parameter(
            "layer and head counts must be positive".into(),
        ));
    }
    let mut entries = Vec::with_capacity(n_layers * n_heads);
    for layer in 0..n_layers {
        for head in 0..n_heads {
            entries.push(synthesize_kv_pair(
                norm_ratio,
                d_head,
                seq_len,
                derive_seed2(seed, layer as u64, head as u64),
            )?);
        }
    }
    KVDump::new(
        n_layers,
        n_heads,
        d_head,
        seq_len,
        model_name.to_string(),
        entries,
    )
}
