//! Symmetric two's-complement quantization with bit-exact code packing.
//!
//! A matrix `A` is mapped to integer codes `Q_ij = clamp(round(A_ij / alpha))`
//! with a single per-matrix scale `alpha = max|A_ij| / (2^(b-1) - 1)`, and
//! reconstructed as `alpha * Q_ij`. Rounding is half away from zero; codes
//! live in `[-2^(b-1), 2^(b-1) - 1]` and are stored LSB-first, `b` bits per
//! code, contiguous across byte boundaries, zero-padded to a whole byte.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Smallest supported bit-width.
pub const MIN_BITS: u8 = 2;
/// Largest supported bit-width.
pub const MAX_BITS: u8 = 8;

/// Packed quantized matrix: codes plus the scale needed to reconstruct.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    bit_width: u8,
    scale: f32,
    max_magnitude: f32,
    packed: Vec<u8>,
}

impl QuantizedTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    /// Scale factor `alpha`; 0 exactly when the source matrix was zero.
    pub fn scale(&self) -> f32 {
        self.scale
    }

    /// Largest entry magnitude of the source matrix.
    pub fn max_magnitude(&self) -> f32 {
        self.max_magnitude
    }

    pub fn packed_bytes(&self) -> &[u8] {
        &self.packed
    }

    /// Unpacked signed codes, row-major.
    pub fn codes(&self) -> Result<Vec<i8>> {
        unpack_codes(&self.packed, self.rows * self.cols, self.bit_width)
    }

    /// Bits saved relative to a `source_bits_per_entry`-bit source (scale
    /// metadata is constant-size and ignored).
    pub fn compression_ratio(&self, source_bits_per_entry: u32) -> f64 {
        source_bits_per_entry as f64 / self.bit_width as f64
    }

    /// Check internal consistency: packed length, zero padding bits, and the
    /// zero-scale/zero-codes coupling.
    pub fn validate(&self) -> Result<()> {
        let n = self.rows * self.cols;
        let expect = packed_len(n, self.bit_width);
        if self.packed.len() != expect {
            return Err(Error::Length(format!(
                "packed buffer holds {} bytes, expected {expect}",
                self.packed.len()
            )));
        }
        let used_bits = n * self.bit_width as usize;
        for bit in used_bits..self.packed.len() * 8 {
            if self.packed[bit / 8] >> (bit % 8) & 1 != 0 {
                return Err(Error::Data("nonzero padding bits".into()));
            }
        }
        if self.scale == 0.0 && self.packed.iter().any(|&b| b != 0) {
            return Err(Error::Data("zero scale with nonzero codes".into()));
        }
        Ok(())
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::Parameter(format!(
            "bit-width {bits} outside [{MIN_BITS}, {MAX_BITS}]"
        )));
    }
    Ok(())
}

fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}

/// Largest positive code for a bit-width: `2^(b-1) - 1`.
pub fn max_code(bits: u8) -> i32 {
    (1i32 << (bits - 1)) - 1
}

/// Most negative code for a bit-width: `-2^(b-1)`.
pub fn min_code(bits: u8) -> i32 {
    -(1i32 << (bits - 1))
}

/// Quantize a matrix to `bits`-bit signed codes with one per-matrix scale.
///
/// The zero matrix maps to scale 0 with all-zero codes.
pub fn quantize(a: &Matrix, bits: u8) -> Result<QuantizedTensor> {
    check_bits(bits)?;
    let m = a.max_abs();
    let (scale, codes) = if m == 0.0 {
        (0.0f32, vec![0i8; a.len()])
    } else {
        let scale = m / max_code(bits) as f32;
        let lo = min_code(bits);
        let hi = max_code(bits);
        let codes = a
            .as_slice()
            .iter()
            // f32::round is half away from zero, the normative tie-break.
            .map(|&v| ((v / scale).round() as i32).clamp(lo, hi) as i8)
            .collect();
        (scale, codes)
    };
    Ok(QuantizedTensor {
        rows: a.rows(),
        cols: a.cols(),
        bit_width: bits,
        scale,
        max_magnitude: m,
        packed: pack_codes(&codes, bits)?,
    })
}

/// Reconstruct `alpha * Q` as an f32 matrix.
pub fn dequantize(q: &QuantizedTensor) -> Result<Matrix> {
    q.validate()?;
    let codes = q.codes()?;
    let data = codes.iter().map(|&c| q.scale * c as f32).collect();
    Matrix::new(q.rows, q.cols, data)
}

/// Quantize-then-dequantize in one step.
pub fn quantize_dequantize(a: &Matrix, bits: u8) -> Result<Matrix> {
    dequantize(&quantize(a, bits)?)
}

/// Optional per-row grouping: one scale per row instead of one per matrix.
/// Not the default mode; the per-matrix scale is.
pub fn quantize_per_row(a: &Matrix, bits: u8) -> Result<Vec<QuantizedTensor>> {
    (0..a.rows())
        .map(|i| quantize(&Matrix::new(1, a.cols(), a.row(i).to_vec())?, bits))
        .collect()
}

/// Reassemble a matrix from per-row quantized rows.
pub fn dequantize_per_row(rows: &[QuantizedTensor]) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(Error::Parameter("no rows to reassemble".into()));
    }
    let cols = rows[0].cols();
    let mut data = Vec::with_capacity(rows.len() * cols);
    for (i, q) in rows.iter().enumerate() {
        if q.rows() != 1 || q.cols() != cols {
            return Err(Error::Parameter(format!(
                "row {i} has shape {}x{}, expected 1x{cols}",
                q.rows(),
                q.cols()
            )));
        }
        data.extend_from_slice(dequantize(q)?.as_slice());
    }
    Matrix::new(rows.len(), cols, data)
}

/// Pack signed codes as `bits`-bit two's-complement patterns, LSB-first
/// within each byte, contiguous across byte boundaries, zero-padded tail.
pub fn pack_codes(codes: &[i8], bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let lo = min_code(bits);
    let hi = max_code(bits);
    let mask = (1u16 << bits) - 1;
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    for (i, &code) in codes.iter().enumerate() {
        let c = code as i32;
        if c < lo || c > hi {
            return Err(Error::Parameter(format!(
                "code {c} outside [{lo}, {hi}] for {bits}-bit packing"
            )));
        }
        let pattern = (c as u16) & mask;
        let bit_pos = i * bits as usize;
        let byte = bit_pos / 8;
        let offset = bit_pos % 8;
        out[byte] |= (pattern << offset) as u8;
        if offset + bits as usize > 8 {
            out[byte + 1] |= (pattern >> (8 - offset)) as u8;
        }
    }
    Ok(out)
}

/// Unpack `count` signed codes from a packed byte sequence.
pub fn unpack_codes(bytes: &[u8], count: usize, bits: u8) -> Result<Vec<i8>> {
    check_bits(bits)?;
    if bytes.len() * 8 < count * bits as usize {
        return Err(Error::Length(format!(
            "{} bytes hold fewer than {count} {bits}-bit codes",
            bytes.len()
        )));
    }
    let mask = (1u16 << bits) - 1;
    let sign_bit = 1u16 << (bits - 1);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let bit_pos = i * bits as usize;
        let byte = bit_pos / 8;
        let offset = bit_pos % 8;
        let mut pattern = (bytes[byte] as u16) >> offset;
        if offset + bits as usize > 8 {
            pattern |= (bytes[byte + 1] as u16) << (8 - offset);
        }
        pattern &= mask;
        // sign-extend from bits to i8
        let value = if pattern & sign_bit != 0 {
            (pattern as i32) - (1i32 << bits)
        } else {
            pattern as i32
        };
        out.push(value as i8);
    }
    Ok(out)
}
