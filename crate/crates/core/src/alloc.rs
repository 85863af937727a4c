//! Norm-ratio bit allocation: split a total bit budget between key and value
//! caches so that their predicted quantization errors match.
//!
//! Error at width `b` scales as `norm / 2^b`, so equal error across the two
//! sides means `2^(b_K - b_V) = ||K|| / ||V||`, i.e. a real-valued target gap
//! of `log2(||K|| / ||V||)`. The integer split rounds that gap, ties and
//! clamps resolving in favor of the key side.

use crate::dump::KVDump;
use crate::error::{Error, Result};
use crate::spectral;

/// Which norm drives the allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormKind {
    Spectral,
    #[default]
    Frobenius,
}

impl NormKind {
    pub fn label(self) -> &'static str {
        match self {
            NormKind::Spectral => "spectral",
            NormKind::Frobenius => "frobenius",
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(NormKind::Spectral),
            "frobenius" => Ok(NormKind::Frobenius),
            other => Err(Error::Parameter(format!(
                "unknown norm kind {other:?}, expected spectral or frobenius"
            ))),
        }
    }
}

/// The chosen (b_K, b_V) pair and the ratio that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BitAllocation {
    pub b_k: u8,
    pub b_v: u8,
    pub norm_ratio: f64,
    pub norm_kind: NormKind,
    pub budget: u8,
}

const MIN_BITS: i64 = crate::quant::MIN_BITS as i64;
const MAX_BITS: i64 = crate::quant::MAX_BITS as i64;

/// Real-valued target for `b_K - b_V` under the equal-error condition
/// `||K|| / 2^(b_K) = ||V|| / 2^(b_V)`: simply `log2(norm_k / norm_v)`.
pub fn bit_delta(norm_k: f64, norm_v: f64) -> Result<f64> {
    if !(norm_k.is_finite() && norm_v.is_finite()) || norm_k <= 0.0 || norm_v <= 0.0 {
        return Err(Error::Parameter(format!(
            "norms must be positive, got {norm_k} and {norm_v}"
        )));
    }
    Ok((norm_k / norm_v).log2())
}

/// Split `budget` into `(b_k, b_v)` with both in `[2, 8]`,
/// `b_k - b_v` as close as possible to the equal-error gap, and rounding
/// ties going to the key side.
pub fn allocate(
    norm_k: f64,
    norm_v: f64,
    budget: u8,
    norm_kind: NormKind,
) -> Result<BitAllocation> {
    let delta = bit_delta(norm_k, norm_v)?;
    let budget_i = budget as i64;
    if !(2 * MIN_BITS..=2 * MAX_BITS).contains(&budget_i) {
        return Err(Error::Allocation(format!(
            "budget {budget} has no bit-width pair in [{MIN_BITS}, {MAX_BITS}]"
        )));
    }

    // Half-up rounding: a .5 tie moves toward larger b_k.
    let target = budget_i as f64 / 2.0 + delta / 2.0;
    let mut b_k = (target + 0.5).floor() as i64;
    b_k = b_k.clamp(MIN_BITS, MAX_BITS);
    let mut b_v = budget_i - b_k;
    if b_v < MIN_BITS {
        b_v = MIN_BITS;
        b_k = budget_i - b_v;
    } else if b_v > MAX_BITS {
        b_v = MAX_BITS;
        b_k = budget_i - b_v;
    }
    if !(MIN_BITS..=MAX_BITS).contains(&b_k) || !(MIN_BITS..=MAX_BITS).contains(&b_v) {
        return Err(Error::Allocation(format!(
            "budget {budget} infeasible after clamping to [{MIN_BITS}, {MAX_BITS}]"
        )));
    }

    Ok(BitAllocation {
        b_k: b_k as u8,
        b_v: b_v as u8,
        norm_ratio: norm_k / norm_v,
        norm_kind,
        budget,
    })
}

/// An allocation together with the mean norms that produced it.
#[derive(Debug, Clone)]
pub struct LayerAllocation {
    pub norm_k: f64,
    pub norm_v: f64,
    pub allocation: BitAllocation,
}

/// Per-layer allocations (norms averaged across heads) plus a global one
/// (norms averaged across every matrix of the dump).
#[derive(Debug, Clone)]
pub struct DumpAllocation {
    pub per_layer: Vec<LayerAllocation>,
    pub global: LayerAllocation,
}

pub fn allocate_for_dump(dump: &KVDump, budget: u8, norm_kind: NormKind) -> Result<DumpAllocation> {
    dump.validate()?;
    let norm = |m: &crate::matrix::Matrix| -> Result<f64> {
        match norm_kind {
            NormKind::Frobenius => Ok(spectral::frobenius_norm(m)),
            NormKind::Spectral => spectral::spectral_norm_default(m),
        }
    };

    let mut per_layer = Vec::with_capacity(dump.n_layers);
    let mut global_k = 0.0f64;
    let mut global_v = 0.0f64;
    for layer in 0..dump.n_layers {
        let mut k_sum = 0.0f64;
        let mut v_sum = 0.0f64;
        for head in 0..dump.n_heads {
            k_sum += norm(dump.key(layer, head))?;
            v_sum += norm(dump.value(layer, head))?;
        }
        global_k += k_sum;
        global_v += v_sum;
        let heads = dump.n_heads as f64;
        let (norm_k, norm_v) = (k_sum / heads, v_sum / heads);
        per_layer.push(LayerAllocation {
            norm_k,
            norm_v,
            allocation: allocate(norm_k, norm_v, budget, norm_kind)?,
        });
    }
    let total = (dump.n_layers * dump.n_heads) as f64;
    let (norm_k, norm_v) = (global_k / total, global_v / total);
    let global = LayerAllocation {
        norm_k,
        norm_v,
        allocation: allocate(norm_k, norm_v, budget, norm_kind)?,
    };
    Ok(DumpAllocation { per_layer, global })
}
