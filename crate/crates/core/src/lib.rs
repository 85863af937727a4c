//! Information-aware mixed-precision quantization of transformer KV caches.
//!
//! Key and value cache matrices carry very different norm mass, so a shared
//! bit budget is best split unevenly between them. This crate provides the
//! pieces to measure and exploit that at desk scale:
//!
//! - [`matrix`] / [`dump`]: dense f32 matrices and the KVD1 binary container
//!   for per-layer, per-head cache dumps.
//! - [`synth`]: deterministic synthetic caches with controlled spectra and
//!   Frobenius-norm ratios.
//! - [`quant`]: symmetric two's-complement quantization with bit-exact
//!   LSB-first code packing.
//! - [`spectral`]: Frobenius/spectral norms, full singular value spectra via
//!   Gram + Jacobi, rank estimates, and per-layer aggregation.
//! - [`metrics`]: measured quantization error against the closed-form
//!   spectral and Frobenius bounds, bit sweeps, and dump-level summaries.
//! - [`alloc`]: the norm-ratio rule that splits a bit budget between K and V.
//! - [`propagation`]: error propagation through stacked residual layers.

pub mod alloc;
pub mod dump;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod propagation;
pub mod quant;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod synth;

pub use alloc::{allocate, allocate_for_dump, bit_delta, BitAllocation, LayerAllocation, NormKind};
pub use dump::{read_kvdump, write_kvdump, CacheKind, KVDump};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::{
    bit_sweep, evaluate_dump, frobenius_bound, mse, spectral_bound, verify_bounds, ErrorRecord,
};
pub use propagation::{
    amplification_curve, forward, propagate_with_quantization, LayerStack, PropagationTrace,
};
pub use quant::{
    dequantize, dequantize_per_row, pack_codes, quantize, quantize_dequantize, quantize_per_row,
    unpack_codes, QuantizedTensor,
};
pub use spectral::{
    analyze_dump, frobenius_norm, rank_estimate, singular_values, spectral_norm, svd,
    SpectrumReport,
};
pub use synth::{generate_synthetic, synthesize_dump, synthesize_kv_pair, SyntheticSpec};
