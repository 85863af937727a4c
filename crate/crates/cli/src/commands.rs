//! Command implementations. Each command computes all of its output in
//! memory and returns `(relative name, bytes)` pairs; `main` is the single
//! writer, so a failing command never leaves partial CSVs behind.

use std::path::PathBuf;

use kvq_core::alloc::{allocate_for_dump, NormKind};
use kvq_core::dump::{read_kvdump, write_kvdump, CacheKind};
use kvq_core::error::Result;
use kvq_core::metrics::evaluate_dump;
use kvq_core::propagation::{propagate_with_quantization, LayerStack, PropagationTrace};
use kvq_core::quant::quantize;
use kvq_core::rng::derive_seed;
use kvq_core::spectral::analyze_dump_with;
use kvq_core::synth::synthesize_dump;

use crate::output;

pub type Outputs = Vec<(PathBuf, Vec<u8>)>;

pub fn cmd_analyze(input: &PathBuf, rank_tol: f64) -> Result<Outputs> {
    let dump = read_kvdump(input)?;
    let analysis = analyze_dump_with(&dump, rank_tol)?;
    Ok(vec![
        (
            "spectra.csv".into(),
            output::spectra_csv(&dump, &analysis).into_bytes(),
        ),
        (
            "aggregates.csv".into(),
            output::aggregates_csv(&dump, &analysis).into_bytes(),
        ),
    ])
}

pub fn cmd_quantize(input: &PathBuf, bits: u8) -> Result<Outputs> {
    let dump = read_kvdump(input)?;
    let mut rows = Vec::new();
    for (layer, head, k, v) in dump.iter() {
        rows.push((layer, head, CacheKind::Key, quantize(k, bits)?));
        rows.push((layer, head, CacheKind::Value, quantize(v, bits)?));
    }
    Ok(vec![(
        "quantization.csv".into(),
        output::quantization_csv(&dump, &rows).into_bytes(),
    )])
}

pub fn cmd_evaluate(input: &PathBuf, bits_k: u8, bits_v: u8) -> Result<Outputs> {
    let dump = read_kvdump(input)?;
    let eval = evaluate_dump(&dump, bits_k, bits_v)?;
    Ok(vec![
        (
            "errors.csv".into(),
            output::errors_csv(&dump, &eval).into_bytes(),
        ),
        (
            "summary.csv".into(),
            output::summary_csv(&eval).into_bytes(),
        ),
    ])
}

pub fn cmd_sweep(input: &PathBuf) -> Result<Outputs> {
    let dump = read_kvdump(input)?;
    let mut rows = Vec::new();
    for bits in kvq_core::quant::MIN_BITS..=kvq_core::quant::MAX_BITS {
        let eval = evaluate_dump(&dump, bits, bits)?;
        for kind in CacheKind::BOTH {
            let mses: Vec<f64> = eval
                .records
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| r.record.mse)
                .collect();
            let n = mses.len() as f64;
            let mean = mses.iter().sum::<f64>() / n;
            let var = mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
            rows.push(output::SweepRow {
                kind,
                bit_width: bits,
                mean_mse: mean,
                std_mse: var.sqrt(),
                min_mse: mses.iter().copied().fold(f64::INFINITY, f64::min),
                max_mse: mses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    Ok(vec![(
        "sweep.csv".into(),
        output::sweep_csv(&rows).into_bytes(),
    )])
}

pub fn cmd_allocate(input: &PathBuf, budget: u8, norm: NormKind) -> Result<Outputs> {
    let dump = read_kvdump(input)?;
    let alloc = allocate_for_dump(&dump, budget, norm)?;
    Ok(vec![(
        "allocation.csv".into(),
        output::allocation_csv(&alloc, norm).into_bytes(),
    )])
}

pub fn cmd_simulate(
    depth: usize,
    dim: usize,
    bits: u8,
    scale: f64,
    trials: usize,
    seed: u64,
) -> Result<Outputs> {
    let mut traces: Vec<PropagationTrace> = Vec::with_capacity(trials);
    for trial in 0..trials {
        let stack = LayerStack::gaussian(depth, dim, scale, derive_seed(seed, trial as u64))?;
        let h0 = stack.default_start();
        traces.push(propagate_with_quantization(&stack, &h0, bits)?);
    }
    Ok(vec![(
        "trace.csv".into(),
        output::trace_csv(&traces).into_bytes(),
    )])
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    ratio: f64,
    layers: usize,
    heads: usize,
    d_head: usize,
    seq_len: usize,
    seed: u64,
    model_name: &str,
    output: &PathBuf,
) -> Result<Outputs> {
    let dump = synthesize_dump(ratio, layers, heads, d_head, seq_len, seed, model_name)?;
    write_kvdump(&dump, output)?;
    Ok(Vec::new())
}
