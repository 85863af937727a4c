//! CSV builders for every report schema. Each builder returns the full file
//! content so commands can compute everything before touching the disk.

use kvq_core::alloc::{DumpAllocation, NormKind};
use kvq_core::dump::{CacheKind, KVDump};
use kvq_core::metrics::DumpEvaluation;
use kvq_core::propagation::PropagationTrace;
use kvq_core::quant::QuantizedTensor;
use kvq_core::report::{csv_field, csv_row, fmt_sig9};
use kvq_core::spectral::DumpAnalysis;

fn sigma_headers(d: usize) -> impl Iterator<Item = String> {
    (1..=d).map(|i| format!("sigma_{i}"))
}

/// One row per matrix: norms, rank, then the full spectrum.
pub fn spectra_csv(dump: &KVDump, analysis: &DumpAnalysis) -> String {
    let d = dump.d_head.min(dump.seq_len);
    let mut out = String::new();
    let header: Vec<String> = [
        "model_name",
        "layer",
        "head",
        "cache_kind",
        "seq_len",
        "d_head",
        "spectral_norm",
        "frobenius_norm",
        "rank_estimate",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain(sigma_headers(d))
    .collect();
    out.push_str(&csv_row(header));
    out.push('\n');
    for r in &analysis.reports {
        let fields: Vec<String> = vec![
            csv_field(&dump.model_name),
            r.layer.to_string(),
            r.head.to_string(),
            r.kind.label().to_string(),
            dump.seq_len.to_string(),
            dump.d_head.to_string(),
            fmt_sig9(r.spectrum.spectral_norm),
            fmt_sig9(r.spectrum.frobenius_norm),
            r.spectrum.rank_estimate.to_string(),
        ]
        .into_iter()
        .chain(r.spectrum.singular_values.iter().map(|&s| fmt_sig9(s)))
        .collect();
        out.push_str(&csv_row(fields));
        out.push('\n');
    }
    out
}

/// Per-layer aggregate rows: one row per (layer, kind, stat).
pub fn aggregates_csv(dump: &KVDump, analysis: &DumpAnalysis) -> String {
    let d = dump.d_head.min(dump.seq_len);
    let mut out = String::new();
    let header: Vec<String> = [
        "layer",
        "cache_kind",
        "stat",
        "spectral_norm",
        "frobenius_norm",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain(sigma_headers(d))
    .collect();
    out.push_str(&csv_row(header));
    out.push('\n');
    for agg in &analysis.aggregates {
        for (stat, values) in [("mean", &agg.mean), ("min", &agg.min), ("max", &agg.max)] {
            let fields: Vec<String> = vec![
                agg.layer.to_string(),
                agg.kind.label().to_string(),
                stat.to_string(),
                fmt_sig9(values.spectral_norm),
                fmt_sig9(values.frobenius_norm),
            ]
            .into_iter()
            .chain(values.singular_values.iter().map(|&s| fmt_sig9(s)))
            .collect();
            out.push_str(&csv_row(fields));
            out.push('\n');
        }
    }
    out
}

/// Per-matrix error rows with the theorem bounds side by side.
pub fn errors_csv(dump: &KVDump, eval: &DumpEvaluation) -> String {
    let mut out = String::new();
    out.push_str(&csv_row(
        [
            "model_name",
            "layer",
            "head",
            "cache_kind",
            "b",
            "mse",
            "frobenius_error",
            "spectral_error",
            "spectral_bound",
            "frobenius_bound",
            "short_seq",
        ]
        .iter()
        .map(|s| s.to_string()),
    ));
    out.push('\n');
    for r in &eval.records {
        out.push_str(&csv_row(vec![
            csv_field(&dump.model_name),
            r.layer.to_string(),
            r.head.to_string(),
            r.kind.label().to_string(),
            r.record.bit_width.to_string(),
            fmt_sig9(r.record.mse),
            fmt_sig9(r.record.frobenius_error),
            fmt_sig9(r.record.spectral_error),
            fmt_sig9(r.record.spectral_bound),
            fmt_sig9(r.record.frobenius_bound),
            (r.short_sequence as u8).to_string(),
        ]));
        out.push('\n');
    }
    out
}

/// Mean +- std per cache kind.
pub fn summary_csv(eval: &DumpEvaluation) -> String {
    let mut out = String::new();
    out.push_str(&csv_row(
        ["cache_kind", "b", "mean_mse", "std_mse"]
            .iter()
            .map(|s| s.to_string()),
    ));
    out.push('\n');
    for s in &eval.summary {
        out.push_str(&csv_row(vec![
            s.kind.label().to_string(),
            s.bit_width.to_string(),
            fmt_sig9(s.mean_mse),
            fmt_sig9(s.std_mse),
        ]));
        out.push('\n');
    }
    out
}

/// One row per (cache kind, bit-width) over the 2..=8 sweep.
pub struct SweepRow {
    pub kind: CacheKind,
    pub bit_width: u8,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub min_mse: f64,
    pub max_mse: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(&csv_row(
        [
            "cache_kind",
            "b",
            "mean_mse",
            "std_mse",
            "min_mse",
            "max_mse",
        ]
        .iter()
        .map(|s| s.to_string()),
    ));
    out.push('\n');
    for r in rows {
        out.push_str(&csv_row(vec![
            r.kind.label().to_string(),
            r.bit_width.to_string(),
            fmt_sig9(r.mean_mse),
            fmt_sig9(r.std_mse),
            fmt_sig9(r.min_mse),
            fmt_sig9(r.max_mse),
        ]));
        out.push('\n');
    }
    out
}

/// Per-layer rows plus a final "global" row.
pub fn allocation_csv(alloc: &DumpAllocation, norm_kind: NormKind) -> String {
    let mut out = String::new();
    out.push_str(&csv_row(
        [
            "layer",
            "norm_kind",
            "norm_k",
            "norm_v",
            "ratio",
            "b_k",
            "b_v",
            "budget",
        ]
        .iter()
        .map(|s| s.to_string()),
    ));
    out.push('\n');
    let row = |label: String, la: &kvq_core::alloc::LayerAllocation| {
        csv_row(vec![
            label,
            norm_kind.label().to_string(),
            fmt_sig9(la.norm_k),
            fmt_sig9(la.norm_v),
            fmt_sig9(la.allocation.norm_ratio),
            la.allocation.b_k.to_string(),
            la.allocation.b_v.to_string(),
            la.allocation.budget.to_string(),
        ])
    };
    for (layer, la) in alloc.per_layer.iter().enumerate() {
        out.push_str(&row(layer.to_string(), la));
        out.push('\n');
    }
    out.push_str(&row("global".to_string(), &alloc.global));
    out.push('\n');
    out
}

/// One row per (trial, layer) transition of a propagation trace.
pub fn trace_csv(traces: &[PropagationTrace]) -> String {
    let mut out = String::new();
    out.push_str(&csv_row(
        [
            "trial",
            "layer",
            "b",
            "h_norm",
            "deviation",
            "bound",
            "w_spectral_norm",
            "dw_spectral_norm",
        ]
        .iter()
        .map(|s| s.to_string()),
    ));
    out.push('\n');
    for (trial, trace) in traces.iter().enumerate() {
        for layer in 0..trace.bounds.len() {
            out.push_str(&csv_row(vec![
                trial.to_string(),
                layer.to_string(),
                trace.bit_width.to_string(),
                fmt_sig9(trace.state_norms[layer]),
                fmt_sig9(trace.deviations[layer + 1]),
                fmt_sig9(trace.bounds[layer]),
                fmt_sig9(trace.weight_norms[layer]),
                fmt_sig9(trace.weight_error_norms[layer]),
            ]));
            out.push('\n');
        }
    }
    out
}

/// Per-matrix quantization metadata: scale, max magnitude, compression.
pub fn quantization_csv(
    dump: &KVDump,
    rows: &[(usize, usize, CacheKind, QuantizedTensor)],
) -> String {
    let mut out = String::new();
    out.push_str(&csv_row(
        [
            "model_name",
            "layer",
            "head",
            "cache_kind",
            "b",
            "m_max",
            "scale",
            "compression_ratio_bf16",
            "compression_ratio_f32",
        ]
        .iter()
        .map(|s| s.to_string()),
    ));
    out.push('\n');
    for (layer, head, kind, q) in rows {
        out.push_str(&csv_row(vec![
            csv_field(&dump.model_name),
            layer.to_string(),
            head.to_string(),
            kind.label().to_string(),
            q.bit_width().to_string(),
            fmt_sig9(q.max_magnitude() as f64),
            fmt_sig9(q.scale() as f64),
            fmt_sig9(q.compression_ratio(16)),
            fmt_sig9(q.compression_ratio(32)),
        ]));
        out.push('\n');
    }
    out
}
