//! End-to-end tests of the `kvq` binary: exit codes, output shapes, and the
//! orderings the synthetic dumps are designed to show.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kvq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kvq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth(path: &Path, ratio: f64, layers: usize, heads: usize, d: usize, s: usize, seed: u64) {
    let out = kvq(&[
        "synth",
        "--output",
        path.to_str().unwrap(),
        "--ratio",
        &ratio.to_string(),
        "--layers",
        &layers.to_string(),
        "--heads",
        &heads.to_string(),
        "--d-head",
        &d.to_string(),
        "--seq-len",
        &s.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert_success(&out);
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .map(|l| l.split(',').map(|f| f.to_string()).collect())
        .collect()
}

fn col(rows: &[Vec<String>], name: &str) -> usize {
    rows[0]
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn analyze_row_counts_and_k_dominance() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.kvd");
    synth(&dump, 6.2, 2, 2, 8, 32, 1);
    let out_dir = dir.path().join("out");
    let out = kvq(&[
        "analyze",
        "--input",
        dump.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out);

    // 2 layers x 2 heads x {K, V} = 8 spectrum rows plus the header.
    let spectra = read_csv(&out_dir.join("spectra.csv"));
    assert_eq!(spectra.len(), 9);
    // 2 layers x {K, V} x {mean, min, max} = 12 aggregate rows plus header.
    let aggregates = read_csv(&out_dir.join("aggregates.csv"));
    assert_eq!(aggregates.len(), 13);

    // Mean K Frobenius norm dominates mean V in every layer.
    let kind_col = col(&aggregates, "cache_kind");
    let stat_col = col(&aggregates, "stat");
    let fro_col = col(&aggregates, "frobenius_norm");
    let layer_col = col(&aggregates, "layer");
    for layer in ["0", "1"] {
        let mean_of = |kind: &str| -> f64 {
            aggregates[1..]
                .iter()
                .find(|r| r[layer_col] == layer && r[kind_col] == kind && r[stat_col] == "mean")
                .unwrap()[fro_col]
                .parse()
                .unwrap()
        };
        assert!(mean_of("K") > mean_of("V"), "layer {layer}");
    }
}

#[test]
fn missing_input_exits_2_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = kvq(&[
        "analyze",
        "--input",
        dir.path().join("nope.kvd").to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists(), "no partial CSVs may be left behind");
}

#[test]
fn usage_errors_exit_1() {
    let out = kvq(&["analyze", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));

    // Bit-width outside [2, 8] is a parameter error.
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.kvd");
    synth(&dump, 1.0, 1, 1, 4, 4, 3);
    let out = kvq(&[
        "quantize",
        "--input",
        dump.to_str().unwrap(),
        "--out-dir",
        dir.path().join("o").to_str().unwrap(),
        "--bits",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infeasible_budget_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.kvd");
    synth(&dump, 4.0, 1, 1, 4, 8, 7);
    let out = kvq(&[
        "allocate",
        "--input",
        dump.to_str().unwrap(),
        "--out-dir",
        dir.path().join("o").to_str().unwrap(),
        "--budget",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn allocate_reports_per_layer_and_global() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.kvd");
    synth(&dump, 4.0, 2, 2, 8, 32, 11);
    let out_dir = dir.path().join("out");
    let out = kvq(&[
        "allocate",
        "--input",
        dump.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--budget",
        "6",
    ]);
    assert_success(&out);
    let rows = read_csv(&out_dir.join("allocation.csv"));
    assert_eq!(rows.len(), 4); // header + 2 layers + global
    assert_eq!(rows.last().unwrap()[0], "global");
    let bk = col(&rows, "b_k");
    let bv = col(&rows, "b_v");
    for row in &rows[1..] {
        assert_eq!((row[bk].as_str(), row[bv].as_str()), ("4", "2"));
    }
}

#[test]
fn sweep_emits_monotone_mse() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.kvd");
    synth(&dump, 2.0, 1, 2, 8, 64, 5);
    let out_dir = dir.path().join("out");
    assert_success(&kvq(&[
        "sweep",
        "--input",
        dump.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    let rows = read_csv(&out_dir.join("sweep.csv"));
    assert_eq!(rows.len(), 15); // header + 7 widths x 2 kinds
    let kind_col = col(&rows, "cache_kind");
    let mean_col = col(&rows, "mean_mse");
    for kind in ["K", "V"] {
        let means: Vec<f64> = rows[1..]
            .iter()
            .filter(|r| r[kind_col] == kind)
            .map(|r| r[mean_col].parse().unwrap())
            .collect();
        assert_eq!(means.len(), 7);
        for pair in means.windows(2) {
            assert!(
                pair[1] < pair[0],
                "{kind} MSE not strictly decreasing: {means:?}"
            );
        }
    }
}

#[test]
fn mixed_precision_beats_reversed_assignment() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.kvd");
    synth(&dump, 6.2, 2, 2, 16, 96, 13);

    let combined = |bits_k: &str, bits_v: &str, sub: &str| -> f64 {
        let out_dir = dir.path().join(sub);
        assert_success(&kvq(&[
            "evaluate",
            "--input",
            dump.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--bits-k",
            bits_k,
            "--bits-v",
            bits_v,
        ]));
        let rows = read_csv(&out_dir.join("summary.csv"));
        let mean = col(&rows, "mean_mse");
        rows[1..]
            .iter()
            .map(|r| r[mean].parse::<f64>().unwrap())
            .sum::<f64>()
            / 2.0
    };

    let k4v2 = combined("4", "2", "k4v2");
    let k2v4 = combined("2", "4", "k2v4");
    assert!(k4v2 < k2v4, "K4V2 {k4v2} should beat K2V4 {k2v4}");
}

#[test]
fn evaluate_flags_short_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("short.kvd");
    synth(&dump, 1.0, 1, 1, 16, 8, 2);
    let out_dir = dir.path().join("out");
    assert_success(&kvq(&[
        "evaluate",
        "--input",
        dump.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--bits-k",
        "4",
        "--bits-v",
        "4",
    ]));
    let rows = read_csv(&out_dir.join("errors.csv"));
    let flag = col(&rows, "short_seq");
    assert!(rows[1..].iter().all(|r| r[flag] == "1"));
}

#[test]
fn commands_do_not_mutate_their_input() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.kvd");
    synth(&dump, 2.0, 1, 2, 8, 16, 9);
    let before = std::fs::read(&dump).unwrap();
    assert_success(&kvq(&[
        "evaluate",
        "--input",
        dump.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
        "--bits-k",
        "4",
        "--bits-v",
        "2",
    ]));
    assert_eq!(before, std::fs::read(&dump).unwrap());
}

#[test]
fn synth_repeats_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.kvd");
    let b = dir.path().join("b.kvd");
    synth(&a, 3.0, 2, 2, 8, 16, 77);
    synth(&b, 3.0, 2, 2, 8, 16, 77);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.kvd");
    synth(&c, 3.0, 2, 2, 8, 16, 78);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn simulate_writes_expected_trace_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir: PathBuf = dir.path().join("out");
    assert_success(&kvq(&[
        "simulate",
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--depth",
        "4",
        "--dim",
        "8",
        "--bits",
        "2",
        "--trials",
        "3",
    ]));
    let rows = read_csv(&out_dir.join("trace.csv"));
    assert_eq!(rows.len(), 1 + 3 * 4);
    let dev = col(&rows, "deviation");
    let bound = col(&rows, "bound");
    // First transition of each trial starts from the shared clean state, so
    // its accumulated deviation is one-step and must respect the bound.
    let layer_col = col(&rows, "layer");
    for row in rows[1..].iter().filter(|r| r[layer_col] == "0") {
        let d: f64 = row[dev].parse().unwrap();
        let b: f64 = row[bound].parse().unwrap();
        assert!(d <= b + 1e-9);
    }
}
