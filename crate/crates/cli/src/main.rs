//! `kvq` — KV-cache quantization analysis at desk scale.
//!
//! Subcommands cover the full loop: synthesize or ingest a KVD1 dump,
//! analyze spectra, quantize, measure errors against the closed-form bounds,
//! sweep bit-widths, allocate a bit budget between K and V, and simulate
//! error propagation through residual layers. All outputs are CSV and every
//! command is deterministic given its flags and seed.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use kvq_core::alloc::NormKind;
use kvq_core::error::Error;

/// Fixed default seed so bare invocations are reproducible.
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "kvq",
    version,
    about = "KV-cache quantization analysis toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Singular value spectra, norms, and per-layer aggregates of a dump.
    Analyze {
        /// KVD1 dump to read.
        #[arg(long)]
        input: PathBuf,
        /// Directory for spectra.csv and aggregates.csv.
        #[arg(long)]
        out_dir: PathBuf,
        /// Relative cutoff sigma_i > tol * sigma_max for the rank estimate.
        #[arg(long, default_value_t = kvq_core::spectral::DEFAULT_RANK_REL_TOL)]
        rank_tol: f64,
    },
    /// Quantize every cache matrix and report scales and compression ratios.
    Quantize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Bit-width in [2, 8] applied to both K and V.
        #[arg(long)]
        bits: u8,
    },
    /// Quantize K and V at separate widths and measure errors vs bounds.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Key-cache bit-width in [2, 8].
        #[arg(long)]
        bits_k: u8,
        /// Value-cache bit-width in [2, 8].
        #[arg(long)]
        bits_v: u8,
    },
    /// Per-kind MSE statistics for every bit-width from 2 to 8.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split a total bit budget between K and V from their norm ratio.
    Allocate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Total budget b_K + b_V; each side must land in [2, 8].
        #[arg(long)]
        budget: u8,
        /// Norm driving the split: frobenius or spectral.
        #[arg(long, default_value = "frobenius", value_parser = parse_norm)]
        norm: NormKind,
    },
    /// Propagate quantization error through stacked residual layers.
    Simulate {
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of residual layers.
        #[arg(long)]
        depth: usize,
        /// State dimension (weights are dim x dim).
        #[arg(long)]
        dim: usize,
        /// Weight bit-width in [2, 8].
        #[arg(long)]
        bits: u8,
        /// Per-entry standard deviation of the Gaussian weights.
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        /// Independent seeded trials to record.
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Write a synthetic KVD1 dump with a chosen ||K||_F / ||V||_F ratio.
    Synth {
        /// Output path for the dump file.
        #[arg(long)]
        output: PathBuf,
        /// Target per-head Frobenius norm ratio.
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        d_head: usize,
        #[arg(long)]
        seq_len: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = "synthetic")]
        model_name: String,
    },
}

fn parse_norm(s: &str) -> Result<NormKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parameter(_) | Error::Allocation(_) | Error::InvalidSpec(_) => 1,
        Error::Format(_) | Error::Length(_) | Error::Data(_) | Error::Io(_) | Error::Size(_) => 2,
        Error::Convergence { .. } => 3,
    }
}

fn run(command: Command) -> kvq_core::error::Result<()> {
    let (out_dir, outputs) = match command {
        Command::Analyze {
            input,
            out_dir,
            rank_tol,
        } => (Some(out_dir), commands::cmd_analyze(&input, rank_tol)?),
        Command::Quantize {
            input,
            out_dir,
            bits,
        } => (Some(out_dir), commands::cmd_quantize(&input, bits)?),
        Command::Evaluate {
            input,
            out_dir,
            bits_k,
            bits_v,
        } => (
            Some(out_dir),
            commands::cmd_evaluate(&input, bits_k, bits_v)?,
        ),
        Command::Sweep { input, out_dir } => (Some(out_dir), commands::cmd_sweep(&input)?),
        Command::Allocate {
            input,
            out_dir,
            budget,
            norm,
        } => (Some(out_dir), commands::cmd_allocate(&input, budget, norm)?),
        Command::Simulate {
            out_dir,
            depth,
            dim,
            bits,
            scale,
            trials,
            seed,
        } => (
            Some(out_dir),
            commands::cmd_simulate(depth, dim, bits, scale, trials, seed)?,
        ),
        Command::Synth {
            output,
            ratio,
            layers,
            heads,
            d_head,
            seq_len,
            seed,
            model_name,
        } => (
            None,
            commands::cmd_synth(
                ratio,
                layers,
                heads,
                d_head,
                seq_len,
                seed,
                &model_name,
                &output,
            )?,
        ),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir)?;
        for (name, bytes) in outputs {
            std::fs::write(dir.join(name), bytes)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("kvq: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
