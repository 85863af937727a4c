//! Error propagation through stacked residual layers.
//!
//! The model is `h_{l+1} = h_l + W_l h_l` with no normalization. Running the
//! recursion once with the exact weights and once with quantized weights
//! shows how a per-layer perturbation accumulates; the one-step deviation is
//! bounded by `||W_l - W~_l||_2 * ||h_l||_2`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quant;
use crate::rng::{derive_seed, SplitMix64};
use crate::spectral;
use crate::synth::gaussian_matrix;

/// A stack of square residual-layer weight matrices.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub dim: usize,
    pub weights: Vec<Matrix>,
    pub seed: u64,
}

impl LayerStack {
    pub fn new(weights: Vec<Matrix>, seed: u64) -> Result<Self> {
        let dim = weights
            .first()
            .map(Matrix::rows)
            .ok_or_else(|| Error::Parameter("stack needs at least one layer".into()))?;
        for (l, w) in weights.iter().enumerate() {
            if w.rows() != dim || w.cols() != dim {
                return Err(Error::Parameter(format!(
                    "layer {l} has shape {}x{}, expected {dim}x{dim}",
                    w.rows(),
                    w.cols()
                )));
            }
        }
        Ok(Self { dim, weights, seed })
    }

    /// Seeded Gaussian stack; `scale` is the per-entry standard deviation.
    pub fn gaussian(depth: usize, dim: usize, scale: f64, seed: u64) -> Result<Self> {
        if depth == 0 || dim == 0 {
            return Err(Error::Parameter("depth and dim must be positive".into()));
        }
        let weights = (0..depth)
            .map(|l| gaussian_matrix(dim, dim, scale, derive_seed(seed, l as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, weights, seed })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// The default start state: seeded unit Gaussian, normalized to norm 1.
    pub fn default_start(&self) -> Vec<f64> {
        unit_gaussian(self.dim, derive_seed(self.seed, 0xD1))
    }
}

/// Seeded Gaussian vector normalized to unit Euclidean norm.
pub fn unit_gaussian(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut h: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
    let n = norm2(&h);
    if n > 0.0 {
        h.iter_mut().for_each(|v| *v /= n);
    }
    h
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Run `h_{l+1} = h_l + W_l h_l`, returning all states `h_0..h_L`.
pub fn forward(stack: &LayerStack, h0: &[f64]) -> Result<Vec<Vec<f64>>> {
    if h0.len() != stack.dim {
        return Err(Error::Parameter(format!(
            "state has dimension {}, stack expects {}",
            h0.len(),
            stack.dim
        )));
    }
    let mut states = Vec::with_capacity(stack.depth() + 1);
    states.push(h0.to_vec());
    for w in &stack.weights {
        let prev = states.last().expect("non-empty");
        let wh = w.matvec(prev);
        states.push(prev.iter().zip(&wh).map(|(a, b)| a + b).collect());
    }
    Ok(states)
}

/// Per-layer record of clean norms, accumulated and one-step deviations, the
/// one-step bound, and the weight norms involved.
#[derive(Debug, Clone)]
pub struct PropagationTrace {
    pub bit_width: u8,
    /// Clean state norms `||h_l||`, length depth + 1.
    pub state_norms: Vec<f64>,
    /// Accumulated deviation `||h_l - h~_l||`, length depth + 1.
    pub deviations: Vec<f64>,
    /// One-step deviation `||(W_l - W~_l) h_l||` from the clean state, length depth.
    pub step_deviations: Vec<f64>,
    /// One-step bound `||W_l - W~_l||_2 * ||h_l||`, length depth.
    pub bounds: Vec<f64>,
    /// `||W_l||_2`, length depth.
    pub weight_norms: Vec<f64>,
    /// `||W_l - W~_l||_2`, length depth.
    pub weight_error_norms: Vec<f64>,
}

/// Run the clean and the quantized-weight recursions from the same start
/// state and record the deviation structure.
pub fn propagate_with_quantization(
    stack: &LayerStack,
    h0: &[f64],
    bits: u8,
) -> Result<PropagationTrace> {
    if h0.len() != stack.dim {
        return Err(Error::Parameter(format!(
            "state has dimension {}, stack expects {}",
            h0.len(),
            stack.dim
        )));
    }
    let depth = stack.depth();
    let mut clean = h0.to_vec();
    let mut perturbed = h0.to_vec();

    let mut trace = PropagationTrace {
        bit_width: bits,
        state_norms: Vec::with_capacity(depth + 1),
        deviations: Vec::with_capacity(depth + 1),
        step_deviations: Vec::with_capacity(depth),
        bounds: Vec::with_capacity(depth),
        weight_norms: Vec::with_capacity(depth),
        weight_error_norms: Vec::with_capacity(depth),
    };
    trace.state_norms.push(norm2(&clean));
    trace.deviations.push(0.0);

    for w in &stack.weights {
        let w_hat = quant::quantize_dequantize(w, bits)?;
        let dw = w.sub(&w_hat)?;
        let dw_norm = if spectral::frobenius_norm(&dw) == 0.0 {
            0.0
        } else {
            spectral::spectral_norm_default(&dw)?
        };
        let w_norm = spectral::spectral_norm_default(w)?;

        let h_norm = norm2(&clean);
        let step_dev = norm2(&dw.matvec(&clean));
        trace.weight_norms.push(w_norm);
        trace.weight_error_norms.push(dw_norm);
        trace.bounds.push(dw_norm * h_norm);
        trace.step_deviations.push(step_dev);

        let wh = w.matvec(&clean);
        clean = clean.iter().zip(&wh).map(|(a, b)| a + b).collect();
        let wh_hat = w_hat.matvec(&perturbed);
        perturbed = perturbed.iter().zip(&wh_hat).map(|(a, b)| a + b).collect();

        trace.state_norms.push(norm2(&clean));
        trace.deviations.push(norm2(
            &clean
                .iter()
                .zip(&perturbed)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        ));
    }
    Ok(trace)
}

/// State norm below which a relative deviation is reported as missing.
pub const AMPLIFICATION_NORM_FLOOR: f64 = 1e-12;

/// Relative deviation `||h_l - h~_l|| / ||h_l||` per state; `None` where the
/// clean norm is below the floor.
pub fn amplification_curve(stack: &LayerStack, h0: &[f64], bits: u8) -> Result<Vec<Option<f64>>> {
    let trace = propagate_with_quantization(stack, h0, bits)?;
    Ok(trace
        .state_norms
        .iter()
        .zip(&trace.deviations)
        .map(|(&h, &d)| (h >= AMPLIFICATION_NORM_FLOOR).then(|| d / h))
        .collect())
}
