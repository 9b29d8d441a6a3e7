//! Differentiable core: ReLU MLPs, a causal transformer with action
//! chunking, squared-error loss, Adam, and finite-difference gradient checks.
//!
//! All training math is `f64`.

mod checkpoint;
mod gradcheck;
mod mat;
mod mlp;
mod params;
mod transformer;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use gradcheck::{grad_check, relative_error, Differentiable, REL_FLOOR};
pub use mat::Mat;
pub use mlp::{mlp_backward, mlp_forward, MlpSpec, OutputActivation};
pub use params::{adam_step, glorot_uniform, AdamConfig, AdamState, Layout, NetworkParams, ParamView};
pub use transformer::{ct_backward, ct_forward, ct_hidden_states, CausalTransformerSpec};

use crate::seeds;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected} columns, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("sequence of {len} tokens exceeds context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("gradient length {got} does not match {expected} parameters")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl NeuralError {
    pub fn kind(&self) -> &'static str {
        match self {
            NeuralError::ShapeMismatch { .. } => "ShapeMismatch",
            NeuralError::ContextOverflow { .. } => "ContextOverflow",
            NeuralError::LengthMismatch { .. } => "LengthMismatch",
            NeuralError::InvalidSpec(_) => "InvalidSpec",
            NeuralError::Checkpoint(_) => "Checkpoint",
            NeuralError::Io(_) => "IoFailure",
        }
    }
}

/// A model trained by squared-error regression on flat input rows.
pub trait Regressor: Sync {
    fn n_params(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, params: &[f64], x: &Mat) -> Result<Mat, NeuralError>;
    /// Mean over rows of `‖y_row − f(x_row)‖²` and its gradient.
    fn loss_grad(&self, params: &[f64], x: &Mat, y: &Mat) -> Result<(f64, Vec<f64>), NeuralError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Loss-curve resolution: one point is the mean of this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 128,
            adam: AdamConfig::default(),
            seed: 0,
            log_every: 100,
        }
    }
}

fn gather(src: &Mat, idx: &[usize]) -> Mat {
    let mut out = Mat::zeros(idx.len(), src.cols);
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(src.row(i));
    }
    out
}

/// Minibatch Adam on `(x, y)`, sampling rows with replacement. Returns the
/// training-loss curve. Deterministic in `cfg.seed`.
pub fn train_regressor<R: Regressor + ?Sized>(
    model: &R,
    params: &mut NetworkParams,
    x: &Mat,
    y: &Mat,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, NeuralError> {
    if x.rows != y.rows || x.rows == 0 {
        return Err(NeuralError::ShapeMismatch {
            expected: x.rows,
            got: y.rows,
        });
    }
    let mut rng = seeds::rng(cfg.seed, &[seeds::tag("minibatch")]);
    let batch = cfg.batch.max(1);
    let log_every = cfg.log_every.max(1);
    let mut curve = Vec::with_capacity(cfg.steps / log_every + 1);
    let mut acc = 0.0;
    let mut idx = vec![0usize; batch];
    for step in 0..cfg.steps {
        idx.iter_mut().for_each(|i| *i = rng.gen_range(0..x.rows));
        let (loss, grad) = model.loss_grad(&params.values, &gather(x, &idx), &gather(y, &idx))?;
        adam_step(params, &grad, &cfg.adam)?;
        acc += loss;
        if (step + 1) % log_every == 0 {
            curve.push(acc / log_every as f64);
            acc = 0.0;
        }
    }
    Ok(curve)
}

/// Mean over rows of the squared error, without gradients.
pub fn evaluate_mse<R: Regressor + ?Sized>(
    model: &R,
    params: &[f64],
    x: &Mat,
    y: &Mat,
) -> Result<f64, NeuralError> {
    let pred = model.predict(params, x)?;
    let se: f64 = pred
        .data
        .iter()
        .zip(&y.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(se / x.rows.max(1) as f64)
}
