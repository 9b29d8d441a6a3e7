//! Task-progression probe: a shallow MLP regressing a frame's relative
//! position in its demo from features alone.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::neural::{evaluate_mse, train_regressor, AdamConfig, Mat, MlpSpec, NetworkParams, TrainConfig};
use crate::seeds;
use crate::trajstore::{split_demos, DemoDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    pub holdout: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            n_hidden_layers: 2,
            holdout: 0.2,
            steps: 5000,
            batch: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    /// Mean squared error on held-out demos.
    pub task_progression_loss: f64,
    pub train_loss_curve: Vec<f64>,
    pub spec: MlpSpec,
    pub params: NetworkParams,
}

/// `n / (N − 1)` for `n = 0..N`.
pub fn progression_targets(frames: usize) -> Vec<f64> {
    let denom = frames.saturating_sub(1).max(1) as f64;
    (0..frames).map(|n| n as f64 / denom).collect()
}

fn probe_rows(ds: &DemoDataset) -> (Mat, Mat) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for demo in ds.demos() {
        let targets = progression_targets(demo.frames());
        for (n, t) in targets.into_iter().enumerate() {
            x.push(demo.features.row_f64(n));
            y.push([t]);
        }
    }
    (Mat::from_rows(&x), Mat::from_rows(&y))
}

pub fn train_progression_probe(ds: &DemoDataset, cfg: &ProbeConfig) -> Result<ProbeResult, AnalysisError> {
    let (train, test) = split_demos(ds, cfg.holdout, seeds::derive(cfg.seed, &[seeds::tag("holdout")]))?;
    let spec = MlpSpec {
        hidden_dim: cfg.hidden_dim,
        n_hidden_layers: cfg.n_hidden_layers,
        ..MlpSpec::probe(ds.feature_dim())
    };
    let mut params = spec.init(&mut seeds::rng(cfg.seed, &[seeds::tag("probe-init")]));
    let (x, y) = probe_rows(&train);
    let train_cfg = TrainConfig {
        steps: cfg.steps,
        batch: cfg.batch,
        adam: AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        seed: seeds::derive(cfg.seed, &[seeds::tag("probe-train")]),
        log_every: (cfg.steps / 50).max(1),
    };
    let curve = train_regressor(&spec, &mut params, &x, &y, &train_cfg)?;
    let (xt, yt) = probe_rows(&test);
    let loss = evaluate_mse(&spec, &params.values, &xt, &yt)?;
    Ok(ProbeResult {
        task_progression_loss: loss,
        train_loss_curve: curve,
        spec,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_exact_grid() {
        assert_eq!(progression_targets(5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(progression_targets(2), vec![0.0, 1.0]);
    }
}
