//! Behaviour cloning on expert demos with optional temporal augmentation,
//! and the closed-loop policy wrapper used for evaluation.

use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::neural::{
    train_regressor, AdamConfig, CausalTransformerSpec, Mat, MlpSpec, Regressor, TrainConfig,
};
use crate::seeds;
use crate::synthworld::{evaluate_policy, EvalResult, Observation, Policy, WorldConfig, ACTION_DIM};
use crate::tempenc::{flare_row, temporal_encode, FlareConfig, FrameHistory, TemporalEncodingConfig};
use crate::trajstore::{DemoDataset, FeatureTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    None,
    Flare,
    Te,
    FlareTe,
}

impl Augmentation {
    pub fn name(self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Flare => "flare",
            Augmentation::Te => "te",
            Augmentation::FlareTe => "flare_te",
        }
    }

    fn uses_flare(self) -> bool {
        matches!(self, Augmentation::Flare | Augmentation::FlareTe)
    }

    fn uses_te(self) -> bool {
        matches!(self, Augmentation::Te | Augmentation::FlareTe)
    }
}

impl FromStr for Augmentation {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Augmentation::None),
            "flare" => Ok(Augmentation::Flare),
            "te" => Ok(Augmentation::Te),
            "flare_te" => Ok(Augmentation::FlareTe),
            other => Err(AnalysisError::InvalidConfig(format!("unknown augmentation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Mlp,
    Ct,
}

impl FromStr for PolicyKind {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlp" => Ok(PolicyKind::Mlp),
            "ct" => Ok(PolicyKind::Ct),
            other => Err(AnalysisError::InvalidConfig(format!("unknown policy `{other}`"))),
        }
    }
}

/// Builds per-frame policy inputs: `[flare(features) | features] ++ proprio ++ [γ(n)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputEncoder {
    pub augmentation: Augmentation,
    pub feature_dim: usize,
    pub proprio_dim: usize,
    pub te: TemporalEncodingConfig,
    pub flare: FlareConfig,
}

impl InputEncoder {
    pub fn new(augmentation: Augmentation, feature_dim: usize, proprio_dim: usize) -> Self {
        Self {
            augmentation,
            feature_dim,
            proprio_dim,
            te: TemporalEncodingConfig::default(),
            flare: FlareConfig::default(),
        }
    }

    pub fn output_dim(&self) -> usize {
        let f = if self.augmentation.uses_flare() {
            self.flare.output_dim(self.feature_dim)
        } else {
            self.feature_dim
        };
        let t = if self.augmentation.uses_te() { self.te.output_dim() } else { 0 };
        f + self.proprio_dim + t
    }

    fn row(&self, window: &[&[f64]], proprio: &[f64], n: usize) -> Vec<f64> {
        let mut row = if self.augmentation.uses_flare() {
            flare_row(window, self.flare.include_differences)
        } else {
            window.last().map(|f| f.to_vec()).unwrap_or_default()
        };
        row.extend_from_slice(proprio);
        if self.augmentation.uses_te() {
            row.extend(temporal_encode(n as u64, &self.te));
        }
        row
    }

    /// Encoded rows for every frame of a demo.
    pub fn encode_demo(&self, demo: &FeatureTrajectory) -> Vec<Vec<f64>> {
        let mut hist = FrameHistory::new(self.flare.history);
        (0..demo.frames())
            .map(|n| {
                hist.push(&demo.features.row_f64(n));
                self.row(&hist.window(), &demo.proprio.row_f64(n), n)
            })
            .collect()
    }

    fn check(&self, ds: &DemoDataset) -> Result<(), AnalysisError> {
        if ds.feature_dim() != self.feature_dim || ds.proprio_dim() != self.proprio_dim {
            return Err(AnalysisError::DimensionMismatch(format!(
                "encoder expects features {} / proprio {}, dataset has {} / {}",
                self.feature_dim,
                self.proprio_dim,
                ds.feature_dim(),
                ds.proprio_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyModel {
    Mlp(MlpSpec),
    Ct(CausalTransformerSpec),
}

impl PolicyModel {
    fn regressor(&self) -> &dyn Regressor {
        match self {
            PolicyModel::Mlp(s) => s,
            PolicyModel::Ct(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub augmentation: Augmentation,
    pub policy: PolicyKind,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// MLP width and depth.
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
    /// Transformer width; context and chunk length are both `ct_context`.
    pub ct_embed_dim: usize,
    pub ct_context: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            augmentation: Augmentation::None,
            policy: PolicyKind::Mlp,
            steps: 10_000,
            batch: 128,
            lr: 1e-4,
            seed: 0,
            hidden_dim: 256,
            n_hidden_layers: 4,
            ct_embed_dim: 128,
            ct_context: 12,
        }
    }
}

/// A trained behaviour-cloning policy and everything needed to run it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub encoder: InputEncoder,
    pub model: PolicyModel,
    pub params: Vec<f64>,
    pub train_loss_curve: Vec<f64>,
}

/// Context window of `len` tokens ending at `t`, padded by repeating token 0.
fn context_window(tokens: &[Vec<f64>], t: usize, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len * tokens[0].len());
    for k in 0..len {
        let idx = (t + k + 1).saturating_sub(len);
        out.extend_from_slice(&tokens[idx]);
    }
    out
}

/// Training rows for `model`. MLP rows are one frame each; CT rows are
/// flattened context windows with the next `chunk_len` actions as target,
/// zero-padded past the end of the demo.
pub fn bc_rows(ds: &DemoDataset, encoder: &InputEncoder, model: &PolicyModel) -> (Mat, Mat) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for demo in ds.demos() {
        let tokens = encoder.encode_demo(demo);
        let actions = demo.actions.to_rows_f64();
        match model {
            PolicyModel::Mlp(_) => {
                x.extend(tokens);
                y.extend(actions);
            }
            PolicyModel::Ct(spec) => {
                for t in 0..tokens.len() {
                    x.push(context_window(&tokens, t, spec.context_len));
                    let mut target = vec![0.0; spec.out_dim()];
                    for c in 0..spec.chunk_len {
                        if let Some(a) = actions.get(t + c) {
                            target[c * spec.action_dim..(c + 1) * spec.action_dim].copy_from_slice(a);
                        }
                    }
                    y.push(target);
                }
            }
        }
    }
    (Mat::from_rows(&x), Mat::from_rows(&y))
}

pub fn train_bc_policy(ds: &DemoDataset, cfg: &BcConfig) -> Result<TrainedPolicy, AnalysisError> {
    let encoder = InputEncoder::new(cfg.augmentation, ds.feature_dim(), ds.proprio_dim());
    encoder.check(ds)?;
    let d_in = encoder.output_dim();
    let model = match cfg.policy {
        PolicyKind::Mlp => PolicyModel::Mlp(MlpSpec {
            hidden_dim: cfg.hidden_dim,
            n_hidden_layers: cfg.n_hidden_layers,
            ..MlpSpec::policy(d_in, ds.action_dim())
        }),
        PolicyKind::Ct => {
            let mut spec = CausalTransformerSpec::new(d_in, ds.action_dim());
            spec.embed_dim = cfg.ct_embed_dim;
            spec.ffn_dim = 2 * cfg.ct_embed_dim;
            spec.context_len = cfg.ct_context;
            spec.chunk_len = cfg.ct_context;
            spec.validate()?;
            PolicyModel::Ct(spec)
        }
    };
    let mut rng = seeds::rng(cfg.seed, &[seeds::tag("bc-init")]);
    let mut params = match &model {
        PolicyModel::Mlp(s) => s.init(&mut rng),
        PolicyModel::Ct(s) => s.init(&mut rng),
    };
    let (x, y) = bc_rows(ds, &encoder, &model);
    let train_cfg = TrainConfig {
        steps: cfg.steps,
        batch: cfg.batch,
        adam: AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        seed: seeds::derive(cfg.seed, &[seeds::tag("bc-train")]),
        log_every: (cfg.steps / 50).max(1),
    };
    let curve = train_regressor(model.regressor(), &mut params, &x, &y, &train_cfg)?;
    Ok(TrainedPolicy {
        encoder,
        model,
        params: params.values,
        train_loss_curve: curve,
    })
}

impl TrainedPolicy {
    /// A fresh closed-loop controller; episode state lives in the returned value.
    pub fn controller(&self) -> Controller<'_> {
        Controller {
            policy: self,
            history: FrameHistory::new(self.encoder.flare.history),
            tokens: VecDeque::new(),
        }
    }

    /// Closed-loop success on one world.
    pub fn evaluate(&self, world: &WorldConfig, episodes: usize, seed: u64) -> Result<EvalResult, AnalysisError> {
        Ok(evaluate_policy(world, episodes, seed, || self.controller())?)
    }
}

/// Stateful wrapper that turns a [`TrainedPolicy`] into a [`Policy`]. The
/// transformer replans every step and executes the first action of its chunk.
pub struct Controller<'a> {
    policy: &'a TrainedPolicy,
    history: FrameHistory,
    tokens: VecDeque<Vec<f64>>,
}

impl Policy for Controller<'_> {
    fn reset(&mut self, _episode_seed: u64) {
        self.history.clear();
        self.tokens.clear();
    }

    fn act(&mut self, obs: &Observation<'_>) -> [f64; ACTION_DIM] {
        let enc = &self.policy.encoder;
        self.history.push(obs.features);
        let token = enc.row(&self.history.window(), &obs.proprio, obs.timestep);
        let row = match &self.policy.model {
            PolicyModel::Mlp(_) => token,
            PolicyModel::Ct(spec) => {
                if self.tokens.is_empty() {
                    self.tokens.extend(std::iter::repeat_n(token.clone(), spec.context_len));
                }
                self.tokens.pop_front();
                self.tokens.push_back(token);
                self.tokens.iter().flatten().copied().collect()
            }
        };
        let x = Mat::from_vec(1, row.len(), row);
        let out = self
            .policy
            .model
            .regressor()
            .predict(&self.policy.params, &x)
            .expect("encoder output matches model input");
        [out.data[0], out.data[1]]
    }
}
