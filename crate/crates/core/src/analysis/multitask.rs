//! Multi-task imitation in one shared environment: four tasks whose
//! observations overlap but whose action sequences differ in timing.

use serde::{Deserialize, Serialize};

use super::bc::{train_bc_policy, Augmentation, BcConfig, PolicyKind};
use super::AnalysisError;
use crate::par;
use crate::synthworld::{generate_task_demos, Jitter, Variant, WorldConfig};
use crate::trajstore::DemoDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub world: WorldConfig,
    pub jitter: Jitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiTaskConfig {
    pub lambda: f64,
    pub n_demos: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Dwell range of the slow pick-and-place task.
    pub long_dwell: (usize, usize),
    pub long_max_steps: usize,
    pub policy: PolicyKind,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub embed_dim: usize,
    pub context: usize,
}

impl Default for MultiTaskConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            n_demos: 25,
            eval_episodes: 50,
            seed: 0,
            long_dwell: (12, 20),
            long_max_steps: 90,
            policy: PolicyKind::Ct,
            steps: 8000,
            batch: 64,
            lr: 1e-3,
            embed_dim: 32,
            context: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: String,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskResult {
    pub augmentation: Augmentation,
    pub seed: u64,
    pub per_task: Vec<TaskOutcome>,
    pub mean_success: f64,
    pub final_train_loss: Option<f64>,
}

impl MultiTaskConfig {
    /// pick_place, push, reach and a slow pick_place sharing one world seed.
    pub fn tasks(&self) -> Vec<TaskSpec> {
        let world = |variant, max_steps| WorldConfig {
            max_steps,
            ..WorldConfig::new(variant, self.lambda, self.seed)
        };
        let long = Jitter {
            dwell: self.long_dwell,
            ..Jitter::default()
        };
        vec![
            TaskSpec { name: "pick_place".into(), world: world(Variant::PickPlace, 60), jitter: Jitter::default() },
            TaskSpec { name: "push".into(), world: world(Variant::Push, 60), jitter: Jitter::default() },
            TaskSpec { name: "reach".into(), world: world(Variant::Reach, 60), jitter: Jitter::default() },
            TaskSpec {
                name: "pick_place_long".into(),
                world: world(Variant::PickPlace, self.long_max_steps),
                jitter: long,
            },
        ]
    }

    pub fn dataset(&self) -> Result<DemoDataset, AnalysisError> {
        let parts = self
            .tasks()
            .iter()
            .map(|t| generate_task_demos(&t.world, self.n_demos, t.jitter, &t.name))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DemoDataset::concat(parts)?)
    }

    fn bc(&self, augmentation: Augmentation) -> BcConfig {
        BcConfig {
            augmentation,
            policy: self.policy,
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
            ct_embed_dim: self.embed_dim,
            ct_context: self.context,
            ..BcConfig::default()
        }
    }
}

/// Trains one policy on all four tasks and evaluates it on each.
pub fn run_multitask(cfg: &MultiTaskConfig, augmentation: Augmentation) -> Result<MultiTaskResult, AnalysisError> {
    let ds = cfg.dataset()?;
    let policy = train_bc_policy(&ds, &cfg.bc(augmentation))?;
    let tasks = cfg.tasks();
    let rates = par::map(&tasks, |t| policy.evaluate(&t.world, cfg.eval_episodes, cfg.seed))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let per_task: Vec<TaskOutcome> = tasks
        .iter()
        .zip(&rates)
        .map(|(t, r)| TaskOutcome {
            task: t.name.clone(),
            success_rate: r.success_rate,
        })
        .collect();
    let mean_success = per_task.iter().map(|t| t.success_rate).sum::<f64>() / per_task.len() as f64;
    Ok(MultiTaskResult {
        augmentation,
        seed: cfg.seed,
        per_task,
        mean_success,
        final_train_loss: policy.train_loss_curve.last().copied(),
    })
}
