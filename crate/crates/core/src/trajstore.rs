//! Demonstration corpora: the trajectory data model and its on-disk format.
//!
//! A dataset directory holds a `manifest.json` plus one headerless blob per
//! matrix. Blobs are IEEE-754 binary32, little-endian, row-major
//! `[frames × dim]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("task `{0}` has too few demos to split")]
    TooFewDemos(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

impl TrajError {
    /// Short machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            TrajError::MissingFile(_) => "MissingFile",
            TrajError::SizeMismatch { .. } => "SizeMismatch",
            TrajError::DimMismatch(_) => "DimMismatch",
            TrajError::NonFinite(_) => "NonFinite",
            TrajError::MalformedManifest(_) => "MalformedManifest",
            TrajError::InvalidTrajectory(_) => "InvalidTrajectory",
            TrajError::TooFewDemos(_) => "TooFewDemos",
            TrajError::UnknownTask(_) => "UnknownTask",
            TrajError::IoFailure(_) => "IoFailure",
        }
    }
}

/// Dense row-major `f32` matrix, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FrameMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TrajError> {
        if data.len() != rows * cols {
            return Err(TrajError::DimMismatch(format!(
                "{} values for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from `f64` rows, narrowing to storage precision.
    pub fn from_rows_f64<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, TrajError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TrajError::DimMismatch("ragged rows".into()));
            }
            data.extend(r.iter().map(|&x| x as f32));
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// All rows upcast to `f64`.
    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row_f64(i)).collect()
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    fn from_le_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Self {
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self { rows, cols, data }
    }
}

/// One demonstration: per-frame features with aligned proprioception and actions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrajectory {
    pub task_name: String,
    pub demo_id: u64,
    pub features: FrameMatrix,
    pub proprio: FrameMatrix,
    /// `actions[n]` is the expert action taken at frame `n`.
    pub actions: FrameMatrix,
    pub success: bool,
}

impl FeatureTrajectory {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn validate(&self) -> Result<(), TrajError> {
        let n = self.features.rows();
        if n < 2 {
            return Err(TrajError::InvalidTrajectory(format!(
                "{}#{}: {n} frames, need at least 2",
                self.task_name, self.demo_id
            )));
        }
        if self.proprio.rows() != n || self.actions.rows() != n {
            return Err(TrajError::DimMismatch(format!(
                "{}#{}: frame counts {}/{}/{} differ",
                self.task_name,
                self.demo_id,
                n,
                self.proprio.rows(),
                self.actions.rows()
            )));
        }
        for (name, m) in [
            ("features", &self.features),
            ("proprio", &self.proprio),
            ("actions", &self.actions),
        ] {
            if !m.is_finite() {
                return Err(TrajError::NonFinite(format!(
                    "{}#{} {name}",
                    self.task_name, self.demo_id
                )));
            }
        }
        if self.actions.as_slice().iter().any(|a| a.abs() > 1.0) {
            return Err(TrajError::InvalidTrajectory(format!(
                "{}#{}: action outside [-1, 1]",
                self.task_name, self.demo_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDemos {
    pub name: String,
    pub demos: Vec<FeatureTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n_tasks: usize,
    pub demos_per_task: Vec<usize>,
    pub frames_per_demo: Vec<usize>,
    pub total_frames: usize,
}

/// A validated corpus of demonstrations grouped by task, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    tasks: Vec<TaskDemos>,
    feature_dim: usize,
    proprio_dim: usize,
    action_dim: usize,
    /// Free-form provenance echoed into the manifest.
    pub extra: Option<serde_json::Value>,
}

impl DemoDataset {
    pub fn new(
        tasks: Vec<TaskDemos>,
        feature_dim: usize,
        proprio_dim: usize,
        action_dim: usize,
    ) -> Result<Self, TrajError> {
        if feature_dim == 0 || proprio_dim == 0 || action_dim == 0 {
            return Err(TrajError::MalformedManifest("dimensions must be positive".into()));
        }
        if tasks.is_empty() {
            return Err(TrajError::MalformedManifest("no tasks".into()));
        }
        for t in &tasks {
            if t.demos.is_empty() {
                return Err(TrajError::MalformedManifest(format!("task `{}` has no demos", t.name)));
            }
            for d in &t.demos {
                if d.features.cols() != feature_dim
                    || d.proprio.cols() != proprio_dim
                    || d.actions.cols() != action_dim
                {
                    return Err(TrajError::DimMismatch(format!(
                        "{}#{}: dims {}/{}/{} vs dataset {feature_dim}/{proprio_dim}/{action_dim}",
                        t.name,
                        d.demo_id,
                        d.features.cols(),
                        d.proprio.cols(),
                        d.actions.cols()
                    )));
                }
                d.validate()?;
            }
        }
        Ok(Self {
            tasks,
            feature_dim,
            proprio_dim,
            action_dim,
            extra: None,
        })
    }

    /// Build from a flat list, grouping by `task_name` in first-seen order.
    pub fn from_trajectories(
        trajectories: Vec<FeatureTrajectory>,
        feature_dim: usize,
        proprio_dim: usize,
        action_dim: usize,
    ) -> Result<Self, TrajError> {
        let mut tasks: Vec<TaskDemos> = Vec::new();
        for t in trajectories {
            match tasks.iter_mut().find(|g| g.name == t.task_name) {
                Some(g) => g.demos.push(t),
                None => tasks.push(TaskDemos {
                    name: t.task_name.clone(),
                    demos: vec![t],
                }),
            }
        }
        Self::new(tasks, feature_dim, proprio_dim, action_dim)
    }

    pub fn tasks(&self) -> &[TaskDemos] {
        &self.tasks
    }

    pub fn task(&self, name: &str) -> Result<&TaskDemos, TrajError> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| TrajError::UnknownTask(name.to_string()))
    }

    pub fn task_names(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn proprio_dim(&self) -> usize {
        self.proprio_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Iterate every demo in task order.
    pub fn demos(&self) -> impl Iterator<Item = &FeatureTrajectory> {
        self.tasks.iter().flat_map(|t| t.demos.iter())
    }

    pub fn stats(&self) -> DatasetStats {
        let demos_per_task = self.tasks.iter().map(|t| t.demos.len()).collect();
        let frames_per_demo: Vec<usize> = self.demos().map(|d| d.frames()).collect();
        DatasetStats {
            n_tasks: self.tasks.len(),
            demos_per_task,
            total_frames: frames_per_demo.iter().sum(),
            frames_per_demo,
        }
    }

    /// Merge several datasets with identical dimensions, appending tasks.
    pub fn concat(parts: Vec<DemoDataset>) -> Result<Self, TrajError> {
        let first = parts
            .first()
            .ok_or_else(|| TrajError::MalformedManifest("nothing to concatenate".into()))?;
        let dims = (first.feature_dim, first.proprio_dim, first.action_dim);
        let mut tasks = Vec::new();
        for p in parts {
            if (p.feature_dim, p.proprio_dim, p.action_dim) != dims {
                return Err(TrajError::DimMismatch("datasets differ in dimensions".into()));
            }
            tasks.extend(p.tasks);
        }
        Self::new(tasks, dims.0, dims.1, dims.2)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    feature_dim: usize,
    proprio_dim: usize,
    action_dim: usize,
    tasks: Vec<ManifestTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTask {
    name: String,
    demos: Vec<ManifestDemo>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDemo {
    id: u64,
    frames: usize,
    success: bool,
    features: String,
    proprio: String,
    actions: String,
}

fn read_blob(root: &Path, rel: &str, rows: usize, cols: usize) -> Result<FrameMatrix, TrajError> {
    let path = root.join(rel);
    if !path.is_file() {
        return Err(TrajError::MissingFile(path));
    }
    let bytes = fs::read(&path)?;
    let expected = (rows * cols * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(TrajError::SizeMismatch {
            path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(FrameMatrix::from_le_bytes(rows, cols, &bytes))
}

/// Load and fully validate a dataset directory.
pub fn load_dataset(root: &Path) -> Result<DemoDataset, TrajError> {
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(TrajError::MissingFile(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| TrajError::MalformedManifest(e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(TrajError::MalformedManifest(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for mt in &manifest.tasks {
        let mut demos = Vec::with_capacity(mt.demos.len());
        for md in &mt.demos {
            demos.push(FeatureTrajectory {
                task_name: mt.name.clone(),
                demo_id: md.id,
                features: read_blob(root, &md.features, md.frames, manifest.feature_dim)?,
                proprio: read_blob(root, &md.proprio, md.frames, manifest.proprio_dim)?,
                actions: read_blob(root, &md.actions, md.frames, manifest.action_dim)?,
                success: md.success,
            });
        }
        tasks.push(TaskDemos {
            name: mt.name.clone(),
            demos,
        });
    }
    let mut ds = DemoDataset::new(
        tasks,
        manifest.feature_dim,
        manifest.proprio_dim,
        manifest.action_dim,
    )?;
    ds.extra = manifest.extra;
    Ok(ds)
}

/// Write `dataset` under `root`, creating the directory if needed.
pub fn save_dataset(dataset: &DemoDataset, root: &Path) -> Result<(), TrajError> {
    if dataset.tasks.iter().any(|t| t.demos.is_empty()) || dataset.tasks.is_empty() {
        return Err(TrajError::MalformedManifest("empty task".into()));
    }
    fs::create_dir_all(root.join("blobs"))?;
    let mut tasks = Vec::with_capacity(dataset.tasks.len());
    for (ti, task) in dataset.tasks.iter().enumerate() {
        let mut demos = Vec::with_capacity(task.demos.len());
        for (di, demo) in task.demos.iter().enumerate() {
            let rel = |kind: &str, m: &FrameMatrix| -> Result<String, TrajError> {
                let rel = format!("blobs/t{ti:03}_d{di:04}_{kind}.f32");
                fs::write(root.join(&rel), m.to_le_bytes())?;
                Ok(rel)
            };
            demos.push(ManifestDemo {
                id: demo.demo_id,
                frames: demo.frames(),
                success: demo.success,
                features: rel("features", &demo.features)?,
                proprio: rel("proprio", &demo.proprio)?,
                actions: rel("actions", &demo.actions)?,
            });
        }
        tasks.push(ManifestTask {
            name: task.name.clone(),
            demos,
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        feature_dim: dataset.feature_dim,
        proprio_dim: dataset.proprio_dim,
        action_dim: dataset.action_dim,
        tasks,
        extra: dataset.extra.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| TrajError::MalformedManifest(e.to_string()))?;
    fs::write(root.join(MANIFEST_FILE), text)?;
    Ok(())
}

/// Per-task random split into (train, holdout). Deterministic in `seed`.
pub fn split_demos(
    dataset: &DemoDataset,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(DemoDataset, DemoDataset), TrajError> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(TrajError::InvalidTrajectory(format!(
            "holdout fraction {holdout_fraction} not in (0, 1)"
        )));
    }
    let mut rng = seeds::rng(seed, &[seeds::tag("split_demos")]);
    let mut train = Vec::new();
    let mut hold = Vec::new();
    for task in &dataset.tasks {
        let n = task.demos.len();
        if n < 2 {
            return Err(TrajError::TooFewDemos(task.name.clone()));
        }
        let n_hold = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut held: Vec<usize> = idx[..n_hold].to_vec();
        held.sort_unstable();
        let (mut tr, mut ho) = (Vec::new(), Vec::new());
        for (i, d) in task.demos.iter().enumerate() {
            if held.binary_search(&i).is_ok() {
                ho.push(d.clone());
            } else {
                tr.push(d.clone());
            }
        }
        train.push(TaskDemos {
            name: task.name.clone(),
            demos: tr,
        });
        hold.push(TaskDemos {
            name: task.name.clone(),
            demos: ho,
        });
    }
    let dims = (dataset.feature_dim, dataset.proprio_dim, dataset.action_dim);
    Ok((
        DemoDataset::new(train, dims.0, dims.1, dims.2)?,
        DemoDataset::new(hold, dims.0, dims.1, dims.2)?,
    ))
}
