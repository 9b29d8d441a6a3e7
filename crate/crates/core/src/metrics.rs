//! Temporal entanglement metrics over feature trajectories.
//!
//! * Short-range: mean cosine similarity between stride-separated frames of
//!   task-centred features. High values mean consecutive frames are nearly
//!   indistinguishable.
//! * Long-range: mean cosine similarity between all ordered frame pairs of a
//!   demo, on raw (uncentred) features. High values mean distant moments of a
//!   rollout alias onto each other.
//! * Combined: their product.
//!
//! Pairs containing a near-zero vector are skipped and counted rather than
//! scored. All sums are pooled over pairs, accumulated in demo order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::trajstore::{DemoDataset, FeatureTrajectory, TrajError};

/// Vectors with Euclidean norm at or below this are treated as degenerate.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("degenerate vector (norm <= {NORM_EPS:e})")]
    DegenerateVector,
    #[error("every frame pair was degenerate")]
    AllPairsDegenerate,
    #[error("demo {task}#{demo} has {frames} frames, need at least {needed}")]
    TooFewFrames {
        task: String,
        demo: u64,
        frames: usize,
        needed: usize,
    },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Traj(#[from] TrajError),
}

impl MetricsError {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricsError::DegenerateVector => "DegenerateVector",
            MetricsError::AllPairsDegenerate => "AllPairsDegenerate",
            MetricsError::TooFewFrames { .. } => "TooFewFrames",
            MetricsError::LengthMismatch(..) => "LengthMismatch",
            MetricsError::Traj(e) => e.kind(),
        }
    }
}

/// Divisor used for the long-range aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Mean over all ordered pairs `n != m`, pooled across demos.
    #[default]
    Pairs,
    /// Per-demo sum over pairs divided by the frame count `N`, averaged over
    /// demos. Not bounded to [-1, 1] for `N > 2`.
    Paper,
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    if u.len() != v.len() {
        return Err(MetricsError::LengthMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu <= NORM_EPS || nv <= NORM_EPS {
        return Err(MetricsError::DegenerateVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Features of one task with the task-wide mean frame subtracted.
#[derive(Debug, Clone)]
pub struct CenteredTask {
    pub mean: Vec<f64>,
    /// `demos[i][n]` is the centred feature vector of frame `n` in demo `i`.
    pub demos: Vec<Vec<Vec<f64>>>,
}

/// Subtract the mean over every frame of every demo of `task`.
pub fn task_center(dataset: &DemoDataset, task: &str) -> Result<CenteredTask, MetricsError> {
    let t = dataset.task(task)?;
    Ok(center_demos(&t.demos, dataset.feature_dim()))
}

fn center_demos(demos: &[FeatureTrajectory], dim: usize) -> CenteredTask {
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for d in demos {
        for n in 0..d.frames() {
            for (m, &x) in mean.iter_mut().zip(d.features.row(n)) {
                *m += x as f64;
            }
        }
        count += d.frames();
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let demos = demos
        .iter()
        .map(|d| {
            (0..d.frames())
                .map(|n| {
                    d.features
                        .row(n)
                        .iter()
                        .zip(&mean)
                        .map(|(&x, m)| x as f64 - m)
                        .collect()
                })
                .collect()
        })
        .collect();
    CenteredTask { mean, demos }
}

/// Pooled cosine statistics for one scope (demo, task or corpus).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PairSum {
    sum: f64,
    pairs: u64,
    skipped: u64,
    /// Sum over demos of `sum_i / N_i`, used by [`Normalization::Paper`].
    per_frame_sum: f64,
    demos: u64,
}

impl PairSum {
    fn add(&mut self, o: &PairSum) {
        self.sum += o.sum;
        self.pairs += o.pairs;
        self.skipped += o.skipped;
        self.per_frame_sum += o.per_frame_sum;
        self.demos += o.demos;
    }

    fn value(&self, normalization: Normalization) -> Option<f64> {
        match normalization {
            _ if self.pairs == 0 => None,
            Normalization::Pairs => Some(self.sum / self.pairs as f64),
            Normalization::Paper => Some(self.per_frame_sum / self.demos as f64),
        }
    }
}

/// Unit vectors for each frame; `None` marks a degenerate frame.
fn unit_rows(frames: &[Vec<f64>]) -> Vec<Option<Vec<f64>>> {
    frames
        .iter()
        .map(|f| {
            let n = norm(f);
            (n > NORM_EPS).then(|| f.iter().map(|x| x / n).collect())
        })
        .collect()
}

fn sequential_pairs(frames: &[Vec<f64>], stride: usize) -> PairSum {
    let units = unit_rows(frames);
    let mut s = PairSum::default();
    for n in 0..frames.len().saturating_sub(stride) {
        match (&units[n], &units[n + stride]) {
            (Some(a), Some(b)) => {
                s.sum += dot(a, b).clamp(-1.0, 1.0);
                s.pairs += 1;
            }
            _ => s.skipped += 1,
        }
    }
    s.per_frame_sum = s.sum / frames.len() as f64;
    s.demos = 1;
    s
}

fn all_pairs(frames: &[Vec<f64>]) -> PairSum {
    let units = unit_rows(frames);
    let mut s = PairSum::default();
    let n = frames.len();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            match (&units[i], &units[j]) {
                (Some(a), Some(b)) => {
                    s.sum += dot(a, b).clamp(-1.0, 1.0);
                    s.pairs += 1;
                }
                _ => s.skipped += 1,
            }
        }
    }
    s.per_frame_sum = s.sum / n as f64;
    s.demos = 1;
    s
}

/// One metric over a dataset, with a per-task breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeScore {
    pub value: f64,
    /// `(task, value, scored pairs)` in dataset task order.
    pub per_task: Vec<(String, f64, u64)>,
    pub pairs: u64,
    pub skipped_pairs: u64,
}

fn check_frames(dataset: &DemoDataset, needed: usize) -> Result<(), MetricsError> {
    for d in dataset.demos() {
        if d.frames() < needed {
            return Err(MetricsError::TooFewFrames {
                task: d.task_name.clone(),
                demo: d.demo_id,
                frames: d.frames(),
                needed,
            });
        }
    }
    Ok(())
}

fn raw_frames(d: &FeatureTrajectory) -> Vec<Vec<f64>> {
    d.features.to_rows_f64()
}

fn score<F>(
    dataset: &DemoDataset,
    centered: bool,
    normalization: Normalization,
    per_demo: F,
) -> Result<RangeScore, MetricsError>
where
    F: Fn(&[Vec<f64>]) -> PairSum + Sync + Send,
{
    let mut total = PairSum::default();
    let mut per_task = Vec::with_capacity(dataset.tasks().len());
    for task in dataset.tasks() {
        let sums: Vec<PairSum> = if centered {
            let c = center_demos(&task.demos, dataset.feature_dim());
            par::map(&c.demos, |frames| per_demo(frames))
        } else {
            par::map(&task.demos, |d| per_demo(&raw_frames(d)))
        };
        let mut t = PairSum::default();
        sums.iter().for_each(|s| t.add(s));
        total.add(&t);
        per_task.push((
            task.name.clone(),
            t.value(normalization).unwrap_or(f64::NAN),
            t.pairs,
        ));
    }
    let value = total
        .value(normalization)
        .ok_or(MetricsError::AllPairsDegenerate)?;
    Ok(RangeScore {
        value,
        per_task,
        pairs: total.pairs,
        skipped_pairs: total.skipped,
    })
}

/// Average cosine similarity between frames `n` and `n + stride`.
pub fn short_range_entanglement(
    dataset: &DemoDataset,
    centered: bool,
    stride: usize,
) -> Result<RangeScore, MetricsError> {
    let stride = stride.max(1);
    check_frames(dataset, stride + 1)?;
    score(dataset, centered, Normalization::Pairs, |f| {
        sequential_pairs(f, stride)
    })
}

/// Average cosine similarity between all ordered pairs of distinct frames.
pub fn long_range_entanglement(
    dataset: &DemoDataset,
    normalization: Normalization,
    centered: bool,
) -> Result<RangeScore, MetricsError> {
    check_frames(dataset, 2)?;
    score(dataset, centered, normalization, all_pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub normalization: Normalization,
    /// Centre features per task before the short-range metric.
    pub center_short: bool,
    /// Centre features per task before the long-range metric.
    pub center_long: bool,
    pub stride: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            normalization: Normalization::Pairs,
            center_short: true,
            center_long: false,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskEntanglement {
    pub short: f64,
    pub long: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub short_range: f64,
    pub long_range: f64,
    pub combined: f64,
    pub normalization: Normalization,
    pub skipped_pairs: u64,
    pub per_task: BTreeMap<String, TaskEntanglement>,
}

pub fn entanglement_report(
    dataset: &DemoDataset,
    opts: &MetricOptions,
) -> Result<EntanglementReport, MetricsError> {
    let short = short_range_entanglement(dataset, opts.center_short, opts.stride)?;
    let long = long_range_entanglement(dataset, opts.normalization, opts.center_long)?;
    let per_task = short
        .per_task
        .iter()
        .zip(&long.per_task)
        .map(|((name, s, _), (_, l, _))| (name.clone(), TaskEntanglement { short: *s, long: *l }))
        .collect();
    Ok(EntanglementReport {
        short_range: short.value,
        long_range: long.value,
        combined: short.value * long.value,
        normalization: opts.normalization,
        skipped_pairs: short.skipped_pairs + long.skipped_pairs,
        per_task,
    })
}

/// Principal-component scores of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `scores[n][k]`: projection of frame `n` on component `k`.
    pub scores: Vec<Vec<f64>>,
    /// Sample variance captured by each returned component.
    pub variances: Vec<f64>,
    /// Unit principal directions in feature space, one per component.
    pub loadings: Vec<Vec<f64>>,
    /// Fewer than the requested number of non-zero components existed; the
    /// missing columns are zero.
    pub rank_deficient: bool,
}

impl PcaProjection {
    /// `frame,pc1,pc2,...` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let k = self.variances.len();
        let mut out = String::from("frame");
        for c in 1..=k {
            out.push_str(&format!(",pc{c}"));
        }
        out.push('\n');
        for (n, row) in self.scores.iter().enumerate() {
            out.push_str(&n.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Project a trajectory onto its top principal components via the
/// eigendecomposition of the centred frame Gram matrix.
pub fn pca_project(
    trajectory: &FeatureTrajectory,
    components: usize,
) -> Result<PcaProjection, MetricsError> {
    let n = trajectory.frames();
    if n < components + 1 {
        return Err(MetricsError::TooFewFrames {
            task: trajectory.task_name.clone(),
            demo: trajectory.demo_id,
            frames: n,
            needed: components + 1,
        });
    }
    let d = trajectory.features.cols();
    let rows = trajectory.features.to_rows_f64();
    let mut mean = vec![0.0; d];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let gram = &x * x.transpose();
    let eig = SymmetricEigen::new(gram);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-10 + f64::MIN_POSITIVE;

    let mut scores = vec![vec![0.0; components]; n];
    let mut variances = vec![0.0; components];
    let mut loadings = vec![vec![0.0; d]; components];
    let mut rank_deficient = false;
    for (k, &idx) in order.iter().take(components).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda <= tol {
            rank_deficient = true;
            continue;
        }
        let u = eig.eigenvectors.column(idx);
        let s = lambda.sqrt();
        // Direction in feature space: X^T u / sigma.
        let mut v: Vec<f64> = (0..d).map(|j| x.column(j).dot(&u) / s).collect();
        let pivot = v
            .iter()
            .copied()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (j, a)| if a.abs() > best.1.abs() { (j, a) } else { best });
        let sign = if pivot.1 < 0.0 { -1.0 } else { 1.0 };
        v.iter_mut().for_each(|a| *a *= sign);
        for (i, row) in scores.iter_mut().enumerate() {
            row[k] = sign * s * u[i];
        }
        variances[k] = lambda / (n - 1) as f64;
        loadings[k] = v;
    }
    Ok(PcaProjection {
        scores,
        variances,
        loadings,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajstore::{FrameMatrix, TaskDemos};
    use approx::assert_abs_diff_eq;

    pub(crate) fn demo(task: &str, id: u64, rows: &[Vec<f64>]) -> FeatureTrajectory {
        let n = rows.len();
        FeatureTrajectory {
            task_name: task.into(),
            demo_id: id,
            features: FrameMatrix::from_rows_f64(rows).unwrap(),
            proprio: FrameMatrix::zeros(n, 1),
            actions: FrameMatrix::zeros(n, 1),
            success: true,
        }
    }

    fn single(rows: &[Vec<f64>]) -> DemoDataset {
        let d = rows[0].len();
        DemoDataset::new(
            vec![TaskDemos {
                name: "t".into(),
                demos: vec![demo("t", 0, rows)],
            }],
            d,
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.8, epsilon = 1e-15);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(MetricsError::DegenerateVector)
        ));
    }

    #[test]
    fn centering_examples() {
        let ds = single(&[vec![1.0, 0.0], vec![3.0, 0.0]]);
        let c = task_center(&ds, "t").unwrap();
        assert_eq!(c.mean, vec![2.0, 0.0]);
        assert_eq!(c.demos[0], vec![vec![-1.0, 0.0], vec![1.0, 0.0]]);

        let ds = single(&vec![vec![2.0, 5.0]; 4]);
        let c = task_center(&ds, "t").unwrap();
        assert!(c.demos[0].iter().flatten().all(|&x| x == 0.0));
        assert_eq!(task_center(&ds, "nope").unwrap_err().kind(), "UnknownTask");
    }

    #[test]
    fn three_frame_short_range() {
        let ds = single(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let s = short_range_entanglement(&ds, true, 1).unwrap();
        assert_abs_diff_eq!(s.value, -1.0 / 10f64.sqrt(), epsilon = 1e-12);
        assert_eq!(s.pairs, 2);
    }

    #[test]
    fn constant_demo() {
        let ds = single(&vec![vec![2.0, 1.0]; 5]);
        assert_abs_diff_eq!(
            short_range_entanglement(&ds, false, 1).unwrap().value,
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(
            short_range_entanglement(&ds, true, 1).unwrap_err().kind(),
            "AllPairsDegenerate"
        );
        assert_abs_diff_eq!(
            long_range_entanglement(&ds, Normalization::Pairs, false)
                .unwrap()
                .value,
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn orthogonal_pair_long_range() {
        let ds = single(&[vec![1.0, 0.0], vec![0.0, 3.0]]);
        let l = long_range_entanglement(&ds, Normalization::Pairs, false).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.pairs, 2);
    }

    #[test]
    fn literal_divisor_exceeds_unit_range() {
        let ds = single(&vec![vec![1.0, 1.0]; 4]);
        let l = long_range_entanglement(&ds, Normalization::Paper, false).unwrap();
        // 12 identical ordered pairs over N = 4 frames.
        assert_abs_diff_eq!(l.value, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stride_requires_frames() {
        let ds = single(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(
            short_range_entanglement(&ds, false, 2).unwrap_err().kind(),
            "TooFewFrames"
        );
    }

    #[test]
    fn skipped_pairs_counted() {
        let ds = single(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let s = short_range_entanglement(&ds, false, 1).unwrap();
        assert_eq!((s.pairs, s.skipped_pairs), (1, 2));
        let l = long_range_entanglement(&ds, Normalization::Pairs, false).unwrap();
        assert_eq!((l.pairs, l.skipped_pairs), (6, 6));
    }

    #[test]
    fn report_combined_is_product() {
        let ds = single(&[vec![1.0, 0.2], vec![0.3, 1.0], vec![-1.0, 0.5], vec![0.1, 0.1]]);
        let r = entanglement_report(&ds, &MetricOptions::default()).unwrap();
        assert_eq!(r.combined, r.short_range * r.long_range);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["normalization"], "pairs");
        assert!(json["per_task"]["t"]["short"].is_number());
    }

    #[test]
    fn pca_collinear() {
        let t = demo("t", 0, &[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]);
        let p = pca_project(&t, 2).unwrap();
        let r2 = 2f64.sqrt();
        for (got, want) in p.scores.iter().zip([-r2, 0.0, r2]) {
            assert_abs_diff_eq!(got[0], want, epsilon = 1e-12);
            assert_abs_diff_eq!(got[1], 0.0, epsilon = 1e-12);
        }
        assert!(p.rank_deficient);
        assert!(p.loadings[0].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn pca_orders_by_variance() {
        let t = demo(
            "t",
            0,
            &[vec![3.0, 0.5], vec![-3.0, -0.5], vec![3.0, -0.5], vec![-3.0, 0.5]],
        );
        let p = pca_project(&t, 2).unwrap();
        assert!(p.variances[0] >= p.variances[1]);
        assert!(!p.rank_deficient);
        assert!(p.to_csv().starts_with("frame,pc1,pc2\n0,"));
    }

    #[test]
    fn pca_needs_frames() {
        let t = demo("t", 0, &[vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(pca_project(&t, 2).unwrap_err().kind(), "TooFewFrames");
    }
}
