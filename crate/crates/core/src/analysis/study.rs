//! End-to-end study over an entanglement grid: demos, metrics, probe, BC,
//! closed-loop evaluation, then correlations and paired comparisons.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bc::{train_bc_policy, Augmentation, BcConfig, PolicyKind};
use super::probe::{train_progression_probe, ProbeConfig};
use super::stats::{iqm, mean, paired_t_test, pearson, wilcoxon_signed_rank, CorrelationResult, PairedTestResult};
use super::AnalysisError;
use crate::metrics::{entanglement_report, MetricOptions};
use crate::par;
use crate::seeds;
use crate::synthworld::{generate_demos, Jitter, Variant, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyBc {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden_dim: usize,
    pub n_hidden_layers: usize,
}

impl Default for StudyBc {
    fn default() -> Self {
        let d = BcConfig::default();
        Self {
            steps: d.steps,
            batch: d.batch,
            lr: d.lr,
            hidden_dim: d.hidden_dim,
            n_hidden_layers: d.n_hidden_layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyProbe {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden_dim: usize,
    pub holdout: f64,
}

impl Default for StudyProbe {
    fn default() -> Self {
        let d = ProbeConfig::default();
        Self {
            steps: d.steps,
            batch: d.batch,
            lr: d.lr,
            hidden_dim: d.hidden_dim,
            holdout: d.holdout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyManifest {
    pub lambdas: Vec<f64>,
    pub variants: Vec<Variant>,
    pub augmentations: Vec<Augmentation>,
    /// Restrict augmentations other than `none` to these λ values.
    pub augmented_lambdas: Option<Vec<f64>>,
    pub seeds: usize,
    pub seed: u64,
    pub n_demos: usize,
    pub feature_dim: usize,
    pub obs_noise_sigma: f64,
    pub max_steps: usize,
    pub eval_episodes: usize,
    pub jitter: Jitter,
    pub bc: StudyBc,
    pub probe: StudyProbe,
    pub output_dir: Option<String>,
}

impl Default for StudyManifest {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            variants: vec![Variant::PickPlace],
            augmentations: vec![Augmentation::None, Augmentation::Flare, Augmentation::Te],
            augmented_lambdas: None,
            seeds: 5,
            seed: 0,
            n_demos: 25,
            feature_dim: 16,
            obs_noise_sigma: 0.01,
            max_steps: 60,
            eval_episodes: 50,
            jitter: Jitter::default(),
            bc: StudyBc::default(),
            probe: StudyProbe::default(),
            output_dir: None,
        }
    }
}

impl StudyManifest {
    pub fn from_path(path: &Path) -> Result<Self, AnalysisError> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |msg: &str| Err(AnalysisError::InvalidConfig(msg.into()));
        if self.lambdas.is_empty() || self.variants.is_empty() || self.augmentations.is_empty() {
            return bad("lambdas, variants and augmentations must be non-empty");
        }
        if self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("lambda values must lie in [0, 1]");
        }
        if self.seeds == 0 || self.eval_episodes == 0 {
            return bad("seeds and eval_episodes must be positive");
        }
        if self.n_demos < 2 {
            return bad("n_demos must be at least 2 for the probe holdout");
        }
        Ok(())
    }

    fn world(&self, variant: Variant, lambda: f64, seed_index: usize) -> WorldConfig {
        WorldConfig {
            variant,
            feature_dim: self.feature_dim,
            lambda,
            obs_noise_sigma: self.obs_noise_sigma,
            max_steps: self.max_steps,
            seed: seeds::derive(self.seed, &[seeds::tag("world"), variant.index() as u64, seed_index as u64]),
        }
    }

    fn runs(&self, aug: Augmentation, lambda: f64) -> bool {
        aug == Augmentation::None
            || self
                .augmented_lambdas
                .as_ref()
                .is_none_or(|ls| ls.contains(&lambda))
    }
}

/// One `(λ, variant, augmentation, seed)` result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub lambda: f64,
    pub variant: Variant,
    pub aug: Augmentation,
    pub seed: usize,
    pub success: f64,
    pub short: f64,
    pub long: f64,
    pub combined: f64,
    pub probe_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub lambda: f64,
    pub variant: Variant,
    pub aug: Augmentation,
    pub n: usize,
    pub iqm_success: f64,
    pub mean_success: f64,
}

/// Per-`(λ, seed)` means over variants, `none` augmentation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub lambda: f64,
    pub seed: usize,
    pub success: f64,
    pub combined: f64,
    pub probe_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub entanglement_vs_success: Option<CorrelationResult>,
    pub probe_loss_vs_success: Option<CorrelationResult>,
    /// Set when correlations could not be computed.
    pub omitted: Option<String>,
    pub points: Vec<CorrelationPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub lambda: f64,
    pub treatment: Augmentation,
    pub baseline: Augmentation,
    pub n: usize,
    pub mean_treatment: f64,
    pub mean_baseline: f64,
    pub wilcoxon: Option<PairedTestResult>,
    pub paired_t: Option<PairedTestResult>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub manifest: StudyManifest,
    pub cells: Vec<CellResult>,
    pub summary: Vec<GroupSummary>,
    pub correlations: Correlations,
    pub comparisons: Vec<Comparison>,
}

struct Unit {
    lambda: f64,
    variant: Variant,
    seed: usize,
}

struct UnitResult {
    short: f64,
    long: f64,
    combined: f64,
    probe_loss: f64,
}

pub fn run_study(m: &StudyManifest) -> Result<StudyReport, AnalysisError> {
    m.validate()?;
    let mut units = Vec::new();
    for &lambda in &m.lambdas {
        for &variant in &m.variants {
            for seed in 0..m.seeds {
                units.push(Unit { lambda, variant, seed });
            }
        }
    }
    let unit_results = par::map(&units, |u| -> Result<UnitResult, AnalysisError> {
        let world = m.world(u.variant, u.lambda, u.seed);
        let ds = generate_demos(&world, m.n_demos, m.jitter)?;
        let ent = entanglement_report(&ds, &MetricOptions::default())?;
        let probe = train_progression_probe(
            &ds,
            &ProbeConfig {
                hidden_dim: m.probe.hidden_dim,
                holdout: m.probe.holdout,
                steps: m.probe.steps,
                batch: m.probe.batch,
                lr: m.probe.lr,
                seed: seeds::derive(world.seed, &[seeds::tag("probe"), u.lambda.to_bits()]),
                ..Default::default()
            },
        )?;
        Ok(UnitResult {
            short: ent.short_range,
            long: ent.long_range,
            combined: ent.combined,
            probe_loss: probe.task_progression_loss,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let jobs: Vec<(usize, Augmentation)> = units
        .iter()
        .enumerate()
        .flat_map(|(i, u)| {
            m.augmentations
                .iter()
                .filter(|a| m.runs(**a, u.lambda))
                .map(move |a| (i, *a))
        })
        .collect();
    let cells = par::map(&jobs, |&(i, aug)| -> Result<CellResult, AnalysisError> {
        let u = &units[i];
        let world = m.world(u.variant, u.lambda, u.seed);
        let ds = generate_demos(&world, m.n_demos, m.jitter)?;
        let cfg = BcConfig {
            augmentation: aug,
            policy: PolicyKind::Mlp,
            steps: m.bc.steps,
            batch: m.bc.batch,
            lr: m.bc.lr,
            seed: seeds::derive(world.seed, &[seeds::tag("bc"), u.lambda.to_bits()]),
            hidden_dim: m.bc.hidden_dim,
            n_hidden_layers: m.bc.n_hidden_layers,
            ..Default::default()
        };
        let policy = train_bc_policy(&ds, &cfg)?;
        let eval = policy.evaluate(&world, m.eval_episodes, u.lambda.to_bits())?;
        let r = &unit_results[i];
        Ok(CellResult {
            lambda: u.lambda,
            variant: u.variant,
            aug,
            seed: u.seed,
            success: eval.success_rate,
            short: r.short,
            long: r.long,
            combined: r.combined,
            probe_loss: r.probe_loss,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let summary = summarize(m, &cells)?;
    let correlations = correlate(m, &cells);
    let comparisons = compare(m, &cells);
    Ok(StudyReport {
        manifest: m.clone(),
        cells,
        summary,
        correlations,
        comparisons,
    })
}

fn summarize(m: &StudyManifest, cells: &[CellResult]) -> Result<Vec<GroupSummary>, AnalysisError> {
    let mut out = Vec::new();
    for &lambda in &m.lambdas {
        for &variant in &m.variants {
            for &aug in &m.augmentations {
                let rates: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.lambda == lambda && c.variant == variant && c.aug == aug)
                    .map(|c| c.success)
                    .collect();
                if rates.is_empty() {
                    continue;
                }
                out.push(GroupSummary {
                    lambda,
                    variant,
                    aug,
                    n: rates.len(),
                    iqm_success: iqm(&rates)?,
                    mean_success: mean(&rates),
                });
            }
        }
    }
    Ok(out)
}

/// Per-`(λ, seed)` points from the raw cell table.
pub fn correlation_points(cells: &[CellResult]) -> Vec<CorrelationPoint> {
    let mut keys: Vec<(f64, usize)> = Vec::new();
    for c in cells.iter().filter(|c| c.aug == Augmentation::None) {
        if !keys.contains(&(c.lambda, c.seed)) {
            keys.push((c.lambda, c.seed));
        }
    }
    keys.into_iter()
        .map(|(lambda, seed)| {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.aug == Augmentation::None && c.lambda == lambda && c.seed == seed)
                .collect();
            let avg = |f: fn(&CellResult) -> f64| group.iter().map(|c| f(c)).sum::<f64>() / group.len() as f64;
            CorrelationPoint {
                lambda,
                seed,
                success: avg(|c| c.success),
                combined: avg(|c| c.combined),
                probe_loss: avg(|c| c.probe_loss),
            }
        })
        .collect()
}

fn correlate(_m: &StudyManifest, cells: &[CellResult]) -> Correlations {
    let points = correlation_points(cells);
    if points.len() < 3 {
        return Correlations {
            entanglement_vs_success: None,
            probe_loss_vs_success: None,
            omitted: Some(format!("{} points, need at least 3", points.len())),
            points,
        };
    }
    let success: Vec<f64> = points.iter().map(|p| p.success).collect();
    let combined: Vec<f64> = points.iter().map(|p| p.combined).collect();
    let probe: Vec<f64> = points.iter().map(|p| p.probe_loss).collect();
    let mut reasons = Vec::new();
    let mut run = |x: &[f64], what: &str| match pearson(x, &success) {
        Ok(r) => Some(r),
        Err(e) => {
            reasons.push(format!("{what}: {e}"));
            None
        }
    };
    let ent = run(&combined, "entanglement_vs_success");
    let pl = run(&probe, "probe_loss_vs_success");
    Correlations {
        entanglement_vs_success: ent,
        probe_loss_vs_success: pl,
        omitted: (!reasons.is_empty()).then(|| reasons.join("; ")),
        points,
    }
}

fn compare(m: &StudyManifest, cells: &[CellResult]) -> Vec<Comparison> {
    let pairs = [
        (Augmentation::Te, Augmentation::None),
        (Augmentation::Te, Augmentation::Flare),
    ];
    let mut out = Vec::new();
    for &lambda in &m.lambdas {
        for &(treatment, baseline) in &pairs {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for c in cells.iter().filter(|c| c.lambda == lambda && c.aug == treatment) {
                if let Some(base) = cells.iter().find(|o| {
                    o.lambda == lambda && o.aug == baseline && o.variant == c.variant && o.seed == c.seed
                }) {
                    a.push(c.success);
                    b.push(base.success);
                }
            }
            if a.is_empty() {
                continue;
            }
            let mut notes = Vec::new();
            let wilcoxon = wilcoxon_signed_rank(&a, &b)
                .map_err(|e| notes.push(format!("wilcoxon: {e}")))
                .ok();
            let paired_t = paired_t_test(&a, &b)
                .map_err(|e| notes.push(format!("paired_t: {e}")))
                .ok();
            out.push(Comparison {
                lambda,
                treatment,
                baseline,
                n: a.len(),
                mean_treatment: mean(&a),
                mean_baseline: mean(&b),
                wilcoxon,
                paired_t,
                notes,
            });
        }
    }
    out
}

pub const CELLS_HEADER: &str = "lambda,variant,aug,seed,success,short,long,combined,probe_loss";

pub fn cells_csv(cells: &[CellResult]) -> String {
    let mut s = String::from(CELLS_HEADER);
    s.push('\n');
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.lambda,
            c.variant.name(),
            c.aug.name(),
            c.seed,
            c.success,
            c.short,
            c.long,
            c.combined,
            c.probe_loss
        );
    }
    s
}

/// Parse a `cells.csv` produced by [`cells_csv`].
pub fn parse_cells_csv(text: &str) -> Result<Vec<CellResult>, AnalysisError> {
    let mut lines = text.lines();
    if lines.next() != Some(CELLS_HEADER) {
        return Err(AnalysisError::InvalidConfig("unexpected cells.csv header".into()));
    }
    let bad = |l: &str| AnalysisError::InvalidConfig(format!("malformed cells.csv row `{l}`"));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(bad(l));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(l));
            Ok(CellResult {
                lambda: num(0)?,
                variant: f[1].parse().map_err(|_| bad(l))?,
                aug: f[2].parse().map_err(|_| bad(l))?,
                seed: f[3].parse().map_err(|_| bad(l))?,
                success: num(4)?,
                short: num(5)?,
                long: num(6)?,
                combined: num(7)?,
                probe_loss: num(8)?,
            })
        })
        .collect()
}

/// Write `report.json` and `cells.csv` into `dir`.
pub fn write_study(report: &StudyReport, dir: &Path) -> Result<(), AnalysisError> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("cells.csv"), cells_csv(&report.cells))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> StudyManifest {
        StudyManifest {
            lambdas: vec![1.0],
            variants: vec![Variant::Reach],
            augmentations: vec![Augmentation::None],
            seeds: 1,
            n_demos: 4,
            eval_episodes: 4,
            bc: StudyBc {
                steps: 20,
                batch: 16,
                hidden_dim: 8,
                n_hidden_layers: 1,
                lr: 1e-3,
            },
            probe: StudyProbe {
                steps: 20,
                batch: 16,
                hidden_dim: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn single_cell_omits_correlations() {
        let r = run_study(&tiny()).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.summary.len(), 1);
        assert!(r.correlations.omitted.is_some());
        assert!(r.correlations.entanglement_vs_success.is_none());
        assert!(r.comparisons.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let r = run_study(&tiny()).unwrap();
        let text = cells_csv(&r.cells);
        assert_eq!(parse_cells_csv(&text).unwrap(), r.cells);
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let err = serde_json::from_str::<StudyManifest>(r#"{"lambdas":[0.5],"bogus":1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let m: StudyManifest = serde_json::from_str(r#"{"lambdas":[0.5]}"#).unwrap();
        assert_eq!(m.seeds, 5);
        let mut bad = tiny();
        bad.lambdas = vec![1.5];
        assert_eq!(run_study(&bad).unwrap_err().kind(), "InvalidConfig");
    }
}
