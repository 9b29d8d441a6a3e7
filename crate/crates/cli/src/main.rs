use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use entangle::analysis::{
    self, paired_t_test, run_multitask, run_study, train_bc_policy, train_progression_probe, wilcoxon_signed_rank,
    write_study, Augmentation, BcConfig, MultiTaskConfig, PolicyKind, ProbeConfig, StudyManifest, TrainedPolicy,
};
use entangle::metrics::{entanglement_report, pca_project, MetricOptions, Normalization};
use entangle::synthworld::{generate_demos, Jitter, Variant, WorldConfig};
use entangle::tempenc::{temporal_encode, TemporalEncodingConfig};
use entangle::trajstore::{load_dataset, save_dataset};

#[derive(Parser)]
#[command(name = "entangle", version, about = "Temporal entanglement analysis toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Base seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the stdout summary.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker thread cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations from the synthetic world.
    Synth {
        #[arg(long, default_value = "pick_place")]
        variant: Variant,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 25)]
        n_demos: usize,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 60)]
        max_steps: usize,
    },
    /// Short-range, long-range and combined entanglement of a dataset.
    Metrics {
        dataset: PathBuf,
        #[arg(long, default_value = "pairs", value_parser = parse_normalization)]
        normalization: Normalization,
        /// Score the short-range metric on raw features.
        #[arg(long)]
        no_center: bool,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Principal-component projection of one demo.
    Pca {
        dataset: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        demo: u64,
        #[arg(long, default_value_t = 2)]
        components: usize,
    },
    /// Print the sinusoidal timestep encoding of `n` as one CSV line.
    Encode {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 32)]
        bands: usize,
        #[arg(long, default_value_t = 100.0)]
        scale: f64,
    },
    /// Train a task-progression probe and report its held-out loss.
    Probe {
        dataset: PathBuf,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long, default_value_t = 256)]
        hidden: usize,
    },
    /// Behaviour cloning, evaluated in the dataset's world when known.
    BcTrain {
        dataset: PathBuf,
        #[arg(long, default_value = "none")]
        aug: Augmentation,
        #[arg(long, default_value = "mlp")]
        policy: PolicyKind,
        #[arg(long, default_value_t = 10000)]
        steps: usize,
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 256)]
        hidden: usize,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
    },
    /// Closed-loop evaluation of a saved policy.
    Rollout {
        policy: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
    },
    /// Full grid study from a JSON manifest.
    Study {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// One policy over four tasks sharing a world, with and without augmentation.
    Multitask {
        #[arg(long, value_delimiter = ',', default_value = "none,te")]
        aug: Vec<Augmentation>,
        #[arg(long, default_value = "ct")]
        policy: PolicyKind,
        #[arg(long, default_value_t = 8000)]
        steps: usize,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
    },
    /// Paired test between two columns of numbers.
    Stats {
        #[arg(long, value_parser = ["wilcoxon", "ttest"])]
        test: String,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    match s {
        "pairs" => Ok(Normalization::Pairs),
        "paper" => Ok(Normalization::Paper),
        _ => Err(format!("expected `pairs` or `paper`, got `{s}`")),
    }
}

struct Failure {
    kind: &'static str,
    message: String,
}

macro_rules! domain_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure { kind: e.kind(), message: e.to_string() }
            }
        }
    )*};
}

domain_error!(
    entangle::trajstore::TrajError,
    entangle::metrics::MetricsError,
    entangle::tempenc::TempEncError,
    entangle::synthworld::WorldError,
    analysis::AnalysisError
);

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        let kind = if e.kind() == std::io::ErrorKind::NotFound { "MissingFile" } else { "IoFailure" };
        Failure { kind, message: e.to_string() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure { kind: "MalformedInput", message: e.to_string() }
    }
}

fn failure(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure { kind, message: message.into() }
}

struct Ctx {
    seed: u64,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn world_of(extra: Option<&Value>) -> Option<WorldConfig> {
    serde_json::from_value(extra?.get("world")?.clone()).ok()
}

fn read_column(path: &Path) -> Result<Vec<f64>, Failure> {
    fs::read_to_string(path)?
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| failure("MalformedInput", format!("{}: not a number `{t}`", path.display()))))
        .collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = cli.global;
    let default_out = match &cli.command {
        Command::Study { manifest } => StudyManifest::from_path(manifest)?.output_dir.map(PathBuf::from),
        _ => None,
    };
    let ctx = Ctx {
        seed: g.seed.unwrap_or(0),
        out: g.out.clone().or(default_out).unwrap_or_else(|| PathBuf::from("out")),
        quiet: g.quiet,
    };
    match cli.command {
        Command::Synth { variant, lambda, n_demos, feature_dim, noise, max_steps } => {
            let world = WorldConfig {
                feature_dim,
                obs_noise_sigma: noise,
                max_steps,
                ..WorldConfig::new(variant, lambda, ctx.seed)
            };
            let ds = generate_demos(&world, n_demos, Jitter::default())?;
            save_dataset(&ds, &ctx.out)?;
            let s = ds.stats();
            ctx.say(format!(
                "wrote {} demos ({} frames) of {} at lambda {} to {}",
                n_demos,
                s.total_frames,
                variant.name(),
                lambda,
                ctx.out.display()
            ));
        }
        Command::Metrics { dataset, normalization, no_center, stride } => {
            let ds = load_dataset(&dataset)?;
            let opts = MetricOptions {
                normalization,
                center_short: !no_center,
                stride,
                ..Default::default()
            };
            let r = entanglement_report(&ds, &opts)?;
            let path = ctx.write_json("report.json", &r)?;
            ctx.say(format!(
                "short {:.6}  long {:.6}  combined {:.6}  -> {}",
                r.short_range,
                r.long_range,
                r.combined,
                path.display()
            ));
        }
        Command::Pca { dataset, task, demo, components } => {
            let ds = load_dataset(&dataset)?;
            let traj = ds
                .task(&task)?
                .demos
                .iter()
                .find(|d| d.demo_id == demo)
                .ok_or_else(|| failure("UnknownDemo", format!("task `{task}` has no demo {demo}")))?;
            let p = pca_project(traj, components)?;
            fs::create_dir_all(&ctx.out)?;
            let path = ctx.out.join("pca.csv");
            fs::write(&path, p.to_csv())?;
            ctx.say(format!("variances {:?} -> {}", p.variances, path.display()));
            if p.rank_deficient {
                ctx.say("warning: fewer non-zero components than requested");
            }
        }
        Command::Encode { n, bands, scale } => {
            let cfg = TemporalEncodingConfig::new(bands, scale)?;
            let line = temporal_encode(n, &cfg).iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
            if let Some(dir) = &g.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("encoding.csv"), format!("{line}\n"))?;
            }
            println!("{line}");
        }
        Command::Probe { dataset, steps, holdout, hidden } => {
            let ds = load_dataset(&dataset)?;
            let cfg = ProbeConfig {
                steps,
                holdout,
                hidden_dim: hidden,
                seed: ctx.seed,
                ..Default::default()
            };
            let r = train_progression_probe(&ds, &cfg)?;
            let path = ctx.write_json(
                "probe.json",
                &json!({
                    "task_progression_loss": r.task_progression_loss,
                    "config": cfg,
                    "train_loss_curve": r.train_loss_curve,
                }),
            )?;
            ctx.say(format!("held-out progression loss {:.6} -> {}", r.task_progression_loss, path.display()));
        }
        Command::BcTrain { dataset, aug, policy, steps, batch, lr, hidden, episodes } => {
            let ds = load_dataset(&dataset)?;
            let cfg = BcConfig {
                augmentation: aug,
                policy,
                steps,
                batch,
                lr,
                hidden_dim: hidden,
                seed: ctx.seed,
                ..Default::default()
            };
            let trained = train_bc_policy(&ds, &cfg)?;
            let world = world_of(ds.extra.as_ref());
            let eval = match &world {
                Some(w) => Some(trained.evaluate(w, episodes, ctx.seed)?),
                None => None,
            };
            ctx.write_json("policy.json", &json!({ "world": world, "policy": trained }))?;
            let path = ctx.write_json(
                "bc.json",
                &json!({
                    "config": cfg,
                    "final_train_loss": trained.train_loss_curve.last(),
                    "evaluation": eval,
                }),
            )?;
            match eval {
                Some(e) => ctx.say(format!("success rate {:.3} over {} episodes -> {}", e.success_rate, e.episodes, path.display())),
                None => ctx.say(format!("no world recorded in dataset; skipped evaluation -> {}", path.display())),
            }
        }
        Command::Rollout { policy, episodes } => {
            let saved: Value = serde_json::from_str(&fs::read_to_string(&policy)?)?;
            let world = world_of(Some(&saved))
                .ok_or_else(|| failure("InvalidConfig", "policy file records no world to evaluate in"))?;
            let trained: TrainedPolicy = serde_json::from_value(saved["policy"].clone())?;
            let e = trained.evaluate(&world, episodes, ctx.seed)?;
            let path = ctx.write_json("rollout.json", &e)?;
            ctx.say(format!("success rate {:.3} over {} episodes -> {}", e.success_rate, e.episodes, path.display()));
        }
        Command::Study { manifest } => {
            let mut m = StudyManifest::from_path(&manifest)?;
            if let Some(seed) = g.seed {
                m.seed = seed;
            }
            let report = run_study(&m)?;
            write_study(&report, &ctx.out)?;
            for s in &report.summary {
                ctx.say(format!(
                    "lambda {:<5} {:<10} {:<8} iqm success {:.3}",
                    s.lambda,
                    s.variant.name(),
                    s.aug.name(),
                    s.iqm_success
                ));
            }
            if let Some(c) = &report.correlations.entanglement_vs_success {
                ctx.say(format!("r(entanglement, success) = {:.3}", c.pearson_r));
            }
            if let Some(c) = &report.correlations.probe_loss_vs_success {
                ctx.say(format!("r(probe loss, success) = {:.3}", c.pearson_r));
            }
            ctx.say(format!("report -> {}", ctx.out.join("report.json").display()));
        }
        Command::Multitask { aug, policy, steps, episodes } => {
            let cfg = MultiTaskConfig {
                policy,
                steps,
                eval_episodes: episodes,
                seed: ctx.seed,
                ..Default::default()
            };
            let mut results = Vec::new();
            for a in aug {
                let r = run_multitask(&cfg, a)?;
                ctx.say(format!("{:<8} mean success {:.3}", a.name(), r.mean_success));
                results.push(r);
            }
            ctx.write_json("multitask.json", &json!({ "config": cfg, "results": results }))?;
        }
        Command::Stats { test, a, b } => {
            let (xa, xb) = (read_column(&a)?, read_column(&b)?);
            let r = if test == "wilcoxon" { wilcoxon_signed_rank(&xa, &xb)? } else { paired_t_test(&xa, &xb)? };
            let path = ctx.write_json("stats.json", &r)?;
            ctx.say(format!("statistic {:.6}  p {:.6} -> {}", r.statistic, r.p_two_sided, path.display()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    #[cfg(feature = "parallel")]
    if let Some(jobs) = cli.global.jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::from(1)
        }
    }
}
