use std::path::Path;
use std::process::{Command, Output};

fn entangle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entangle")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str) {
    let out = entangle(&["--quiet", "--seed", seed, "--out", path(dir), "synth", "--variant", "reach", "--n-demos", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn metrics_happy_path_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth(&ds, "1");
    let out_dir = tmp.path().join("m");
    let out = entangle(&["--out", path(&out_dir), "metrics", path(&ds)]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let (s, l, c) = (
        report["short_range"].as_f64().unwrap(),
        report["long_range"].as_f64().unwrap(),
        report["combined"].as_f64().unwrap(),
    );
    assert_eq!(c, s * l);
}

#[test]
fn missing_dataset_is_a_domain_error() {
    let out = entangle(&["metrics", "/definitely/not/here"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "MissingFile");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(entangle(&["encode"]).status.code(), Some(2));
    assert_eq!(entangle(&["bc-train", "x", "--aug", "bogus"]).status.code(), Some(2));
    assert_eq!(entangle(&["metrics", "x", "--normalization", "half"]).status.code(), Some(2));
    assert_eq!(entangle(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in [
        "synth", "metrics", "pca", "encode", "probe", "bc-train", "rollout", "study", "multitask", "stats",
    ] {
        let out = entangle(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
    }
    assert_eq!(entangle(&["--help"]).status.code(), Some(0));
}

#[test]
fn encode_zero_is_alternating() {
    let out = entangle(&["encode", "--n", "0"]);
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let values: Vec<&str> = line.trim().split(',').collect();
    assert_eq!(values.len(), 64);
    for (i, v) in values.iter().enumerate() {
        assert_eq!(*v, if i % 2 == 0 { "0" } else { "1" });
    }
}

#[test]
fn synth_is_seed_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, "5");
    synth(&b, "5");
    synth(&c, "6");
    let blob = "blobs/t000_d0000_features.f32";
    let read = |d: &Path| std::fs::read(d.join(blob)).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["extra"]["world"]["seed"], 5);
}

#[test]
fn train_rollout_probe_and_pca() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    synth(&ds, "2");
    let bc = tmp.path().join("bc");
    let out = entangle(&[
        "--quiet", "--out", path(&bc), "bc-train", path(&ds), "--aug", "te", "--steps", "50", "--hidden", "16",
        "--episodes", "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(bc.join("bc.json")).unwrap()).unwrap();
    assert_eq!(summary["evaluation"]["episodes"], 4);

    let ro = tmp.path().join("ro");
    let out = entangle(&["--quiet", "--out", path(&ro), "rollout", path(&bc.join("policy.json")), "--episodes", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ro.join("rollout.json").exists());

    let pr = tmp.path().join("pr");
    let out = entangle(&["--quiet", "--out", path(&pr), "probe", path(&ds), "--steps", "20", "--hidden", "8"]);
    assert!(out.status.success());
    let probe: serde_json::Value = serde_json::from_slice(&std::fs::read(pr.join("probe.json")).unwrap()).unwrap();
    assert!(probe["task_progression_loss"].as_f64().unwrap() >= 0.0);

    let pca = tmp.path().join("pca");
    let out = entangle(&["--quiet", "--out", path(&pca), "pca", path(&ds), "--task", "reach", "--demo", "1"]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(pca.join("pca.csv")).unwrap().starts_with("frame,pc1,pc2\n"));

    let out = entangle(&["pca", path(&ds), "--task", "nope", "--demo", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stats_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("a.csv"), "1,1,1,2\n").unwrap();
    std::fs::write(tmp.path().join("b.csv"), "0\n0\n0\n0\n").unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    let out_dir = tmp.path().join("s");
    let out = entangle(&["--quiet", "--out", path(&out_dir), "stats", "--test", "ttest", "--a", path(&a), "--b", path(&b)]);
    assert!(out.status.success());
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("stats.json")).unwrap()).unwrap();
    assert!((r["statistic"].as_f64().unwrap() - 5.0).abs() < 1e-12);
    let out = entangle(&["stats", "--test", "wilcoxon", "--a", path(&a), "--b", path(&a)]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "AllZeroDifferences");
}

#[test]
fn study_honours_seed_and_out() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("m.json");
    std::fs::write(
        &manifest,
        r#"{"lambdas":[1.0],"variants":["reach"],"augmentations":["none"],"seeds":1,"n_demos":4,
            "eval_episodes":3,"bc":{"steps":20,"hidden_dim":8,"n_hidden_layers":1},
            "probe":{"steps":10,"hidden_dim":8}}"#,
    )
    .unwrap();
    let run = |seed: &str, dir: &str| {
        let out_dir = tmp.path().join(dir);
        let out = entangle(&["--quiet", "--seed", seed, "--out", path(&out_dir), "study", "--manifest", path(&manifest)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("report.json")).unwrap()
    };
    let (a, b, c) = (run("4", "a"), run("4", "b"), run("9", "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);

    std::fs::write(&manifest, r#"{"lambdas":[1.0],"colour":"red"}"#).unwrap();
    let out = entangle(&["study", "--manifest", path(&manifest)]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "MalformedManifest");
}
