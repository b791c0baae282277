use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// A small region and model so that the pipeline runs in seconds.
const SMALL: &str = r#"{
    "synth": {"nodes_per_district": 3, "districts": 10},
    "pe": {"lap": {"max_freqs": 4, "dim": 4}, "rwse": {"steps": 4, "dim": 4}},
    "model": {"embed_dim": 8, "layers": 1, "heads": 2, "head_hidden": 8},
    "train": {"epochs": 5},
    "explain": {"permutations": 50, "top_k": 3}
}"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regiongnn"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup(root: &Path) -> (String, String) {
    let config = root.join("small.json");
    fs::write(&config, SMALL).unwrap();
    let data = root.join("data");
    let out = cli(&["synth", "--config", s(&config), "--out", s(&data)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    (s(&config).to_string(), s(&data).to_string())
}

#[test]
fn train_with_defaults_writes_checkpoint_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(cli(&["synth", "--out", s(&data)]).status.success());
    // published architecture, one epoch
    let run = dir.path().join("train");
    let out = cli(&[
        "train",
        "--data",
        s(&data),
        "--epochs",
        "1",
        "--out",
        s(&run),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok train"));
    for f in [
        "checkpoint/model.json",
        "checkpoint/params.json",
        "checkpoint/params.bin",
        "metrics.json",
        "run.log",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("resolved-config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["model.embed_dim"], 512);
    assert_eq!(resolved["train.epochs"], 1);
}

#[test]
fn sweep_writes_one_row_per_published_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path());
    let run = dir.path().join("sweep");
    let out = cli(&[
        "sweep",
        "--data",
        &data,
        "--config",
        &config,
        "--out",
        s(&run),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut r = csv::Reader::from_path(run.join("sweep.csv")).unwrap();
    let lambdas: Vec<String> = r.records().map(|rec| rec.unwrap()[0].to_string()).collect();
    assert_eq!(lambdas, ["0", "0.1", "0.3", "0.5", "0.7", "0.9"]);
}

#[test]
fn missing_labels_fail_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path());
    fs::remove_file(Path::new(&data).join("labels.csv")).unwrap();
    let out = cli(&[
        "train",
        "--data",
        &data,
        "--config",
        &config,
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error[missing-file]:") && err.contains("labels.csv"),
        "{err}"
    );
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn config_errors_are_single_machine_readable_lines() {
    let out = cli(&["synth", "--lambda", "1.5", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error[config]:") && err.contains("lambda"),
        "{err}"
    );
    let out = cli(&["synth", "--set", "nonsense", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_is_reproducible_from_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = setup(dir.path());
    let before = fs::read(Path::new(&data).join("features.csv")).unwrap();
    let a = dir.path().join("a");
    assert!(cli(&[
        "train",
        "--data",
        &data,
        "--config",
        &config,
        "--seed",
        "3",
        "--out",
        s(&a)
    ])
    .status
    .success());
    // rerun from the persisted configuration alone
    let b = dir.path().join("b");
    let resolved = a.join("resolved-config.json");
    assert!(cli(&[
        "train",
        "--data",
        &data,
        "--config",
        s(&resolved),
        "--out",
        s(&b)
    ])
    .status
    .success());
    for f in [
        "checkpoint/params.bin",
        "checkpoint/model.json",
        "metrics.json",
        "predictions.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let ck = a.join("checkpoint");
    let e = dir.path().join("eval");
    assert!(cli(&[
        "eval",
        "--data",
        &data,
        "--checkpoint",
        s(&ck),
        "--config",
        &config,
        "--out",
        s(&e)
    ])
    .status
    .success());
    assert!(e.join("probe.json").is_file() && e.join("encodings/rwse_raw.csv").is_file());
    let x = dir.path().join("explain");
    let out = cli(&[
        "explain",
        "--data",
        &data,
        "--checkpoint",
        s(&ck),
        "--config",
        &config,
        "--out",
        s(&x),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(x.join("shap_importance.csv").is_file());
    // inputs are never modified
    assert_eq!(
        fs::read(Path::new(&data).join("features.csv")).unwrap(),
        before
    );
}

#[test]
fn ingest_builds_a_snapshot_from_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let manifest =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prd_poi/manifest.json");
    let out_dir = dir.path().join("snap");
    let out = cli(&["ingest", "--manifest", s(&manifest), "--out", s(&out_dir)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let features = fs::read_to_string(out_dir.join("features.csv")).unwrap();
    assert!(
        features
            .lines()
            .any(|l| l.starts_with("Di Dong,18,0,12,298,42,120,")),
        "{features}"
    );
}
