use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepjive_cli::{Experiment, ExperimentConfig};

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepjive")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn write_config(dir: &Path, doc: serde_json::Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, doc.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn quick_1d(dir: &Path, epochs: usize) -> String {
    write_config(
        dir,
        serde_json::json!({
            "experiment": "synthetic-1d",
            "out": dir.join("out"),
            "train": { "epochs": epochs },
            "rank": { "epochs": 300 }
        }),
    )
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_json(r#"{"experiment": "synthetic-1d", "trian": {}}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"train": {"epoch": 3}}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"experiment": "mnist-sideways"}"#).is_err());
}

#[test]
fn overrides_apply_on_top_of_the_preset() {
    let cfg = ExperimentConfig::from_json(r#"{"experiment": "mnist-paired", "train": {"epochs": 3}, "network": {"conv_layers": 1}}"#).unwrap();
    let preset = ExperimentConfig::preset(Experiment::MnistPaired);
    assert_eq!(cfg.train.epochs, 3);
    assert_eq!(cfg.train.lr, preset.train.lr);
    assert_eq!(cfg.network.kernels, preset.network.kernels);
    let spec = cfg.network_spec().unwrap();
    assert_eq!(spec.layers[0].len(), 1);
    assert_eq!(spec.individual_widths, vec![26, 26]);
}

#[test]
fn show_config_round_trips() {
    for exp in ["synthetic-1d", "mnist-overlaid", "mnist-paired"] {
        let text = ok(&["show-config", "--experiment", exp]);
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, ExperimentConfig::preset(serde_json::from_value(serde_json::json!(exp)).unwrap()));
    }
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_1d(dir.path(), 5);
    let text = ok(&["show-config", "--config", &cfg, "--seed", "7", "--variant", "merged", "--ortho", "off"]);
    let c = ExperimentConfig::from_json(&text).unwrap();
    assert_eq!((c.seed, c.train.seed), (7, 7));
    assert_eq!(c.network.variant.name(), "merged");
    assert!(!c.train.ortho);
    assert!(!run(&["show-config", "--variant", "fused"]).status.success());
}

#[test]
fn gen_data_is_reproducible_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_1d(dir.path(), 5);
    ok(&["gen-data", "--config", &cfg]);
    let first = fs::read(dir.path().join("out/dataset.bin")).unwrap();
    let summary = fs::read_to_string(dir.path().join("out/data_summary.csv")).unwrap();
    ok(&["gen-data", "--config", &cfg]);
    assert_eq!(first, fs::read(dir.path().join("out/dataset.bin")).unwrap());
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "block,sample_shape,variables,n,n_train,n_test,labels");
    assert_eq!(lines[1], "0,100,100,100,90,10,false");
    assert_eq!(lines[2], "1,100,100,100,90,10,false");
}

#[test]
fn missing_mnist_is_an_actionable_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({"experiment": "mnist-overlaid", "out": dir.path().join("out"), "data": {"mnist_dir": dir.path().join("nowhere")}}),
    );
    let o = run(&["gen-data", "--config", &cfg]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("DEEPJIVE_MNIST_DIR"), "{err}");
}

#[test]
fn train_before_gen_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--config", &quick_1d(dir.path(), 5)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-data"));
}

#[test]
fn merged_history_has_zero_identity_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_1d(dir.path(), 20);
    ok(&["gen-data", "--config", &cfg]);
    ok(&["train", "--config", &cfg, "--variant", "merged"]);
    let history = fs::read_to_string(dir.path().join("out/history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,L_arch,L_ortho,L_regression,joint_identity_error"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    for r in rows {
        assert_eq!(r.rsplit(',').next().unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn explicit_1d_trains_quickly_with_the_full_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let start = std::time::Instant::now();
    ok(&["gen-data", "--out", out]);
    ok(&["train", "--out", out, "--variant", "explicit"]);
    assert!(start.elapsed().as_secs() < 300);
    let latents = fs::read_to_string(dir.path().join("out/latents_test.csv")).unwrap();
    assert_eq!(latents.lines().next(), Some("sample,joint0_0,joint1_0,individual0_0,individual1_0,residual0_0,residual1_0"));
    assert_eq!(latents.lines().count(), 11);
}

fn joint_rank(dir: &Path) -> usize {
    let text = fs::read_to_string(dir.join("out/rank_joint.csv")).unwrap();
    text.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap()
}

#[test]
fn rank_select_finds_the_shared_factor_of_1d_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_1d(dir.path(), 5);
    ok(&["gen-data", "--config", &cfg]);
    let text = ok(&["rank-select", "--config", &cfg]);
    assert!(text.contains("joint rank 1"), "{text}");
    let at95 = joint_rank(dir.path());
    assert_eq!(at95, 1);
    let first = fs::read(dir.path().join("out/rank_null.csv")).unwrap();
    ok(&["rank-select", "--config", &cfg, "--confidence", "0.99"]);
    assert!(joint_rank(dir.path()) <= at95);
    ok(&["rank-select", "--config", &cfg]);
    assert_eq!(first, fs::read(dir.path().join("out/rank_null.csv")).unwrap());
    let blocks = fs::read_to_string(dir.path().join("out/rank_blocks.csv")).unwrap();
    for line in blocks.lines().skip(1) {
        assert_eq!(line.split(',').nth(1), Some("2"), "{line}");
    }
}

#[test]
fn evaluate_reports_every_feature_group() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({
            "experiment": "mnist-paired",
            "out": dir.path().join("out"),
            "data": {"n": 400, "n_train": 300, "mnist_dir": mnist_dir()},
            "network": {"conv_layers": 0},
            "train": {"epochs": 2},
            "evaluate": {"maps": true}
        }),
    );
    ok(&["gen-data", "--config", &cfg]);
    ok(&["train", "--config", &cfg]);
    ok(&["evaluate", "--config", &cfg]);
    let metrics = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let tags: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(tags, ["joint-only", "individual-only", "all", "baseline"]);
    for line in metrics.lines().skip(1) {
        let acc: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    assert!(dir.path().join("out/maps/m0_joint_0.pgm").exists());
    let pgm = fs::read(dir.path().join("out/maps/m1_individual_0.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n28 28\n255\n"));
}

#[test]
fn evaluate_with_a_mismatched_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_1d(dir.path(), 5);
    ok(&["gen-data", "--config", &cfg]);
    ok(&["train", "--config", &cfg, "--variant", "explicit"]);
    // the merged network has a different parameter set
    let o = run(&["evaluate", "--config", &cfg, "--variant", "merged"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    assert_eq!(deepjive_cli::output::fmt(0.1), "1.0000000000000001e-1");
    assert_eq!(deepjive_cli::output::fmt(-2.5), "-2.5000000000000000e0");
    let v = 1.0f64 / 3.0;
    assert_eq!(deepjive_cli::output::fmt(v).parse::<f64>().unwrap(), v);
    assert_eq!(deepjive_cli::output::fmt_opt(None), "");
}
