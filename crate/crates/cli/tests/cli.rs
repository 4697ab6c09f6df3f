//! Black-box tests of the command-line surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfsnn"))
}

struct Workspace {
    root: PathBuf,
}

impl Workspace {
    fn new(name: &str) -> Self {
        let root = std::env::temp_dir().join(format!("mfsnn-cli-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        Workspace { root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.root);
    }
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn mfsnn")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Tiny dataset overrides keeping CLI tests fast.
fn small_generate(dir: &Path, seed: u64) {
    run_ok(&[
        "generate",
        "--preset",
        "grasp-touch",
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "n_channels=16",
        "--set",
        "trials_per_class=8",
        "--set",
        "n_days=3",
        "--set",
        "t_bins=20",
    ]);
}

const SMALL_MODEL: &[&str] = &[
    "--set",
    "n_subencoders=4",
    "--set",
    "t_out=5",
    "--set",
    "epochs=3",
];

#[test]
fn generate_presets_have_the_documented_dimensions() {
    let ws = Workspace::new("presets");
    let out = run_ok(&[
        "generate",
        "--preset",
        "grasp-touch",
        "--seed",
        "7",
        "--out",
        ws.path("gt").to_str().unwrap(),
        "--set",
        "t_bins=5", // shrink only the time axis; channel/day structure stays
    ]);
    assert!(out.contains("2400 trials"), "{out}");
    assert!(out.contains("128 channels"), "{out}");
    assert!(out.contains("8 days"), "{out}");
    assert!(out.contains("4 classes"), "{out}");

    let out = run_ok(&[
        "generate",
        "--preset",
        "center-out",
        "--seed",
        "7",
        "--out",
        ws.path("co").to_str().unwrap(),
        "--set",
        "t_bins=5",
    ]);
    assert!(out.contains("8000 trials"), "{out}");
    assert!(out.contains("192 channels"), "{out}");
    assert!(out.contains("4 days"), "{out}");
    assert!(out.contains("8 classes"), "{out}");
}

#[test]
fn unknown_preset_and_unknown_key_are_validation_errors() {
    let ws = Workspace::new("badkeys");
    let out = run(&[
        "generate",
        "--preset",
        "nonsense",
        "--seed",
        "1",
        "--out",
        ws.path("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let out = run(&[
        "generate",
        "--preset",
        "grasp-touch",
        "--seed",
        "1",
        "--out",
        ws.path("y").to_str().unwrap(),
        "--set",
        "not_a_key=5",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn usage_errors_exit_with_two() {
    let out = run(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_files_are_runtime_errors() {
    let ws = Workspace::new("missing");
    let out = run(&[
        "eval",
        "--dataset",
        ws.path("nope").to_str().unwrap(),
        "--checkpoint",
        ws.path("nope.ckpt").to_str().unwrap(),
        "--out",
        ws.path("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_eval_finetune_pipeline_round_trips() {
    let ws = Workspace::new("pipeline");
    let data = ws.path("data");
    small_generate(&data, 3);

    let mut args = vec![
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        "RUN",
        "--seed",
        "3",
    ];
    let run_dir = ws.path("run");
    let run_str = run_dir.to_str().unwrap().to_string();
    args[4] = &run_str;
    args.extend_from_slice(SMALL_MODEL);
    let out = run_ok(&args);
    assert!(out.contains("held-out acc"), "{out}");
    assert!(run_dir.join("model.ckpt").exists());

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["params"]["epochs"], 3);
    let trained_holdout = report["final_test_accuracy"].as_f64().unwrap();

    // eval with the same seed re-derives the same held-out split
    let eval_dir = ws.path("eval");
    run_ok(&[
        "eval",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("model.ckpt").to_str().unwrap(),
        "--day",
        "0",
        "--holdout",
        "0.2",
        "--seed",
        "3",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    let eval_report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(eval_report["accuracy"].as_f64().unwrap(), trained_holdout);

    // fine-tune on a later day and keep the tuned checkpoint
    let ft_dir = ws.path("ft");
    let ckpt = run_dir.join("model.ckpt");
    let mut args = vec![
        "finetune",
        "--dataset",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--day",
        "2",
        "--ratio",
        "0.25",
        "--seed",
        "3",
        "--out",
        ft_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL_MODEL);
    run_ok(&args);
    assert!(ft_dir.join("model.ckpt").exists());
    let ft_report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ft_dir.join("report.json")).unwrap()).unwrap();
    assert!(ft_report["per_day"][0]["ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_emits_the_expected_csv() {
    let ws = Workspace::new("sweep");
    let data = ws.path("data");
    small_generate(&data, 5);
    let out_dir = ws.path("sweep");
    let mut args = vec![
        "sweep-ratio",
        "--dataset",
        data.to_str().unwrap(),
        "--train-day",
        "0",
        "--test-day",
        "2",
        "--ratios",
        "0,0.008,0.016,0.032,0.078,0.156",
        "--seeds",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL_MODEL);
    run_ok(&args);
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ratio,seed,accuracy");
    assert_eq!(lines.len(), 1 + 6, "one row per ratio: {csv}");
}

#[test]
fn ablate_emits_four_variants() {
    let ws = Workspace::new("ablate");
    let data = ws.path("data");
    small_generate(&data, 6);
    let out_dir = ws.path("ab");
    let mut args = vec![
        "ablate",
        "--dataset",
        data.to_str().unwrap(),
        "--test-day",
        "1",
        "--ratio",
        "0.25",
        "--seeds",
        "1,2",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(SMALL_MODEL);
    run_ok(&args);
    let csv = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("variant,seed,accuracy\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    for variant in ["full", "no-ca", "no-tcn", "no-lt"] {
        assert!(csv.contains(variant), "missing {variant} in {csv}");
    }
}

#[test]
fn energy_reports_constants_and_layer_table() {
    let ws = Workspace::new("energy");
    let data = ws.path("data");
    small_generate(&data, 9);
    let run_dir = ws.path("run");
    let mut args = vec![
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--seed",
        "9",
        "--set",
        "epochs=1",
    ];
    args.extend_from_slice(&SMALL_MODEL[..4]); // n_subencoders, t_out
    run_ok(&args);

    let e_dir = ws.path("energy");
    run_ok(&[
        "energy",
        "--checkpoint",
        run_dir.join("model.ckpt").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        e_dir.to_str().unwrap(),
    ]);
    let energy: serde_json::Value =
        serde_json::from_slice(&std::fs::read(e_dir.join("energy.json")).unwrap()).unwrap();
    assert_eq!(energy["report"]["e_mac_pj"].as_f64().unwrap(), 4.6);
    assert_eq!(energy["report"]["e_ac_pj"].as_f64().unwrap(), 0.9);
    let csv = std::fs::read_to_string(e_dir.join("layers.csv")).unwrap();
    assert!(csv.starts_with("layer,kind,flops,rate,sops,energy_pj\n"));
    // 4 sub-encoders x 4 branch layers + classifier
    assert_eq!(csv.lines().count(), 1 + 4 * 4 + 1);

    // an MLP checkpoint is rejected
    let mlp_dir = ws.path("mlp");
    run_ok(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--model",
        "mlp",
        "--out",
        mlp_dir.to_str().unwrap(),
        "--seed",
        "1",
        "--set",
        "epochs=1",
        "--set",
        "mlp_hidden=8",
    ]);
    let out = run(&[
        "energy",
        "--checkpoint",
        mlp_dir.join("model.ckpt").to_str().unwrap(),
        "--uniform-rate",
        "0.1",
        "--out",
        ws.path("bad").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_file_applies_and_cli_overrides_win() {
    let ws = Workspace::new("config");
    let data = ws.path("data");
    small_generate(&data, 11);
    let cfg_path = ws.path("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{"epochs": 5, "n_subencoders": 4, "t_out": 5, "batch_size": 16}"#,
    )
    .unwrap();
    let run_dir = ws.path("run");
    run_ok(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--seed",
        "11",
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        "epochs=2",
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["params"]["epochs"], 2);
    assert_eq!(report["config"]["params"]["batch_size"], 16);
    assert_eq!(report["epoch_loss"].as_array().unwrap().len(), 2);

    // a config file with an unknown key is rejected
    std::fs::write(&cfg_path, r#"{"epoch_count": 5}"#).unwrap();
    let out = run(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        ws.path("x").to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch_count"));
}

#[test]
fn corrupt_dataset_is_rejected() {
    let ws = Workspace::new("corrupt");
    let data = ws.path("data");
    small_generate(&data, 13);
    let labels = data.join("labels.bin");
    let bytes = std::fs::read(&labels).unwrap();
    std::fs::write(&labels, &bytes[..bytes.len() - 2]).unwrap();
    let out = run(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        ws.path("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
