use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iqsei::sei::Scenario;

fn iqsei(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iqsei"))
        .current_dir(dir)
        .args(["--deterministic"])
        .args(args)
        .output()
        .expect("run iqsei")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

const GENERATE: &str = r#"
out = "data/train.rfpd"

[dataset]
family = "qam"
orders = [16, 64]
target = "gain_imbalance"
frame_len = 64
splits = { train = 240, val = 40, test = 20 }
alpha = [-0.5, 0.5]
theta_deg = [-5.0, 5.0]
freq_offset = [0.0, 0.0]
sps = [4.0, 4.0]
snr_db = [15.0, 25.0]
master_seed = 11
timing = "symbol_aligned"
"#;

const TRAIN: &str = r#"
dataset = "data/train.rfpd"
checkpoint = "models/gain.rfpm"
init_seed = 3

[network]
filters = [4, 2]
kernel_widths = [4, 2]
pool = 2
dense = [16, 8, 4]

[training]
lr = 0.003
batch_size = 16
max_epochs = 2
patience = 5
seed = 5
"#;

fn grid_args(snr: f64) -> Vec<String> {
    vec![
        "generate".into(),
        "--config".into(),
        "gen.toml".into(),
        "--set".into(),
        format!("out=\"data/grid{snr}.rfpd\""),
        "--set".into(),
        format!("dataset.snr_db=[{snr:.1}, {snr:.1}]"),
        "--set".into(),
        "grid={ lo = -0.4, hi = 0.4, step = 0.2, frames_per_value = 40 }".into(),
    ]
}

fn as_str(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Generates a dataset, trains a small model and two grids at 10 and 20 dB.
fn pipeline(dir: &Path) {
    std::fs::write(dir.join("gen.toml"), GENERATE).unwrap();
    std::fs::write(dir.join("train.toml"), TRAIN).unwrap();
    ok(&iqsei(dir, &["generate", "--config", "gen.toml"]));
    ok(&iqsei(dir, &["train", "--config", "train.toml"]));
    for snr in [10.0, 20.0] {
        ok(&iqsei(dir, &as_str(&grid_args(snr))));
    }
}

#[test]
fn generate_writes_dataset_sidecar_and_manifest_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.toml"), GENERATE).unwrap();
    ok(&iqsei(dir.path(), &["generate", "--config", "gen.toml"]));
    let data = dir.path().join("data");
    let first = std::fs::read(data.join("train.rfpd")).unwrap();
    let sidecar = std::fs::read(data.join("train.json")).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(data.join("train.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seeds"]["master_seed"], 11);
    assert_eq!(manifest["config"]["dataset"]["frame_len"], 64);
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));

    ok(&iqsei(dir.path(), &["generate", "--config", "gen.toml"]));
    assert_eq!(std::fs::read(data.join("train.rfpd")).unwrap(), first);
    assert_eq!(std::fs::read(data.join("train.json")).unwrap(), sidecar);

    // The same recipe with a different thread count gives the same bytes.
    let out = Command::new(env!("CARGO_BIN_EXE_iqsei"))
        .current_dir(dir.path())
        .args(["--threads", "3", "generate", "--config", "gen.toml", "--out", "data/t3.rfpd"])
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(std::fs::read(data.join("t3.rfpd")).unwrap(), first);
}

#[test]
fn invalid_configuration_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.toml"), GENERATE).unwrap();
    let out = iqsei(dir.path(), &["generate", "--config", "gen.toml", "--set", "dataset.alpha=[0.5, -0.5]"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!dir.path().join("data/train.rfpd").exists());

    let out = iqsei(dir.path(), &["generate", "--config", "gen.toml", "--set", "dataset.unknown=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = iqsei(dir.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = iqsei(
        dir.path(),
        &["evaluate", "--checkpoint", "absent.rfpm", "--grid", "absent.rfpd", "--out", "eval"],
    );
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent.rfpm"), "{err}");

    let out = iqsei(dir.path(), &["generate", "--config", "absent.toml"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn divergent_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.toml"), GENERATE).unwrap();
    std::fs::write(dir.path().join("train.toml"), TRAIN).unwrap();
    ok(&iqsei(dir.path(), &["generate", "--config", "gen.toml"]));
    let out = iqsei(dir.path(), &["train", "--config", "train.toml", "--set", "training.lr=1e30"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("models/gain.rfpm").exists());
}

#[test]
fn print_config_echoes_flags_and_exits() {
    let dir = tempfile::tempdir().unwrap();
    let out = iqsei(dir.path(), &["train", "--epochs", "7", "--print-config"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let table: toml::Table = toml::from_str(&text).unwrap();
    assert_eq!(table["training"]["max_epochs"].as_integer(), Some(7));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none(), "nothing written");
}

#[test]
fn shipped_table2_scenario_matches_builtin() {
    let text = std::fs::read_to_string(repo_root().join("scenarios/table2.toml")).unwrap();
    let scenario: Scenario = toml::from_str(&text).unwrap();
    assert_eq!(scenario, Scenario::table2());
}

#[test]
fn full_pipeline_train_resume_evaluate_fit_sei_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir);

    let history = std::fs::read_to_string(dir.join("models/gain.history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(history.lines().count(), 3);
    assert!(dir.join("models/gain.manifest.json").exists());

    // Resuming continues the epoch count.
    ok(&iqsei(dir, &["train", "--config", "train.toml", "--resume", "--epochs", "3"]));
    let history = std::fs::read_to_string(dir.join("models/gain.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(history.lines().last().unwrap().starts_with("2,"));
    let leftovers: Vec<_> = std::fs::read_dir(dir.join("models"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| !n.starts_with("gain."))
        .collect();
    assert!(leftovers.is_empty(), "temporary files left: {leftovers:?}");

    // Evaluate twice; outputs are identical.
    let eval = ["evaluate", "--checkpoint", "models/gain.rfpm", "--grid", "data/grid10.rfpd", "--out", "eval"];
    let sweep = ["--set", "snr_sweep={ snr_db = [10.0, 20.0], frames_per_snr = 30, seed = 1 }"];
    let args: Vec<&str> = eval.iter().chain(&sweep).copied().collect();
    ok(&iqsei(dir, &args));
    let files = ["bias_curve.csv", "snr_sweep.csv", "scatter.csv", "report.json"];
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.join("eval").join(f)).unwrap()).collect();
    ok(&iqsei(dir, &args));
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&std::fs::read(dir.join("eval").join(f)).unwrap(), bytes, "{f} changed");
    }
    let threaded: Vec<&str> = args.iter().map(|a| if *a == "eval" { "eval3" } else { a }).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_iqsei"))
        .current_dir(dir)
        .args(["--threads", "3"])
        .args(&threaded)
        .output()
        .unwrap();
    ok(&out);
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&std::fs::read(dir.join("eval3").join(f)).unwrap(), bytes, "{f} depends on threads");
    }
    let bias = std::fs::read_to_string(dir.join("eval/bias_curve.csv")).unwrap();
    assert_eq!(bias.lines().next(), Some("truth,bias,sample_variance"));
    assert_eq!(bias.lines().count(), 1 + 5);
    let sweep_csv = std::fs::read_to_string(dir.join("eval/snr_sweep.csv")).unwrap();
    assert_eq!(sweep_csv.lines().next(), Some("snr_db,mean_err,std_err"));
    assert_eq!(sweep_csv.lines().count(), 3);
    let scatter = std::fs::read_to_string(dir.join("eval/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 5 * 40);

    // Decision fitting at two SNRs.
    ok(&iqsei(
        dir,
        &[
            "fit-decision", "--checkpoint", "models/gain.rfpm", "--grid", "data/grid10.rfpd", "--grid",
            "data/grid20.rfpd", "--out", "decision",
        ],
    ));
    let p = std::fs::read_to_string(dir.join("decision/p_values.csv")).unwrap();
    let lines: Vec<&str> = p.lines().collect();
    assert_eq!(lines[0], "snr_db,mean_p_value,n_fits,accepted");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("10,") && lines[2].starts_with("20,"));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("decision/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["per_snr"].as_array().unwrap().len(), 2);
    assert!(dir.join("decision/manifest.json").exists());

    // A small scenario with a K sweep.
    let scenario = r#"
name = "tiny"
frame_len = 64
sps = 4.0
timing = "symbol_aligned"
snr_db = [20.0]
captures = [1]
trials_per_snr = 30
calibration_captures = 40
seed = 9

[[emitters]]
id = "a"
alpha = -0.3
theta_deg = 0.0
scheme = { family = "qam", order = 16 }

[[emitters]]
id = "b"
alpha = 0.3
theta_deg = 0.0
scheme = { family = "qam", order = 16 }
"#;
    std::fs::write(dir.join("tiny.toml"), scenario).unwrap();
    ok(&iqsei(
        dir,
        &[
            "sei", "--scenario", "tiny.toml", "--arm", "gain=models/gain.rfpm", "--captures", "1,4", "--out", "sei",
        ],
    ));
    let acc = std::fs::read_to_string(dir.join("sei/accuracy_gain.csv")).unwrap();
    assert_eq!(acc.lines().count(), 1 + 2, "{acc}");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("sei/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["scenario_seed"], 9);
    assert_eq!(manifest["config"]["scenario"]["captures"], serde_json::json!([1, 4]));

    // Report over everything.
    ok(&iqsei(dir, &["report", "--input", ".", "--out", "report.md"]));
    let md = std::fs::read_to_string(dir.join("report.md")).unwrap();
    for heading in ["## generate", "## train", "## evaluate", "## fit-decision", "## sei"] {
        assert!(md.contains(heading), "missing {heading}:\n{md}");
    }
    assert!(dir.join("report.manifest.json").exists());
}

#[test]
fn sei_requires_an_arm() {
    let dir = tempfile::tempdir().unwrap();
    let out = iqsei(dir.path(), &["sei", "--scenario", repo_root().join("scenarios/table2.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
