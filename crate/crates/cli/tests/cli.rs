use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
[surrogate]
k = 8
j = 4

[windows]
spinup_steps = 100
checkpoints = 4

[network]
epochs = 3
hidden_width = 4
";

fn errcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_errcast")).args(args).output().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let out = errcast(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn pointwise_run_writes_manifest_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    run_ok(&["p1-pointwise", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    for name in ["pointwise_rf.csv", "pointwise_rf.json", "pointwise_rf_summary.csv", "manifest.json", "spec.toml"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    assert_eq!(csv_lines(&out.join("pointwise_rf.csv")).len(), 73);
    assert_eq!(csv_lines(&out.join("field_raw_rf.csv")).len(), 1 + 8);
    assert_eq!(csv_lines(&out.join("field_corrected_rf.csv"))[0], "index,value");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["component_seeds"]["truth"].is_u64());
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 5);
    for f in files {
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn reports_are_byte_identical_across_runs_and_from_the_recorded_spec() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for out in [&a, &b] {
        run_ok(&["report", "--config", cfg.to_str().unwrap(), "--seed", "77", "--out", out.to_str().unwrap()]);
    }
    assert_eq!(snapshot(&a), snapshot(&b));
    let recorded = a.join("spec.toml");
    run_ok(&["report", "--config", recorded.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(snapshot(&a), snapshot(&c));
}

#[test]
fn attribution_histogram_has_one_row_per_package() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    run_ok(&["p2-attribute", "--planted", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let lines = csv_lines(&out.join("attribution_planted_histogram_rf.csv"));
    assert_eq!(lines[0], "package,count");
    let packages: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(packages, ["closure", "forcing", "dissipation", "integrator"]);
}

#[test]
fn trained_models_round_trip_through_predict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    let (cfg, out) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    run_ok(&["train", "--target", "pointwise", "--learner", "nn", "--config", cfg, "--out", out]);
    let model = dir.path().join("out/model_pointwise_nn.json");
    run_ok(&["predict", "--model", model.to_str().unwrap(), "--config", cfg, "--out", out]);
    let lines = csv_lines(&dir.path().join("out/predictions_pointwise.csv"));
    assert_eq!(lines[0], "config_index,config,point,predicted,actual");
    assert_eq!(lines.len(), 1 + 72 * 8);
}

#[test]
fn generate_writes_every_dataset_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    run_ok(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    for stem in ["pointwise_train", "pointwise_test", "norm_train", "norm_test", "physics_train", "physics_test"] {
        assert!(out.join(format!("{stem}.csv")).is_file());
        assert!(out.join(format!("{stem}.json")).is_file());
    }
    assert_eq!(csv_lines(&out.join("norm_test.csv")).len(), 73);
}

#[test]
fn input_config_is_left_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let before = fs::read(&cfg).unwrap();
    run_ok(&["p1-norm", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(fs::read(&cfg).unwrap(), before);
}

#[test]
fn unknown_subcommand_prints_usage_and_fails() {
    let out = errcast(&["problem-three"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[forest]\nn_tree = 10\n").unwrap();
    let out = errcast(&["p1-norm", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_tree"));
}

#[test]
fn blowup_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hot.toml");
    fs::write(&cfg, format!("{TINY}\n[packages]\nlinear_damping = 0.3\n").replace("k = 8", "k = 8\nforcing = 1e9")).unwrap();
    let out = errcast(&["p1-norm", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unwritable_output_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = errcast(&["fit-closure", "--steps", "50", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}
