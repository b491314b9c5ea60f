//! End-to-end pipeline tests at toy scale: determinism, stage caching,
//! report invariants, unlabeled targets, and CLI exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

use came::pipeline::{
    synth_digits, ExperimentConfig, Pipeline, PipelineError, RowKind,
};
use came::regress::mae;

fn toy_config(workdir: &Path, targets_dir: Option<&Path>) -> ExperimentConfig {
    let targets = match targets_dir {
        Some(dir) => format!(
            r#"
[[targets]]
name = "labeled-shift"
root = "{}"

[[targets]]
name = "unlabeled-shift"
root = "{}"
"#,
            dir.join("labeled").display(),
            dir.join("unlabeled").display()
        ),
        None => String::new(),
    };
    let toml = format!(
        r#"workdir = "{workdir}"

[dataset]
kind = "synth-digits"
train_size = 300
seed_size = 120
generator_seed = 5
{targets}
[train]
arch = "tiny-mlp"
lambda = 0.001
tau = 0.07
batch_size = 64
epochs = 3
projection_dim = 16
seed = 0

[train.optimizer]
name = "adam"
lr = 1e-3

[synthesis]
count = 6
recipe = "mnist"
master_seed = 11

[eval]
contrastive_batch = 60
eval_seed = 3
method = "huber"
holdout_sets = 2
"#,
        workdir = workdir.display(),
        targets = targets,
    );
    ExperimentConfig::from_toml(&toml).unwrap()
}

fn write_target_sets(dir: &Path) {
    // a labeled and an unlabeled manifest directory derived from fresh digits
    let set = synth_digits(80, 99, "target");
    for (sub, with_labels) in [("labeled", true), ("unlabeled", false)] {
        let root = dir.join(sub);
        let images = root.join("images");
        fs::create_dir_all(&images).unwrap();
        let mut labels = String::new();
        for (i, img) in set.images().iter().enumerate() {
            let (_, h, w) = img.dim();
            let mut bytes = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    bytes.push((img.pixels()[(0, y, x)] * 255.0).round() as u8);
                }
            }
            image::save_buffer_with_format(
                images.join(format!("{i}.png")),
                &bytes,
                w as u32,
                h as u32,
                image::ExtendedColorType::L8,
                image::ImageFormat::Png,
            )
            .unwrap();
            labels.push_str(&format!("{i}\t{}\n", set.label(i)));
        }
        if with_labels {
            fs::write(root.join("labels.tsv"), labels).unwrap();
        }
    }
}

#[test]
fn full_run_is_deterministic_and_cache_consistent() {
    let base = tempfile::tempdir().unwrap();
    let targets_dir = base.path().join("targets");
    write_target_sets(&targets_dir);

    let run = |workdir: &Path| {
        let config = toy_config(workdir, Some(&targets_dir));
        let pipeline = Pipeline::new(config).unwrap();
        let report = pipeline.run_autoeval().unwrap();
        let pairs = fs::read(pipeline.pairs_path()).unwrap();
        (report, pairs)
    };

    let (report_a, pairs_a) = run(&base.path().join("run-a"));
    let (report_b, pairs_b) = run(&base.path().join("run-b"));
    assert_eq!(pairs_a, pairs_b, "pairs CSV must be byte-identical across runs");
    assert_eq!(report_a.pearson_r, report_b.pearson_r);
    assert_eq!(report_a.spearman_rho, report_b.spearman_rho);
    assert_eq!(report_a.holdout_mae, report_b.holdout_mae);
    assert_eq!(report_a.to_json(), report_b.to_json());

    // rerun in the same workdir: every stage is cached, bytes unchanged
    let workdir = base.path().join("run-a");
    let config = toy_config(&workdir, Some(&targets_dir));
    let pipeline = Pipeline::new(config).unwrap();
    let report_c = pipeline.run_autoeval().unwrap();
    let pairs_c = fs::read(pipeline.pairs_path()).unwrap();
    assert_eq!(pairs_a, pairs_c, "cached rerun must not change the pairs CSV");
    assert_eq!(report_a.to_json(), report_c.to_json());
}

#[test]
fn report_mae_is_recomputable_from_rows() {
    let base = tempfile::tempdir().unwrap();
    let config = toy_config(&base.path().join("run"), None);
    let pipeline = Pipeline::new(config).unwrap();
    let report = pipeline.run_autoeval().unwrap();

    let holdout: Vec<_> = report
        .rows
        .iter()
        .filter(|r| r.kind == RowKind::Holdout)
        .collect();
    assert_eq!(holdout.len(), 2);
    let preds: Vec<f64> = holdout.iter().map(|r| r.predicted_acc).collect();
    let truth: Vec<f64> = holdout.iter().map(|r| r.ground_truth_acc.unwrap()).collect();
    let recomputed = mae(&preds, &truth).unwrap();
    assert!((report.holdout_mae.unwrap() - recomputed).abs() < 1e-12);

    for row in &holdout {
        let err = (row.predicted_acc - row.ground_truth_acc.unwrap()).abs();
        assert!((row.abs_error.unwrap() - err).abs() < 1e-9);
    }

    // artifacts on disk
    let workdir = pipeline.workdir();
    for file in ["pairs.csv", "fit.json", "scatter.svg", "report.json", "report.csv", "train_metrics.csv", "checkpoint.ckpt"] {
        assert!(workdir.join(file).exists(), "{file} missing");
    }
    assert!(!report.provenance.config_hash.is_empty());
    assert!(!report.provenance.checkpoint_id.is_empty());
}

#[test]
fn unlabeled_targets_get_predictions_without_truth_columns() {
    let base = tempfile::tempdir().unwrap();
    let targets_dir = base.path().join("targets");
    write_target_sets(&targets_dir);
    let config = toy_config(&base.path().join("run"), Some(&targets_dir));
    let pipeline = Pipeline::new(config).unwrap();
    let report = pipeline.run_autoeval().unwrap();

    let labeled = report.rows.iter().find(|r| r.set_id == "labeled-shift").unwrap();
    assert!(labeled.ground_truth_acc.is_some());
    assert!(labeled.abs_error.is_some());
    let unlabeled = report.rows.iter().find(|r| r.set_id == "unlabeled-shift").unwrap();
    assert!(unlabeled.ground_truth_acc.is_none());
    assert!(unlabeled.abs_error.is_none());
    assert!(unlabeled.predicted_acc >= 0.0 && unlabeled.predicted_acc <= 100.0);
}

#[test]
fn bound_check_and_baselines_run_on_toy_scale() {
    let base = tempfile::tempdir().unwrap();
    let targets_dir = base.path().join("targets");
    write_target_sets(&targets_dir);
    let mut config = toy_config(&base.path().join("run"), Some(&targets_dir));
    config.bound.negatives = 32;
    let pipeline = Pipeline::new(config).unwrap();

    let bound = pipeline.run_bound_check().unwrap();
    assert!(bound.lower <= bound.upper);
    assert!(bound.nce.is_finite() && bound.mean_ce.is_finite());
    assert!(pipeline.workdir().join("bound.json").exists());

    let rows = pipeline.run_baselines().unwrap();
    // 2 targets x (2 pred taus + 1 entropy tau + avg_conf + doc + 2 atc)
    assert_eq!(rows.len(), 2 * 7);
    for row in &rows {
        assert!((0.0..=100.0).contains(&row.estimate), "{row:?}");
    }
    assert!(pipeline.workdir().join("baselines.json").exists());
}

#[test]
fn cli_exit_codes_follow_the_contract() {
    let bin = env!("CARGO_BIN_EXE_came");
    // missing config file -> 2
    let out = Command::new(bin)
        .args(["evaluate", "--config", "/nonexistent/nope.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // config pointing at a missing dataset root -> 2
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        r#"workdir = "/tmp/unused"

[dataset]
kind = "mnist"
train_root = "/nonexistent/mnist"
seed_root = "/nonexistent/mnist"

[train]
arch = "lenet5"
lambda = 0.001
tau = 0.07
batch_size = 64
epochs = 1
projection_dim = 16
seed = 0

[train.optimizer]
name = "adam"
lr = 1e-3

[synthesis]
count = 4
recipe = "mnist"
master_seed = 1
"#,
    )
    .unwrap();
    let out = Command::new(bin)
        .args(["evaluate", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // a corrupted stage artifact -> 3
    let workdir = dir.path().join("run");
    let config_path = dir.path().join("toy.toml");
    let config = toy_config(&workdir, None);
    fs::write(&config_path, toml::to_string(&config).unwrap()).unwrap();
    let out = Command::new(bin)
        .args(["synth", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // corrupt one stored set, then force the collect stage to read it
    let victim = workdir.join("sets/sset-0001/manifest.toml");
    fs::write(&victim, "not toml ][").unwrap();
    let out = Command::new(bin)
        .args(["collect", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn workdir_env_var_prefixes_relative_paths() {
    let toml = r#"workdir = "rel/run"

[dataset]
kind = "synth-digits"
train_size = 10
seed_size = 10
generator_seed = 1

[train]
arch = "tiny-mlp"
lambda = 0.0
tau = 0.07
batch_size = 4
epochs = 1
projection_dim = 4
seed = 0

[train.optimizer]
name = "adam"
lr = 1e-3

[synthesis]
count = 2
recipe = "cifar"
master_seed = 1

[eval]
contrastive_batch = 5
"#;
    let mut config = ExperimentConfig::from_toml(toml).unwrap();
    std::env::set_var("CAME_WORKDIR", "/tmp/came-env-test");
    config.resolve_workdir();
    std::env::remove_var("CAME_WORKDIR");
    assert_eq!(config.workdir, Path::new("/tmp/came-env-test/rel/run"));
}

#[test]
fn config_error_type_maps_to_exit_code_two() {
    let err = PipelineError::Config("x".into());
    assert_eq!(err.exit_code(), 2);
    let err = PipelineError::Stage {
        stage: "synth",
        message: "y".into(),
    };
    assert_eq!(err.exit_code(), 3);
}
