//! End-to-end orchestration: configuration, dataset ingestion, the staged
//! runner (train, synthesize, collect, fit, predict), persistence with
//! content-addressed stage caching, reporting and plots.

pub mod config;
pub mod ingest;
pub mod plot;
pub mod report;
pub mod store;
pub mod synthdata;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::Digest;
use thiserror::Error;

use crate::augment::{synthesize_sample_set, TransformCtx};
use crate::baselines::{self, AtcScore};
use crate::bounds::{check_bound, BoundReport};
use crate::cotrain::{
    classification_accuracy, contrastive_accuracy, load_checkpoint, save_checkpoint,
    CoTrainedModel, EpochMetrics,
};
use crate::data::{ImageTensor, LabeledDataset};
use crate::regress::{fit_linear, mae, predict, AccuracyPair, RegressorFit};
use crate::rng;

pub use config::{
    example_config_toml, BaselinesConfig, BoundConfig, DatasetConfig, DatasetKind, EvalConfig,
    ExperimentConfig, SynthesisConfig, TargetConfig, TrainConfig, WORKDIR_ENV,
};
pub use ingest::{ingest_dataset, ingest_maybe_unlabeled, Ingested, IngestError, Layout};
pub use plot::{emit_plots, scatter_svg};
pub use report::{BaselineRow, EvalReport, Provenance, ReportRow, RowKind};
pub use store::{load_sample_set, save_sample_set, StoreError};
pub use synthdata::synth_digits;

/// Pipeline failures; configuration problems exit with code 2, stage
/// failures with code 3.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn sha256_hex(data: &[u8]) -> String {
    let mut hasher = sha2::Sha256::new();
    hasher.update(data);
    config::hex(&hasher.finalize())
}

/// The staged runner. Every stage writes its artifact plus a hash marker
/// derived from the governing configuration (and upstream data identity), so
/// reruns skip completed stages and produce byte-identical results.
pub struct Pipeline {
    pub config: ExperimentConfig,
}

/// Datasets resolved from the configuration.
pub struct ResolvedData {
    pub train: LabeledDataset,
    pub seed: LabeledDataset,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn workdir(&self) -> &Path {
        &self.config.workdir
    }

    fn ensure_workdir(&self) -> Result<(), PipelineError> {
        fs::create_dir_all(self.workdir()).map_err(stage_err("setup"))
    }

    /// Resolve the train and seed datasets.
    pub fn load_data(&self) -> Result<ResolvedData, PipelineError> {
        let dataset = &self.config.dataset;
        match dataset.kind {
            DatasetKind::SynthDigits => {
                let gen_seed = dataset.generator_seed.unwrap_or(0);
                let train = synth_digits(
                    dataset.train_size.unwrap_or(0),
                    rng::derive_seed(gen_seed, "train-split", &[]),
                    "synth-digits-train",
                );
                let seed = synth_digits(
                    dataset.seed_size.unwrap_or(0),
                    rng::derive_seed(gen_seed, "seed-split", &[]),
                    "synth-digits-seed",
                );
                Ok(ResolvedData { train, seed })
            }
            _ => {
                let layout = dataset.effective_layout();
                let train_root = dataset.train_root.as_ref().expect("validated");
                let seed_root = dataset.seed_root.as_ref().expect("validated");
                let train = ingest_dataset(train_root, layout).map_err(stage_err("ingest"))?;
                let seed = ingest_dataset(seed_root, layout).map_err(stage_err("ingest"))?;
                Ok(ResolvedData { train, seed })
            }
        }
    }

    fn train_hash(&self, train_set: &LabeledDataset) -> String {
        let key = serde_json::json!({
            "dataset": &self.config.dataset,
            "train": &self.config.train,
            "views": &self.config.views_policy(),
            "data": train_set.checksum(),
        });
        sha256_hex(key.to_string().as_bytes())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.workdir().join("checkpoint.ckpt")
    }

    /// Train the model, or load the cached checkpoint when the training
    /// configuration and data are unchanged.
    pub fn stage_train(&self, train_set: &LabeledDataset) -> Result<CoTrainedModel, PipelineError> {
        self.ensure_workdir()?;
        let hash = self.train_hash(train_set);
        let hash_path = self.workdir().join("train.hash");
        let ckpt_path = self.checkpoint_path();
        if hash_path.exists() && ckpt_path.exists() {
            let recorded = fs::read_to_string(&hash_path).map_err(stage_err("train"))?;
            if recorded.trim() == hash {
                log::info!("train: checkpoint cache hit, loading {}", ckpt_path.display());
                return load_checkpoint(&ckpt_path).map_err(stage_err("train"));
            }
        }
        let policy = self.config.views_policy();
        let metrics_path = self.workdir().join("train_metrics.csv");
        let mut metrics_file = String::from(EpochMetrics::CSV_HEADER);
        metrics_file.push('\n');
        let cadence = self.config.train.checkpoint_every;
        let ckpt_for_hook = ckpt_path.clone();
        let (model, history) = crate::cotrain::train_with(
            train_set,
            &self.config.train.hp,
            &policy,
            |model, metrics| {
                log::info!(
                    "epoch {}: ce {:.4} nce {:.4} cla {:.4} con {:.4}",
                    metrics.epoch,
                    metrics.ce_loss,
                    metrics.nce_loss,
                    metrics.train_cla_acc,
                    metrics.train_con_acc
                );
                if let Some(every) = cadence {
                    if every > 0 && metrics.epoch % every == 0 {
                        save_checkpoint(model, &ckpt_for_hook).map_err(|e| e.to_string())?;
                    }
                }
                Ok(())
            },
        )
        .map_err(stage_err("train"))?;
        for m in &history {
            metrics_file.push_str(&m.csv_row());
            metrics_file.push('\n');
        }
        fs::write(&metrics_path, metrics_file).map_err(stage_err("train"))?;
        save_checkpoint(&model, &ckpt_path).map_err(stage_err("train"))?;
        fs::write(&hash_path, &hash).map_err(stage_err("train"))?;
        Ok(model)
    }

    fn synth_hash(&self, seed_set: &LabeledDataset) -> String {
        let key = serde_json::json!({
            "synthesis": &self.config.synthesis,
            "seed_data": seed_set.checksum(),
        });
        sha256_hex(key.to_string().as_bytes())
    }

    pub fn sets_dir(&self) -> PathBuf {
        self.workdir().join("sets")
    }

    /// Synthesize the sample sets to disk (skipped when cached), returning
    /// the per-set directories in index order.
    pub fn stage_synth(&self, seed_set: &LabeledDataset) -> Result<Vec<PathBuf>, PipelineError> {
        self.ensure_workdir()?;
        let synthesis = &self.config.synthesis;
        let hash = self.synth_hash(seed_set);
        let hash_path = self.workdir().join("synth.hash");
        let sets_dir = self.sets_dir();
        let dirs: Vec<PathBuf> = (0..synthesis.count)
            .map(|i| sets_dir.join(format!("sset-{i:04}")))
            .collect();
        if hash_path.exists() {
            let recorded = fs::read_to_string(&hash_path).map_err(stage_err("synth"))?;
            if recorded.trim() == hash && dirs.iter().all(|d| d.join("manifest.toml").exists()) {
                log::info!("synth: {} cached sample sets", dirs.len());
                return Ok(dirs);
            }
        }
        let ctx = TransformCtx::default();
        dirs.par_iter().enumerate().try_for_each(|(i, dir)| {
            let set = synthesize_sample_set(
                seed_set,
                synthesis.recipe,
                i,
                synthesis.count,
                synthesis.master_seed,
                &ctx,
            )
            .map_err(stage_err("synth"))?;
            save_sample_set(&set, dir).map_err(stage_err("synth"))
        })?;
        fs::write(&hash_path, &hash).map_err(stage_err("synth"))?;
        Ok(dirs)
    }

    fn collect_hash(&self, train_set: &LabeledDataset, seed_set: &LabeledDataset) -> String {
        let key = serde_json::json!({
            "train": self.train_hash(train_set),
            "synth": self.synth_hash(seed_set),
            "contrastive_batch": self.config.eval.contrastive_batch,
            "eval_seed": self.config.eval.eval_seed,
        });
        sha256_hex(key.to_string().as_bytes())
    }

    pub fn pairs_path(&self) -> PathBuf {
        self.workdir().join("pairs.csv")
    }

    /// Cache key for the collect stage (derives from the train and synth
    /// stage identities plus the evaluation settings).
    pub fn collect_cache_key(&self, data: &ResolvedData) -> String {
        self.collect_hash(&data.train, &data.seed)
    }

    /// Measure one accuracy pair per stored sample set, in index order, and
    /// persist the pairs CSV.
    pub fn stage_collect(
        &self,
        model: &CoTrainedModel,
        set_dirs: &[PathBuf],
        collect_hash: &str,
    ) -> Result<Vec<AccuracyPair>, PipelineError> {
        let hash_path = self.workdir().join("collect.hash");
        let pairs_path = self.pairs_path();
        if hash_path.exists() && pairs_path.exists() {
            let recorded = fs::read_to_string(&hash_path).map_err(stage_err("collect"))?;
            if recorded.trim() == collect_hash {
                log::info!("collect: pairs cache hit");
                return report::read_pairs_csv(&pairs_path);
            }
        }
        let eval = &self.config.eval;
        let policy = self.config.views_policy();
        let num_classes = model.num_classes;
        let pairs: Vec<AccuracyPair> = set_dirs
            .par_iter()
            .enumerate()
            .map(|(i, dir)| {
                let set = load_sample_set(dir).map_err(stage_err("collect"))?;
                let acc_con = contrastive_accuracy(
                    model,
                    &set.images,
                    eval.contrastive_batch,
                    &policy,
                    rng::derive_seed(eval.eval_seed, "collect", &[i as u64]),
                )
                .map_err(stage_err("collect"))?;
                let labeled = set.to_dataset(num_classes);
                let acc_cla =
                    classification_accuracy(model, &labeled).map_err(stage_err("collect"))?;
                Ok(AccuracyPair {
                    sample_set_id: set.id,
                    acc_con,
                    acc_cla,
                })
            })
            .collect::<Result<_, PipelineError>>()?;
        report::write_pairs_csv(&pairs, &pairs_path).map_err(stage_err("collect"))?;
        fs::write(&hash_path, collect_hash).map_err(stage_err("collect"))?;
        // hand downstream stages the CSV-precision values, so fresh and
        // cached runs are numerically indistinguishable
        report::read_pairs_csv(&pairs_path)
    }

    /// Fit the regressor on the non-holdout pairs; persists `fit.json` and
    /// the scatter plot.
    pub fn stage_fit(&self, pairs: &[AccuracyPair]) -> Result<RegressorFit, PipelineError> {
        let holdout = self.config.eval.holdout_sets;
        let fit_pairs = &pairs[..pairs.len() - holdout];
        let fit = fit_linear(fit_pairs, self.config.eval.method).map_err(stage_err("fit"))?;
        fs::write(
            self.workdir().join("fit.json"),
            serde_json::to_string_pretty(&fit).map_err(stage_err("fit"))?,
        )
        .map_err(stage_err("fit"))?;
        emit_plots(fit_pairs, &fit, self.workdir(), "accuracy pairs")?;
        Ok(fit)
    }

    /// In-distribution sanity MAE: fit on the first (1 - split) of the fit
    /// pairs, score the rest. Percentage points.
    fn sanity_mae(&self, fit_pairs: &[AccuracyPair]) -> Option<f64> {
        let split = self.config.eval.sanity_split;
        if split <= 0.0 {
            return None;
        }
        let cut = ((fit_pairs.len() as f64) * (1.0 - split)).round() as usize;
        if cut < 2 || cut >= fit_pairs.len() {
            return None;
        }
        let fit = fit_linear(&fit_pairs[..cut], self.config.eval.method).ok()?;
        let preds: Vec<f64> = fit_pairs[cut..]
            .iter()
            .map(|p| predict(&fit, p.acc_con).value * 100.0)
            .collect();
        let truth: Vec<f64> = fit_pairs[cut..].iter().map(|p| p.acc_cla * 100.0).collect();
        mae(&preds, &truth).ok()
    }

    /// The full run: train (or load), synthesize, collect, fit, predict on
    /// holdout sets and configured targets, and write the report artifacts.
    pub fn run_autoeval(&self) -> Result<EvalReport, PipelineError> {
        let data = self.load_data()?;
        let model = self.stage_train(&data.train)?;
        let set_dirs = self.stage_synth(&data.seed)?;
        let collect_hash = self.collect_hash(&data.train, &data.seed);
        let pairs = self.stage_collect(&model, &set_dirs, &collect_hash)?;
        let fit = self.stage_fit(&pairs)?;

        let holdout = self.config.eval.holdout_sets;
        let fit_count = pairs.len() - holdout;
        let mut rows = Vec::new();
        for pair in &pairs[fit_count..] {
            let prediction = predict(&fit, pair.acc_con);
            rows.push(ReportRow {
                set_id: pair.sample_set_id.clone(),
                kind: RowKind::Holdout,
                acc_con: pair.acc_con * 100.0,
                predicted_acc: prediction.value * 100.0,
                ground_truth_acc: Some(pair.acc_cla * 100.0),
                abs_error: Some((prediction.value - pair.acc_cla).abs() * 100.0),
                clamped: prediction.clamped,
                extrapolated: prediction.extrapolated,
            });
        }
        for target in &self.config.targets {
            rows.push(self.evaluate_target(&model, &fit, target)?);
        }

        let holdout_mae = if holdout > 0 {
            let preds: Vec<f64> = rows
                .iter()
                .filter(|r| r.kind == RowKind::Holdout)
                .map(|r| r.predicted_acc)
                .collect();
            let truth: Vec<f64> = rows
                .iter()
                .filter(|r| r.kind == RowKind::Holdout)
                .map(|r| r.ground_truth_acc.expect("holdout sets are labeled"))
                .collect();
            Some(mae(&preds, &truth).map_err(stage_err("report"))?)
        } else {
            None
        };

        let checkpoint_id = {
            let bytes = fs::read(self.checkpoint_path()).map_err(stage_err("report"))?;
            sha256_hex(&bytes)[..16].to_string()
        };
        let report = EvalReport {
            fit_pairs: fit_count,
            pearson_r: fit.pearson_r,
            spearman_rho: fit.spearman_rho,
            holdout_mae,
            sanity_mae: self.sanity_mae(&pairs[..fit_count]),
            rows,
            provenance: Provenance {
                config_hash: self.config.config_hash(),
                checkpoint_id,
                code_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        };
        fs::write(self.workdir().join("report.json"), report.to_json())
            .map_err(stage_err("report"))?;
        fs::write(self.workdir().join("report.csv"), report.to_csv())
            .map_err(stage_err("report"))?;
        Ok(report)
    }

    fn evaluate_target(
        &self,
        model: &CoTrainedModel,
        fit: &RegressorFit,
        target: &TargetConfig,
    ) -> Result<ReportRow, PipelineError> {
        let layout = target.layout.unwrap_or(Layout::Manifest);
        let ingested =
            ingest_maybe_unlabeled(&target.root, layout).map_err(stage_err("predict"))?;
        let eval = &self.config.eval;
        let policy = self.config.views_policy();
        let name_digest = sha256_hex(target.name.as_bytes());
        let seed = rng::derive_seed(
            eval.eval_seed,
            "target",
            &[u64::from_str_radix(&name_digest[..16], 16).unwrap_or(0)],
        );
        let acc_con = contrastive_accuracy(
            model,
            ingested.images(),
            eval.contrastive_batch,
            &policy,
            seed,
        )
        .map_err(stage_err("predict"))?;
        let prediction = predict(fit, acc_con);
        let (ground_truth_acc, abs_error) = match ingested.labeled() {
            Some(set) => {
                let truth = classification_accuracy(model, set).map_err(stage_err("predict"))?;
                (
                    Some(truth * 100.0),
                    Some((prediction.value - truth).abs() * 100.0),
                )
            }
            None => (None, None),
        };
        Ok(ReportRow {
            set_id: target.name.clone(),
            kind: RowKind::Target,
            acc_con: acc_con * 100.0,
            predicted_acc: prediction.value * 100.0,
            ground_truth_acc,
            abs_error,
            clamped: prediction.clamped,
            extrapolated: prediction.extrapolated,
        })
    }

    /// Evaluate the sandwich bound on the trained model over the seed set.
    pub fn run_bound_check(&self) -> Result<BoundReport, PipelineError> {
        let data = self.load_data()?;
        let model = self.stage_train(&data.train)?;
        let bound = &self.config.bound;
        let report = check_bound(
            &model,
            &data.seed,
            bound.negatives,
            bound.c_slack,
            &self.config.views_policy(),
            bound.seed,
        )
        .map_err(stage_err("bound-check"))?;
        fs::write(
            self.workdir().join("bound.json"),
            serde_json::to_string_pretty(&report).map_err(stage_err("bound-check"))?,
        )
        .map_err(stage_err("bound-check"))?;
        Ok(report)
    }

    /// Confidence-baseline estimates for every configured target, using the
    /// seed set as the labeled source validation set.
    pub fn run_baselines(&self) -> Result<Vec<BaselineRow>, PipelineError> {
        let data = self.load_data()?;
        let model = self.stage_train(&data.train)?;
        let source_refs: Vec<&ImageTensor> = data.seed.images().iter().collect();
        let source_probs = model
            .softmax_probs(&source_refs)
            .map_err(stage_err("baseline"))?;
        let source_labels = data.seed.labels();
        let source_acc =
            classification_accuracy(&model, &data.seed).map_err(stage_err("baseline"))?;
        let mut rows = Vec::new();
        for target in &self.config.targets {
            let layout = target.layout.unwrap_or(Layout::Manifest);
            let ingested =
                ingest_maybe_unlabeled(&target.root, layout).map_err(stage_err("baseline"))?;
            let target_refs: Vec<&ImageTensor> = ingested.images().iter().collect();
            let target_probs = model
                .softmax_probs(&target_refs)
                .map_err(stage_err("baseline"))?;
            let ground_truth = match ingested.labeled() {
                Some(set) => Some(
                    classification_accuracy(&model, set).map_err(stage_err("baseline"))? * 100.0,
                ),
                None => None,
            };
            let mut push = |estimator: String, estimate: f64| {
                rows.push(BaselineRow {
                    target: target.name.clone(),
                    estimator,
                    estimate: estimate * 100.0,
                    ground_truth_acc: ground_truth,
                    abs_error: ground_truth.map(|t| (estimate * 100.0 - t).abs()),
                });
            };
            for &tau in &self.config.baselines.pred_taus {
                let est =
                    baselines::pred_threshold(&target_probs, tau).map_err(stage_err("baseline"))?;
                push(format!("pred_threshold(tau={tau})"), est);
            }
            for &tau in &self.config.baselines.entropy_taus {
                let est = baselines::entropy_threshold(&target_probs, tau)
                    .map_err(stage_err("baseline"))?;
                push(format!("entropy_threshold(tau={tau})"), est);
            }
            let est = baselines::avg_confidence(&target_probs).map_err(stage_err("baseline"))?;
            push("avg_confidence".to_string(), est);
            let est = baselines::doc_estimate(source_acc, &source_probs, &target_probs)
                .map_err(stage_err("baseline"))?;
            push("doc".to_string(), est);
            for (name, score) in [("atc_mc", AtcScore::Mc), ("atc_ne", AtcScore::Ne)] {
                let est =
                    baselines::atc_estimate(&source_probs, source_labels, &target_probs, score)
                        .map_err(stage_err("baseline"))?;
                push(name.to_string(), est);
            }
        }
        self.ensure_workdir()?;
        fs::write(
            self.workdir().join("baselines.json"),
            serde_json::to_string_pretty(&rows).map_err(stage_err("baseline"))?,
        )
        .map_err(stage_err("baseline"))?;
        Ok(rows)
    }
}
