//! Experiment configuration: one TOML file mirroring the stages of the
//! pipeline, overridable by CLI flags and the `CAME_WORKDIR` environment
//! variable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::Recipe;
use crate::cotrain::{AugPolicy, HyperParams};
use crate::regress::FitMethod;

use super::ingest::Layout;
use super::PipelineError;

/// Environment variable prepended to relative workdirs.
pub const WORKDIR_ENV: &str = "CAME_WORKDIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Procedurally rendered digits; runs without any external data.
    SynthDigits,
    Mnist,
    Cifar10,
    Cifar100,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Roots for file-backed datasets.
    #[serde(default)]
    pub train_root: Option<PathBuf>,
    #[serde(default)]
    pub seed_root: Option<PathBuf>,
    /// Layout override; defaults per kind (idx-binary for mnist,
    /// image-folder for cifar, manifest for custom).
    #[serde(default)]
    pub layout: Option<Layout>,
    /// Sizes for the synthetic generator.
    #[serde(default)]
    pub train_size: Option<usize>,
    #[serde(default)]
    pub seed_size: Option<usize>,
    #[serde(default)]
    pub generator_seed: Option<u64>,
}

impl DatasetConfig {
    pub fn effective_layout(&self) -> Layout {
        self.layout.unwrap_or(match self.kind {
            DatasetKind::Mnist => Layout::IdxBinary,
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => Layout::ImageFolder,
            DatasetKind::Custom | DatasetKind::SynthDigits => Layout::Manifest,
        })
    }
}

/// An unseen test set to predict accuracy on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetConfig {
    pub name: String,
    pub root: PathBuf,
    #[serde(default)]
    pub layout: Option<Layout>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub hp: HyperParams,
    /// Persist a checkpoint every this many epochs (the final model is
    /// always persisted).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Number of sample sets (the paper-scale default is 400).
    pub count: usize,
    pub recipe: Recipe,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Batch size N for contrastive accuracy (part of the experiment
    /// definition, since the metric depends on it).
    #[serde(default = "default_contrastive_batch")]
    pub contrastive_batch: usize,
    #[serde(default)]
    pub eval_seed: u64,
    #[serde(default = "default_method")]
    pub method: FitMethod,
    /// The last `holdout_sets` synthesized sets are excluded from fitting
    /// and scored as held-out prediction targets.
    #[serde(default)]
    pub holdout_sets: usize,
    /// Fraction of fit pairs held out once for the in-distribution sanity
    /// MAE diagnostic (the final fit still uses all fit pairs).
    #[serde(default = "default_sanity_split")]
    pub sanity_split: f64,
}

fn default_contrastive_batch() -> usize {
    512
}

fn default_method() -> FitMethod {
    FitMethod::Huber
}

fn default_sanity_split() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselinesConfig {
    #[serde(default = "default_pred_taus")]
    pub pred_taus: Vec<f64>,
    #[serde(default = "default_entropy_taus")]
    pub entropy_taus: Vec<f64>,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        Self {
            pred_taus: default_pred_taus(),
            entropy_taus: default_entropy_taus(),
        }
    }
}

fn default_pred_taus() -> Vec<f64> {
    vec![0.8, 0.9]
}

fn default_entropy_taus() -> Vec<f64> {
    vec![0.2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundConfig {
    #[serde(default = "default_negatives")]
    pub negatives: usize,
    #[serde(default = "default_c_slack")]
    pub c_slack: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            negatives: default_negatives(),
            c_slack: default_c_slack(),
            seed: 0,
        }
    }
}

fn default_negatives() -> usize {
    256
}

fn default_c_slack() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workdir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub targets: Vec<TargetConfig>,
    pub train: TrainConfig,
    /// View policy; defaults to the digit or natural-image policy depending
    /// on the dataset kind.
    #[serde(default)]
    pub views: Option<AugPolicy>,
    pub synthesis: SynthesisConfig,
    #[serde(default = "default_eval")]
    pub eval: EvalConfig,
    #[serde(default)]
    pub baselines: BaselinesConfig,
    #[serde(default)]
    pub bound: BoundConfig,
}

fn default_eval() -> EvalConfig {
    EvalConfig {
        contrastive_batch: default_contrastive_batch(),
        eval_seed: 0,
        method: default_method(),
        holdout_sets: 0,
        sanity_split: default_sanity_split(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_workdir();
        config.validate()?;
        Ok(config)
    }

    /// Prepend `CAME_WORKDIR` to relative workdirs.
    pub fn resolve_workdir(&mut self) {
        if self.workdir.is_relative() {
            if let Ok(root) = std::env::var(WORKDIR_ENV) {
                self.workdir = PathBuf::from(root).join(&self.workdir);
            }
        }
    }

    pub fn views_policy(&self) -> AugPolicy {
        self.views.unwrap_or(match self.dataset.kind {
            DatasetKind::SynthDigits | DatasetKind::Mnist => AugPolicy::digits_default(),
            _ => AugPolicy::simclr_default(),
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        self.train
            .hp
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Err(m) = self.views_policy().validate() {
            return fail(format!("views: {m}"));
        }
        if self.synthesis.count < 2 {
            return fail(format!(
                "synthesis.count = {} but at least 2 sample sets are needed to fit",
                self.synthesis.count
            ));
        }
        if self.eval.holdout_sets + 2 > self.synthesis.count {
            return fail(format!(
                "holdout_sets = {} leaves fewer than 2 of {} sets for fitting",
                self.eval.holdout_sets, self.synthesis.count
            ));
        }
        if self.eval.contrastive_batch < 2 {
            return fail("eval.contrastive_batch must be >= 2".to_string());
        }
        if !(0.0..1.0).contains(&self.eval.sanity_split) {
            return fail("eval.sanity_split must be in [0, 1)".to_string());
        }
        match self.dataset.kind {
            DatasetKind::SynthDigits => {
                if self.dataset.train_size.unwrap_or(0) < 2 {
                    return fail("dataset.train_size must be >= 2 for synth-digits".to_string());
                }
                if self.dataset.seed_size.unwrap_or(0) < self.eval.contrastive_batch {
                    return fail(format!(
                        "dataset.seed_size must be at least eval.contrastive_batch ({})",
                        self.eval.contrastive_batch
                    ));
                }
            }
            _ => {
                for (name, root) in [
                    ("dataset.train_root", &self.dataset.train_root),
                    ("dataset.seed_root", &self.dataset.seed_root),
                ] {
                    match root {
                        None => return fail(format!("{name} is required for this dataset kind")),
                        Some(p) if !p.exists() => {
                            return fail(format!("{name} = {} does not exist", p.display()))
                        }
                        _ => {}
                    }
                }
            }
        }
        for target in &self.targets {
            if !target.root.exists() {
                return fail(format!(
                    "target `{}` root {} does not exist",
                    target.name,
                    target.root.display()
                ));
            }
        }
        if self.bound.negatives == 0 {
            return fail("bound.negatives must be >= 1".to_string());
        }
        Ok(())
    }

    /// Stable hash of the experiment definition, recorded in reports. The
    /// workdir is excluded: where outputs land does not change what was run.
    pub fn config_hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.workdir = PathBuf::new();
        let json = serde_json::to_string(&keyed).expect("config serializes");
        let mut hasher = <sha2::Sha256 as sha2::Digest>::new();
        sha2::Digest::update(&mut hasher, json.as_bytes());
        let digest = sha2::Digest::finalize(hasher);
        hex(&digest[..16])
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A ready-to-run desk-scale configuration for the synthetic digit dataset.
pub fn example_config_toml() -> String {
    r#"workdir = "runs/digits-desk"

[dataset]
kind = "synth-digits"
train_size = 10000
seed_size = 2000
generator_seed = 1

[train]
arch = "lenet5"
lambda = 0.001
tau = 0.07
batch_size = 256
epochs = 40
projection_dim = 128
seed = 0

[train.optimizer]
name = "adam"
lr = 3e-4

[synthesis]
count = 60
recipe = "mnist"
master_seed = 7

[eval]
contrastive_batch = 500
eval_seed = 33
method = "huber"
holdout_sets = 10
"#
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_parses_and_validates() {
        let config = ExperimentConfig::from_toml(&example_config_toml()).unwrap();
        assert!(config.validate().is_ok());
        assert_eq!(config.synthesis.count, 60);
        assert_eq!(config.eval.holdout_sets, 10);
        assert_eq!(config.train.hp.arch, "lenet5");
        assert!((config.train.hp.lambda - 0.001).abs() < 1e-12);
    }

    #[test]
    fn bad_holdout_rejected() {
        let mut config = ExperimentConfig::from_toml(&example_config_toml()).unwrap();
        config.eval.holdout_sets = 59;
        assert!(matches!(config.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_toml(&example_config_toml()).unwrap();
        let b = ExperimentConfig::from_toml(&example_config_toml()).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let mut c = ExperimentConfig::from_toml(&example_config_toml()).unwrap();
        c.synthesis.master_seed = 8;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn missing_roots_rejected_for_file_backed_kinds() {
        let mut config = ExperimentConfig::from_toml(&example_config_toml()).unwrap();
        config.dataset.kind = DatasetKind::Mnist;
        assert!(matches!(config.validate(), Err(PipelineError::Config(_))));
    }
}
