//! Training-set-free automated model evaluation.
//!
//! The toolkit co-trains an image classifier with a contrastive objective,
//! synthesizes distribution-shifted sample sets from a seed dataset, measures
//! (contrastive accuracy, classification accuracy) pairs on them, fits a
//! robust linear regressor from contrastive accuracy to classification
//! accuracy, and uses that regressor to predict a model's accuracy on unseen,
//! unlabeled test sets.
//!
//! Modules map onto the stages of the workflow:
//!
//! - [`augment`] — deterministic image transforms and sample-set synthesis
//! - [`cotrain`] — the shared-encoder / two-head model, losses, training loop
//!   and the two accuracy metrics
//! - [`regress`] — correlation statistics and the accuracy regressor
//! - [`bounds`] — empirical checks of the contrastive-vs-classification risk
//!   sandwich bound
//! - [`baselines`] — confidence-based accuracy estimators for comparison
//! - [`pipeline`] — configuration, dataset ingestion, persistence, reporting
//!   and the end-to-end runner behind the CLI

pub mod augment;
pub mod baselines;
pub mod bounds;
pub mod cotrain;
pub mod data;
pub mod pipeline;
pub mod regress;
pub mod rng;

pub use data::{ImageTensor, LabeledDataset, SampleSet};
