//! The multi-task model: a shared encoder with a contrastive projection head
//! and a classification head, trained jointly on `L_CE + lambda * L_NCE`,
//! plus the two accuracy metrics that feed the regressor.

pub mod arch;
pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod train;
pub mod views;

pub use arch::{ArchError, ArchTag, Architecture};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use loss::{combined_loss, cross_entropy_loss, info_nce_loss, LossError};
pub use metrics::{
    classification_accuracy, contrastive_accuracy, contrastive_eval, ContrastiveEval, EvalError,
};
pub use model::{CoTrainedModel, HyperParams, ModelError};
pub use optim::OptimizerSpec;
pub use train::{train, train_with, EpochMetrics, TrainError};
pub use views::{make_view, make_views, AugPolicy, ColorJitter};
