//! The multi-task training loop: cross-entropy on the original batch plus
//! weighted InfoNCE on two augmented views, one optimizer step per batch.

use ndarray::Ix2;
use thiserror::Error;

use crate::data::{ImageTensor, LabeledDataset};
use crate::rng;

use super::layers::{apply_buffer_updates, Runtime};
use super::model::{CoTrainedModel, HyperParams, ModelError};
use super::optim::Optimizer;
use super::views::{make_views, AugPolicy};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid view policy: {0}")]
    BadPolicy(String),
    #[error("training set too small: {0} images")]
    DatasetTooSmall(usize),
    #[error("training diverged at epoch {epoch} step {step}: ce = {ce}, nce = {nce}")]
    Diverged {
        epoch: usize,
        step: usize,
        ce: f64,
        nce: f64,
    },
    #[error("epoch callback failed: {0}")]
    Hook(String),
}

/// Metrics accumulated over one epoch of training batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub ce_loss: f64,
    pub nce_loss: f64,
    pub train_cla_acc: f64,
    pub train_con_acc: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,ce_loss,nce_loss,train_cla_acc,train_con_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.ce_loss, self.nce_loss, self.train_cla_acc, self.train_con_acc
        )
    }
}

/// Train a fresh model on the set. See [`train_with`] for the hook variant.
pub fn train(
    train_set: &LabeledDataset,
    hp: &HyperParams,
    policy: &AugPolicy,
) -> Result<(CoTrainedModel, Vec<EpochMetrics>), TrainError> {
    train_with(train_set, hp, policy, |_, _| Ok(()))
}

/// Train with a per-epoch hook (metrics logging, checkpoint cadence).
///
/// Fully deterministic in `hp.seed`: batch order, view augmentation and
/// parameter updates all derive from it.
pub fn train_with(
    train_set: &LabeledDataset,
    hp: &HyperParams,
    policy: &AugPolicy,
    mut on_epoch: impl FnMut(&CoTrainedModel, &EpochMetrics) -> Result<(), String>,
) -> Result<(CoTrainedModel, Vec<EpochMetrics>), TrainError> {
    hp.validate()?;
    policy.validate().map_err(TrainError::BadPolicy)?;
    if train_set.len() < 2 {
        return Err(TrainError::DatasetTooSmall(train_set.len()));
    }
    let first = train_set.image(0);
    let (c, h, w) = first.dim();
    let mut model = CoTrainedModel::init(hp, c, h, w, train_set.num_classes())?;
    let mut optimizer = Optimizer::new(hp.optimizer.clone(), &model.store);
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        optimizer.set_epoch(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = rng::derived_stream(hp.seed, "shuffle", &[epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut shuffle_rng, 0..=i);
            order.swap(i, j);
        }

        let mut ce_sum = 0.0f64;
        let mut nce_sum = 0.0f64;
        let mut cla_hits = 0usize;
        let mut cla_total = 0usize;
        let mut con_hits = 0usize;
        let mut con_total = 0usize;

        for (step, chunk) in order.chunks(hp.batch_size).enumerate() {
            if chunk.len() < 2 {
                break; // a trailing singleton has no in-batch negatives
            }
            let originals: Vec<&ImageTensor> = chunk.iter().map(|&i| train_set.image(i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.label(i)).collect();
            let owned: Vec<ImageTensor> = originals.iter().map(|&i| i.clone()).collect();
            let view_seed = rng::derive_seed(hp.seed, "views", &[epoch as u64, step as u64]);
            let (v1, v2) = make_views(&owned, policy, view_seed);
            let mut stacked: Vec<&ImageTensor> = Vec::with_capacity(chunk.len() * 2);
            stacked.extend(v1.iter());
            stacked.extend(v2.iter());

            let x_orig = model.batch_input(&originals)?;
            let x_views = model.batch_input(&stacked)?;

            let mut rt = Runtime::new(&model.store, true, true);
            let xo = rt.graph.leaf(x_orig, false);
            let feats = model.net.features(&mut rt, xo);
            let logits = model.net.logits(&mut rt, feats);
            let ce = rt.graph.softmax_cross_entropy(logits, labels.clone());

            let xv = rt.graph.leaf(x_views, false);
            let vfeats = model.net.features(&mut rt, xv);
            let z = model.net.project(&mut rt, vfeats);
            let sim = rt.graph.matmul_nt(z, z);
            let scaled = rt.graph.scale(sim, 1.0 / hp.tau as f32);
            let masked = rt.graph.mask_diagonal(scaled);
            let n = chunk.len();
            let pair_labels: Vec<usize> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
            let nce = rt.graph.softmax_cross_entropy(masked, pair_labels.clone());

            let combined = rt.graph.add_weighted(ce, nce, 1.0, hp.lambda as f32);

            let ce_v = rt.graph.scalar_value(ce) as f64;
            let nce_v = rt.graph.scalar_value(nce) as f64;
            if !ce_v.is_finite() || !nce_v.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    ce: ce_v,
                    nce: nce_v,
                });
            }

            // batch metrics from the forward values
            let logit_values = rt
                .graph
                .value(logits)
                .view()
                .into_dimensionality::<Ix2>()
                .expect("logits rank-2")
                .to_owned();
            for (row, &label) in logit_values.rows().into_iter().zip(&labels) {
                let mut best = 0usize;
                let mut best_v = f32::NEG_INFINITY;
                for (j, &v) in row.iter().enumerate() {
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                if best == label {
                    cla_hits += 1;
                }
            }
            let masked_values = rt
                .graph
                .value(masked)
                .view()
                .into_dimensionality::<Ix2>()
                .expect("similarities rank-2")
                .to_owned();
            for (i, row) in masked_values.rows().into_iter().enumerate() {
                let mut best = 0usize;
                let mut best_v = f32::NEG_INFINITY;
                for (j, &v) in row.iter().enumerate() {
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                if best == pair_labels[i] {
                    con_hits += 1;
                }
            }

            rt.graph.backward(combined);
            let grads = rt.param_grads();
            let updates = rt.take_buffer_updates();
            drop(rt);
            apply_buffer_updates(&mut model.store, updates);
            optimizer.step(&mut model.store, &grads);

            ce_sum += ce_v * chunk.len() as f64;
            nce_sum += nce_v * (2 * chunk.len()) as f64;
            cla_total += chunk.len();
            con_total += 2 * chunk.len();
        }

        if cla_total == 0 {
            return Err(TrainError::DatasetTooSmall(train_set.len()));
        }

        model.epoch = epoch + 1;
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            ce_loss: ce_sum / cla_total as f64,
            nce_loss: nce_sum / con_total as f64,
            train_cla_acc: cla_hits as f64 / cla_total as f64,
            train_con_acc: con_hits as f64 / con_total as f64,
            lr: optimizer.lr,
        };
        on_epoch(&model, &metrics).map_err(TrainError::Hook)?;
        history.push(metrics);
    }

    Ok((model, history))
}
