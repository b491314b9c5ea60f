//! The co-trained model: shared encoder `f`, contrastive projection head `g`
//! (two-layer MLP onto the unit sphere) and classification head `h`.

use ndarray::{Array2, ArrayD, Ix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ImageTensor;
use crate::rng;

use super::arch::{build_encoder, ArchError, ArchTag, Architecture, EncoderNet};
use super::graph::NodeId;
use super::layers::{Linear, ParamStore, Runtime};
use super::optim::OptimizerSpec;
use super::scalar::Scalar;
use super::views::AugPolicy;

/// Batch size used internally when evaluating over large image lists.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("image {index} is {got_h}x{got_w}, model expects {want_h}x{want_w}")]
    SpatialMismatch {
        index: usize,
        got_h: usize,
        got_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("invalid hyperparameters: {0}")]
    BadHyperParams(String),
}

/// Training hyperparameters; serialized into checkpoints and configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Architecture tag, e.g. `lenet5`, `densenet-40-12`, `resnet-20`,
    /// `tiny-mlp`.
    pub arch: String,
    /// Contrastive loss weight.
    pub lambda: f64,
    /// Similarity temperature.
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerSpec,
    /// Output dimension of the contrastive projection head.
    pub projection_dim: usize,
    pub seed: u64,
}

impl HyperParams {
    /// Digit-dataset defaults: Adam at 3e-4, 700 epochs, batch 2048,
    /// lambda 1e-3, tau 0.07.
    pub fn mnist_defaults() -> Self {
        Self {
            arch: "lenet5".to_string(),
            lambda: 0.001,
            tau: 0.07,
            batch_size: 2048,
            epochs: 700,
            optimizer: OptimizerSpec::Adam { lr: 3e-4 },
            projection_dim: 128,
            seed: 0,
        }
    }

    /// Natural-image defaults: SGD momentum 0.9 at 0.1 decayed x0.1 at
    /// epochs 150/225, 300 epochs, batch 128.
    pub fn cifar_defaults() -> Self {
        Self {
            arch: "densenet-40-12".to_string(),
            lambda: 0.001,
            tau: 0.07,
            batch_size: 128,
            epochs: 300,
            optimizer: OptimizerSpec::Sgd {
                lr: 0.1,
                momentum: 0.9,
                milestones: vec![150, 225],
                gamma: 0.1,
            },
            projection_dim: 128,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::BadHyperParams(format!(
                "lambda {} must be >= 0",
                self.lambda
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ModelError::BadHyperParams(format!(
                "tau {} must be > 0",
                self.tau
            )));
        }
        if self.batch_size < 2 {
            return Err(ModelError::BadHyperParams(
                "batch_size must be >= 2 for contrastive training".to_string(),
            ));
        }
        if self.epochs == 0 {
            return Err(ModelError::BadHyperParams("epochs must be >= 1".to_string()));
        }
        if self.projection_dim == 0 {
            return Err(ModelError::BadHyperParams(
                "projection_dim must be >= 1".to_string(),
            ));
        }
        ArchTag::parse(&self.arch)?;
        Ok(())
    }
}

/// Encoder plus both heads, referencing parameters in a [`ParamStore`].
pub struct ModelNet {
    pub encoder: EncoderNet,
    pub proj_fc1: Linear,
    pub proj_fc2: Linear,
    pub cls: Linear,
}

impl ModelNet {
    pub fn features<T: Scalar>(&self, rt: &mut Runtime<'_, T>, x: NodeId) -> NodeId {
        self.encoder.forward(rt, x)
    }

    /// `g(f(x))`: two-layer MLP then L2 row normalization.
    pub fn project<T: Scalar>(&self, rt: &mut Runtime<'_, T>, feats: NodeId) -> NodeId {
        let h = self.proj_fc1.forward(rt, feats);
        let h = rt.graph.relu(h);
        let z = self.proj_fc2.forward(rt, h);
        rt.graph.l2_normalize_rows(z)
    }

    /// `h(f(x))`: class logits.
    pub fn logits<T: Scalar>(&self, rt: &mut Runtime<'_, T>, feats: NodeId) -> NodeId {
        self.cls.forward(rt, feats)
    }
}

/// Build the full network for an architecture tag, registering parameters.
pub fn build_model<T: Scalar>(
    tag: ArchTag,
    in_channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    projection_dim: usize,
    seed: u64,
) -> Result<(ParamStore<T>, ModelNet, Architecture), ModelError> {
    let mut store = ParamStore::new();
    let mut r = rng::derived_stream(seed, "init", &[]);
    let (encoder, feature_dim) = build_encoder(tag, in_channels, height, width, &mut store, &mut r)?;
    let proj_fc1 = Linear::init(&mut store, "proj.fc1", feature_dim, feature_dim, &mut r);
    let proj_fc2 = Linear::init(&mut store, "proj.fc2", feature_dim, projection_dim, &mut r);
    let cls = Linear::init(&mut store, "cls", feature_dim, num_classes, &mut r);
    let arch = Architecture {
        tag,
        in_channels,
        height,
        width,
        feature_dim,
    };
    Ok((store, ModelNet { encoder, proj_fc1, proj_fc2, cls }, arch))
}

/// A trained (or in-training) model with everything needed to evaluate it.
pub struct CoTrainedModel {
    pub(crate) store: ParamStore<f32>,
    pub(crate) net: ModelNet,
    pub arch: Architecture,
    pub hp: HyperParams,
    pub num_classes: usize,
    pub epoch: usize,
}

impl CoTrainedModel {
    /// Fresh, untrained model.
    pub fn init(
        hp: &HyperParams,
        in_channels: usize,
        height: usize,
        width: usize,
        num_classes: usize,
    ) -> Result<Self, ModelError> {
        hp.validate()?;
        let tag = ArchTag::parse(&hp.arch)?;
        let (store, net, arch) = build_model::<f32>(
            tag,
            in_channels,
            height,
            width,
            num_classes,
            hp.projection_dim,
            hp.seed,
        )?;
        Ok(Self {
            store,
            net,
            arch,
            hp: hp.clone(),
            num_classes,
            epoch: 0,
        })
    }

    /// Adapt an image to the model's input channel count and stack a batch.
    pub(crate) fn batch_input(&self, images: &[&ImageTensor]) -> Result<ArrayD<f32>, ModelError> {
        if images.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let want_c = self.arch.in_channels;
        let (want_h, want_w) = (self.arch.height, self.arch.width);
        let mut out = ndarray::Array4::<f32>::zeros((images.len(), want_c, want_h, want_w));
        for (n, img) in images.iter().enumerate() {
            let (c, h, w) = img.dim();
            if h != want_h || w != want_w {
                return Err(ModelError::SpatialMismatch {
                    index: n,
                    got_h: h,
                    got_w: w,
                    want_h,
                    want_w,
                });
            }
            let adapted;
            let view = if c == want_c {
                img.pixels()
            } else if c == 1 && want_c == 3 {
                adapted = img.to_rgb();
                adapted.pixels()
            } else {
                // collapse RGB to luminance for single-channel models
                adapted = ImageTensor::from_valid(
                    img.luminance()
                        .insert_axis(ndarray::Axis(0))
                        .mapv(|v| v.clamp(0.0, 1.0)),
                );
                adapted.pixels()
            };
            for ci in 0..want_c {
                for y in 0..want_h {
                    for x in 0..want_w {
                        out[(n, ci, y, x)] = view[(ci, y, x)];
                    }
                }
            }
        }
        Ok(out.into_dyn())
    }

    fn eval_forward<F>(&self, images: &[&ImageTensor], f: F) -> Result<Array2<f32>, ModelError>
    where
        F: Fn(&ModelNet, &mut Runtime<'_, f32>, NodeId) -> NodeId,
    {
        let mut rows: Vec<Array2<f32>> = Vec::new();
        for chunk in images.chunks(EVAL_CHUNK) {
            let x = self.batch_input(chunk)?;
            let mut rt = Runtime::new(&self.store, false, false);
            let xn = rt.graph.leaf(x, false);
            let out = f(&self.net, &mut rt, xn);
            let value = rt
                .graph
                .value(out)
                .view()
                .into_dimensionality::<Ix2>()
                .expect("rank-2 eval output")
                .to_owned();
            rows.push(value);
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("concat eval chunks"))
    }

    /// Encoder features `f(x)`.
    pub fn embed(&self, images: &[&ImageTensor]) -> Result<Array2<f32>, ModelError> {
        self.eval_forward(images, |net, rt, x| net.features(rt, x))
    }

    /// Unit-norm contrastive embeddings `g(f(x))`.
    pub fn project(&self, images: &[&ImageTensor]) -> Result<Array2<f32>, ModelError> {
        self.eval_forward(images, |net, rt, x| {
            let feats = net.features(rt, x);
            net.project(rt, feats)
        })
    }

    /// Class logits `h(f(x))`.
    pub fn logits(&self, images: &[&ImageTensor]) -> Result<Array2<f32>, ModelError> {
        self.eval_forward(images, |net, rt, x| {
            let feats = net.features(rt, x);
            net.logits(rt, feats)
        })
    }

    /// Softmax probabilities as f64 rows (for the confidence baselines).
    pub fn softmax_probs(&self, images: &[&ImageTensor]) -> Result<Array2<f64>, ModelError> {
        let logits = self.logits(images)?;
        let (n, k) = logits.dim();
        let mut probs = Array2::zeros((n, k));
        for i in 0..n {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut denom = 0.0f64;
            for j in 0..k {
                let e = (row[j] as f64 - max).exp();
                probs[(i, j)] = e;
                denom += e;
            }
            for j in 0..k {
                probs[(i, j)] /= denom;
            }
        }
        Ok(probs)
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    pub fn projection_dim(&self) -> usize {
        self.hp.projection_dim
    }

    /// Total number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// The view policy recorded for evaluation-time augmentation, matching
    /// the training input geometry (digits get no horizontal flips).
    pub fn default_policy(&self) -> AugPolicy {
        if self.arch.in_channels == 1 {
            AugPolicy::digits_default()
        } else {
            AugPolicy::simclr_default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn tiny_model() -> CoTrainedModel {
        let hp = HyperParams {
            arch: "tiny-mlp".to_string(),
            lambda: 0.001,
            tau: 0.07,
            batch_size: 4,
            epochs: 1,
            optimizer: OptimizerSpec::Adam { lr: 1e-3 },
            projection_dim: 8,
            seed: 7,
        };
        CoTrainedModel::init(&hp, 1, 6, 6, 3).unwrap()
    }

    fn img(seed: f32) -> ImageTensor {
        let arr = Array3::from_shape_fn((1, 6, 6), |(_, y, x)| {
            ((seed + (y * 6 + x) as f32) * 0.37).sin() * 0.5 + 0.5
        });
        ImageTensor::new(arr).unwrap()
    }

    #[test]
    fn projection_rows_are_unit_norm() {
        let model = tiny_model();
        let images = [img(1.0), img(2.0), img(3.0)];
        let refs: Vec<&ImageTensor> = images.iter().collect();
        let z = model.project(&refs).unwrap();
        for row in z.rows() {
            let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5, "norm {norm}");
        }
    }

    #[test]
    fn logits_have_class_width() {
        let model = tiny_model();
        let images = [img(4.0)];
        let refs: Vec<&ImageTensor> = images.iter().collect();
        assert_eq!(model.logits(&refs).unwrap().dim(), (1, 3));
        let probs = model.softmax_probs(&refs).unwrap();
        let sum: f64 = probs.row(0).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn channel_adaptation_replicates_gray_to_rgb() {
        let hp = HyperParams {
            arch: "tiny-mlp".to_string(),
            projection_dim: 4,
            ..HyperParams::mnist_defaults()
        };
        let model = CoTrainedModel::init(&hp, 3, 6, 6, 2).unwrap();
        let gray = img(0.5);
        let batch = model.batch_input(&[&gray]).unwrap();
        assert_eq!(batch.shape(), &[1, 3, 6, 6]);
        assert_eq!(batch[[0, 0, 2, 2]], batch[[0, 2, 2, 2]]);
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let model = tiny_model();
        let wrong = ImageTensor::zeros(1, 8, 8).unwrap();
        assert!(matches!(
            model.logits(&[&wrong]),
            Err(ModelError::SpatialMismatch { .. })
        ));
    }

    #[test]
    fn hyperparam_validation() {
        let mut hp = HyperParams::mnist_defaults();
        hp.tau = 0.0;
        assert!(hp.validate().is_err());
        let mut hp2 = HyperParams::mnist_defaults();
        hp2.lambda = -0.1;
        assert!(hp2.validate().is_err());
        let mut hp3 = HyperParams::mnist_defaults();
        hp3.batch_size = 1;
        assert!(hp3.validate().is_err());
        assert!(HyperParams::cifar_defaults().validate().is_ok());
    }
}
