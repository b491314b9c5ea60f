//! The two accuracy metrics fed to the regressor: instance-discrimination
//! (contrastive) accuracy and plain classification accuracy.

use ndarray::Array2;
use thiserror::Error;

use crate::data::{ImageTensor, LabeledDataset};
use crate::rng;

use super::model::{CoTrainedModel, ModelError};
use super::views::{make_view, AugPolicy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contrastive batch size {batch} needs at least 2 and at most the set size ({available})")]
    BatchTooSmall { available: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Counting core: for each original row `i`, correct iff the most similar
/// view row is `i` (ties to the lowest index). Returns the number correct and
/// the softmax probability mass each anchor assigns to its own view.
pub fn nearest_view_counts(
    z_orig: &Array2<f32>,
    z_view: &Array2<f32>,
    tau: f64,
) -> (usize, Vec<f64>) {
    let n = z_orig.nrows();
    let mut correct = 0usize;
    let mut positive_probs = Vec::with_capacity(n);
    for i in 0..n {
        let anchor = z_orig.row(i);
        let mut best = usize::MAX;
        let mut best_sim = f32::NEG_INFINITY;
        let mut sims = Vec::with_capacity(n);
        for j in 0..n {
            let s: f32 = anchor.iter().zip(z_view.row(j)).map(|(&a, &b)| a * b).sum();
            if s > best_sim {
                best_sim = s;
                best = j;
            }
            sims.push(s as f64 / tau);
        }
        if best == i {
            correct += 1;
        }
        let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = sims.iter().map(|&s| (s - max).exp()).sum();
        positive_probs.push((sims[i] - max).exp() / denom);
    }
    (correct, positive_probs)
}

/// Detailed contrastive evaluation result. `accuracy` is the hard
/// indicator-based metric; `mean_positive_prob` is the soft score kept as
/// telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveEval {
    pub accuracy: f64,
    pub mean_positive_prob: f64,
    pub batches: usize,
    pub samples: usize,
}

/// Contrastive accuracy over sequential batches of `batch_n` drawn from a
/// seed-shuffled ordering; the last incomplete batch is dropped. For each
/// batch the originals are embedded alongside one augmented view per image,
/// and original `i` scores a hit when its own view is its nearest neighbor.
pub fn contrastive_eval(
    model: &CoTrainedModel,
    images: &[ImageTensor],
    batch_n: usize,
    policy: &AugPolicy,
    seed: u64,
) -> Result<ContrastiveEval, EvalError> {
    if batch_n < 2 || images.len() < batch_n {
        return Err(EvalError::BatchTooSmall {
            available: images.len(),
            batch: batch_n,
        });
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut shuffle_rng = rng::derived_stream(seed, "eval-shuffle", &[]);
    for i in (1..order.len()).rev() {
        let j = rand::Rng::gen_range(&mut shuffle_rng, 0..=i);
        order.swap(i, j);
    }
    let mut correct = 0usize;
    let mut samples = 0usize;
    let mut batches = 0usize;
    let mut prob_total = 0.0f64;
    for (b, chunk) in order.chunks_exact(batch_n).enumerate() {
        let originals: Vec<&ImageTensor> = chunk.iter().map(|&i| &images[i]).collect();
        let views: Vec<ImageTensor> = chunk
            .iter()
            .enumerate()
            .map(|(i, &idx)| {
                let mut r = rng::derived_stream(seed, "eval-view", &[b as u64, i as u64]);
                make_view(&images[idx], policy, &mut r)
            })
            .collect();
        let view_refs: Vec<&ImageTensor> = views.iter().collect();
        let z_orig = model.project(&originals)?;
        let z_view = model.project(&view_refs)?;
        let (hits, probs) = nearest_view_counts(&z_orig, &z_view, model.hp.tau);
        correct += hits;
        samples += chunk.len();
        prob_total += probs.iter().sum::<f64>();
        batches += 1;
    }
    Ok(ContrastiveEval {
        accuracy: correct as f64 / samples as f64,
        mean_positive_prob: prob_total / samples as f64,
        batches,
        samples,
    })
}

/// Contrastive accuracy in `[0, 1]`; see [`contrastive_eval`].
pub fn contrastive_accuracy(
    model: &CoTrainedModel,
    images: &[ImageTensor],
    batch_n: usize,
    policy: &AugPolicy,
    seed: u64,
) -> Result<f64, EvalError> {
    Ok(contrastive_eval(model, images, batch_n, policy, seed)?.accuracy)
}

/// Fraction of original (untransformed) images whose argmax logit matches the
/// label; ties resolve to the lowest class index.
pub fn classification_accuracy(
    model: &CoTrainedModel,
    set: &LabeledDataset,
) -> Result<f64, ModelError> {
    let refs: Vec<&ImageTensor> = set.images().iter().collect();
    let logits = model.logits(&refs)?;
    let mut correct = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(set.labels()) {
        let mut best = 0usize;
        let mut best_v = f32::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = j;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn constant_embeddings_score_one_over_n() {
        // every row identical: argmax ties resolve to index 0, so only
        // anchor 0 is correct and accuracy is exactly 1/N
        for n in [2usize, 5, 8] {
            let mut z = Array2::<f32>::zeros((n, 4));
            for mut row in z.rows_mut() {
                row[1] = 1.0;
            }
            let (correct, probs) = nearest_view_counts(&z, &z, 0.07);
            assert_eq!(correct, 1);
            for p in probs {
                assert!((p - 1.0 / n as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_matched_embeddings_score_perfectly() {
        let n = 6;
        let mut z = Array2::<f32>::zeros((n, n));
        for i in 0..n {
            z[(i, i)] = 1.0;
        }
        let (correct, _) = nearest_view_counts(&z, &z, 0.07);
        assert_eq!(correct, n);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let hp = crate::cotrain::HyperParams {
            arch: "tiny-mlp".to_string(),
            projection_dim: 4,
            ..crate::cotrain::HyperParams::mnist_defaults()
        };
        let model = crate::cotrain::CoTrainedModel::init(&hp, 1, 6, 6, 2).unwrap();
        let images = vec![crate::data::ImageTensor::zeros(1, 6, 6).unwrap(); 4];
        let policy = crate::cotrain::AugPolicy::identity();
        assert!(matches!(
            contrastive_accuracy(&model, &images, 1, &policy, 0),
            Err(EvalError::BatchTooSmall { batch: 1, .. })
        ));
        // a batch larger than the set also leaves zero full batches
        assert!(matches!(
            contrastive_accuracy(&model, &images, 5, &policy, 0),
            Err(EvalError::BatchTooSmall { batch: 5, available: 4 })
        ));
    }

    #[test]
    fn identity_sample_set_scores_like_the_seed_set() {
        let hp = crate::cotrain::HyperParams {
            arch: "tiny-mlp".to_string(),
            projection_dim: 4,
            ..crate::cotrain::HyperParams::mnist_defaults()
        };
        let model = crate::cotrain::CoTrainedModel::init(&hp, 1, 28, 28, 10).unwrap();
        let seed = crate::pipeline::synth_digits(30, 8, "seed");
        let unchanged = crate::data::SampleSet {
            id: "identity".into(),
            seed_set_id: seed.id.clone(),
            images: seed.images().to_vec(),
            labels: seed.labels().to_vec(),
            provenance: vec![],
        };
        let a = classification_accuracy(&model, &seed).unwrap();
        let b = classification_accuracy(&model, &unchanged.to_dataset(10)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counts_match_brute_force_enumeration() {
        // oracle: enumerate every (i, j) similarity with plain loops
        let mut r = crate::rng::stream(31);
        for _ in 0..200 {
            let n = 2 + rand::Rng::gen_range(&mut r, 0..7usize);
            let d = 3;
            let z_o = Array2::from_shape_fn((n, d), |_| rand::Rng::gen_range(&mut r, -1.0f32..1.0));
            let z_v = Array2::from_shape_fn((n, d), |_| rand::Rng::gen_range(&mut r, -1.0f32..1.0));
            let (counted, _) = nearest_view_counts(&z_o, &z_v, 0.07);
            let mut oracle = 0usize;
            for i in 0..n {
                let mut best = 0usize;
                let mut best_sim = f32::NEG_INFINITY;
                for j in 0..n {
                    let mut s = 0.0f32;
                    for k in 0..d {
                        s += z_o[(i, k)] * z_v[(j, k)];
                    }
                    if s > best_sim {
                        best_sim = s;
                        best = j;
                    }
                }
                if best == i {
                    oracle += 1;
                }
            }
            assert_eq!(counted, oracle);
        }
    }
}
