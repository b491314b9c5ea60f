//! Empirical verification of the sandwich bound relating the contrastive
//! risk to the mean-classifier cross-entropy:
//!
//! ```text
//! L_NCE - sqrt(Var) - 1/2 * sum_j sqrt(Var_j) - c/sqrt(M)
//!     <= L_CE^mu + log(M/K) <=
//! L_NCE + sqrt(Var) + c/sqrt(M)
//! ```
//!
//! All three quantities are evaluated in the model's contrastive embedding
//! space `z = g(f(x))`. The `O(M^{-1/2})` constant is not derivable, so it is
//! exposed as `c_slack` and the raw gaps are always reported; `holds` is
//! advisory.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cotrain::{AugPolicy, CoTrainedModel, ModelError};
use crate::data::{ImageTensor, LabeledDataset};
use crate::rng;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("class {class} has no samples in the evaluation set")]
    MissingClass { class: usize },
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("need M >= 1 negatives and K >= 2 classes, got M = {m}, K = {k}")]
    BadArgs { m: usize, k: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One bound evaluation. `sqrt_var_total` and `half_coord_sqrt_sum` are the
/// two variance penalties; `slack = c_slack / sqrt(M)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub nce: f64,
    pub mean_ce: f64,
    /// log(M / K)
    pub constant: f64,
    pub var_total: f64,
    pub sqrt_var_total: f64,
    pub half_coord_sqrt_sum: f64,
    pub slack: f64,
    pub lower: f64,
    /// The bounded quantity: `mean_ce + log(M / K)`.
    pub middle: f64,
    pub upper: f64,
    pub holds: bool,
    pub m: usize,
    pub k: usize,
    pub c_slack: f64,
}

/// Per-class mean embeddings, shape [k, d]. Every class must appear.
pub fn class_means(
    embeddings: &Array2<f64>,
    labels: &[usize],
    k: usize,
) -> Result<Array2<f64>, BoundsError> {
    if embeddings.nrows() == 0 {
        return Err(BoundsError::EmptySet);
    }
    let d = embeddings.ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (row, &label) in embeddings.rows().into_iter().zip(labels) {
        counts[label] += 1;
        for (j, &v) in row.iter().enumerate() {
            sums[(label, j)] += v;
        }
    }
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(BoundsError::MissingClass { class });
        }
        for j in 0..d {
            sums[(class, j)] /= count as f64;
        }
    }
    Ok(sums)
}

/// Mean-classifier cross-entropy over embeddings: softmax of `z . mu_i`
/// scored at the true class, averaged. No temperature is applied.
pub fn mean_ce_of_embeddings(
    embeddings: &Array2<f64>,
    labels: &[usize],
    k: usize,
) -> Result<f64, BoundsError> {
    let means = class_means(embeddings, labels, k)?;
    let mut total = 0.0f64;
    for (row, &label) in embeddings.rows().into_iter().zip(labels) {
        let logits: Vec<f64> = means.rows().into_iter().map(|mu| row.dot(&mu)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
        total += denom.ln() - (logits[label] - max);
    }
    Ok(total / embeddings.nrows() as f64)
}

/// Conditional variance of embeddings given the label, class-weighted:
/// the total `E_y E_{x|y} ||z - mu_y||^2` and its per-coordinate split.
pub fn conditional_variance_of(
    embeddings: &Array2<f64>,
    labels: &[usize],
    k: usize,
) -> Result<(f64, Vec<f64>), BoundsError> {
    let means = class_means(embeddings, labels, k)?;
    let n = embeddings.nrows();
    let d = embeddings.ncols();
    let mut total = 0.0f64;
    let mut coords = vec![0.0f64; d];
    for (row, &label) in embeddings.rows().into_iter().zip(labels) {
        let mu = means.row(label);
        let mut sq = 0.0f64;
        for j in 0..d {
            let delta = row[j] - mu[j];
            sq += delta * delta;
            coords[j] += delta * delta / n as f64;
        }
        total += sq / n as f64;
    }
    Ok((total, coords))
}

/// InfoNCE with `m` uniformly sampled negatives per anchor (positive plus
/// `m` negatives in the denominator, no temperature), averaged over
/// `resamples` independent negative draws.
pub fn nce_with_sampled_negatives(
    anchors: &Array2<f64>,
    positives: &Array2<f64>,
    m: usize,
    resamples: usize,
    seed: u64,
) -> f64 {
    let n = anchors.nrows();
    let mut grand_total = 0.0f64;
    for resample in 0..resamples {
        let mut r = rng::derived_stream(seed, "bound-negatives", &[resample as u64]);
        let mut total = 0.0f64;
        for i in 0..n {
            let anchor = anchors.row(i);
            let pos_sim = anchor.dot(&positives.row(i));
            let mut terms = Vec::with_capacity(m + 1);
            terms.push(pos_sim);
            for _ in 0..m {
                // uniform over the other samples, with replacement
                let mut j = r.gen_range(0..n);
                if n > 1 {
                    while j == i {
                        j = r.gen_range(0..n);
                    }
                }
                terms.push(anchor.dot(&anchors.row(j)));
            }
            let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = terms.iter().map(|&v| (v - max).exp()).sum();
            total += denom.ln() - (pos_sim - max);
        }
        grand_total += total / n as f64;
    }
    grand_total / resamples as f64
}

fn project_f64(model: &CoTrainedModel, images: &[&ImageTensor]) -> Result<Array2<f64>, ModelError> {
    let z = model.project(images)?;
    Ok(z.mapv(|v| v as f64))
}

/// Mean-classifier cross-entropy of the model's contrastive embeddings over
/// a labeled set.
pub fn mean_ce_loss(model: &CoTrainedModel, set: &LabeledDataset) -> Result<f64, BoundsError> {
    let refs: Vec<&ImageTensor> = set.images().iter().collect();
    let z = project_f64(model, &refs)?;
    mean_ce_of_embeddings(&z, set.labels(), set.num_classes())
}

/// Conditional variance (total, per-coordinate) of the model's contrastive
/// embeddings over a labeled set.
pub fn conditional_variance(
    model: &CoTrainedModel,
    set: &LabeledDataset,
) -> Result<(f64, Vec<f64>), BoundsError> {
    let refs: Vec<&ImageTensor> = set.images().iter().collect();
    let z = project_f64(model, &refs)?;
    conditional_variance_of(&z, set.labels(), set.num_classes())
}

/// Number of negative-draw repetitions in the NCE estimate.
pub const NCE_RESAMPLES: usize = 10;

/// Evaluate the bound on a labeled set. Positives are one augmented view per
/// image under `policy`; negatives are `m` uniform draws per anchor.
pub fn check_bound(
    model: &CoTrainedModel,
    set: &LabeledDataset,
    m: usize,
    c_slack: f64,
    policy: &AugPolicy,
    seed: u64,
) -> Result<BoundReport, BoundsError> {
    let k = set.num_classes();
    if m < 1 || k < 2 {
        return Err(BoundsError::BadArgs { m, k });
    }
    if set.is_empty() {
        return Err(BoundsError::EmptySet);
    }
    let refs: Vec<&ImageTensor> = set.images().iter().collect();
    let anchors = project_f64(model, &refs)?;
    let views: Vec<ImageTensor> = set
        .images()
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut r = rng::derived_stream(seed, "bound-view", &[i as u64]);
            crate::cotrain::make_view(img, policy, &mut r)
        })
        .collect();
    let view_refs: Vec<&ImageTensor> = views.iter().collect();
    let positives = project_f64(model, &view_refs)?;

    let nce = nce_with_sampled_negatives(&anchors, &positives, m, NCE_RESAMPLES, seed);
    let mean_ce = mean_ce_of_embeddings(&anchors, set.labels(), k)?;
    let (var_total, coords) = conditional_variance_of(&anchors, set.labels(), k)?;
    let sqrt_var_total = var_total.sqrt();
    let half_coord_sqrt_sum = 0.5 * coords.iter().map(|v| v.sqrt()).sum::<f64>();
    let slack = c_slack / (m as f64).sqrt();
    let constant = (m as f64 / k as f64).ln();
    let middle = mean_ce + constant;
    let lower = nce - sqrt_var_total - half_coord_sqrt_sum - slack;
    let upper = nce + sqrt_var_total + slack;
    Ok(BoundReport {
        nce,
        mean_ce,
        constant,
        var_total,
        sqrt_var_total,
        half_coord_sqrt_sum,
        slack,
        lower,
        middle,
        upper,
        holds: lower <= middle && middle <= upper,
        m,
        k,
        c_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    #[test]
    fn orthonormal_two_class_mean_ce() {
        // constant embeddings e1 / e2 per class: softmax sees logits {1, 0}
        let z = arr2(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let labels = [0usize, 0, 1, 1];
        let loss = mean_ce_of_embeddings(&z, &labels, 2).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(expected, 0.31326, epsilon = 1e-5);
    }

    #[test]
    fn identical_embeddings_mean_ce_is_log_k() {
        let z = Array2::from_elem((6, 4), 0.5);
        let labels = [0usize, 1, 2, 0, 1, 2];
        let loss = mean_ce_of_embeddings(&z, &labels, 3).unwrap();
        assert_abs_diff_eq!(loss, 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn mean_ce_matches_brute_force_loop_oracle() {
        let mut r = crate::rng::stream(17);
        for _ in 0..50 {
            let n = 6;
            let d = 3;
            let k = 2;
            let z = Array2::from_shape_fn((n, d), |_| rand::Rng::gen_range(&mut r, -1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            let ours = mean_ce_of_embeddings(&z, &labels, k).unwrap();
            // oracle: naive recomputation without log-sum-exp shifting
            let mut mu = vec![vec![0.0f64; d]; k];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[labels[i]] += 1;
                for j in 0..d {
                    mu[labels[i]][j] += z[(i, j)];
                }
            }
            for c in 0..k {
                for j in 0..d {
                    mu[c][j] /= counts[c] as f64;
                }
            }
            let mut oracle = 0.0;
            for i in 0..n {
                let mut denom = 0.0;
                let mut num = 0.0;
                for (c, mu_c) in mu.iter().enumerate() {
                    let dot: f64 = (0..d).map(|j| z[(i, j)] * mu_c[j]).sum();
                    denom += dot.exp();
                    if c == labels[i] {
                        num = dot.exp();
                    }
                }
                oracle += -(num / denom).ln();
            }
            oracle /= n as f64;
            assert_abs_diff_eq!(ours, oracle, epsilon = 1e-6);
        }
    }

    #[test]
    fn missing_class_is_rejected() {
        let z = Array2::from_elem((2, 2), 0.1);
        assert!(matches!(
            mean_ce_of_embeddings(&z, &[0, 0], 2),
            Err(BoundsError::MissingClass { class: 1 })
        ));
    }

    #[test]
    fn constant_per_class_embeddings_have_zero_variance() {
        let z = arr2(&[[0.3, 0.7], [0.3, 0.7], [0.9, 0.1]]);
        let labels = [0usize, 0, 1];
        let (total, coords) = conditional_variance_of(&z, &labels, 2).unwrap();
        assert_abs_diff_eq!(total, 0.0, epsilon = 1e-15);
        assert!(coords.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_point_hand_case() {
        // class 0: (0,0) and (2,0) -> mu = (1,0); class 1: (5,5) alone
        // contributions: each class-0 point is 1 away in coord 0
        // total = (1 + 1 + 0) / 3; coord0 = 2/3, coord1 = 0
        let z = arr2(&[[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]]);
        let labels = [0usize, 0, 1];
        let (total, coords) = conditional_variance_of(&z, &labels, 2).unwrap();
        assert_abs_diff_eq!(total, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coords[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coords[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn total_variance_equals_coordinate_sum() {
        let mut r = crate::rng::stream(5);
        let z = Array2::from_shape_fn((40, 7), |_| rand::Rng::gen_range(&mut r, -2.0..2.0));
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let (total, coords) = conditional_variance_of(&z, &labels, 4).unwrap();
        let sum: f64 = coords.iter().sum();
        assert_abs_diff_eq!(total, sum, epsilon = 1e-9);
    }

    #[test]
    fn collapsed_embeddings_nce_is_log_m_plus_1() {
        let z = Array2::from_elem((10, 4), 0.5);
        for m in [1usize, 4, 64, 256] {
            let nce = nce_with_sampled_negatives(&z, &z, m, 3, 9);
            assert_abs_diff_eq!(nce, ((m + 1) as f64).ln(), epsilon = 1e-9);
        }
    }

    #[test]
    fn report_is_well_formed_when_k_exceeds_m() {
        // K > M makes log(M/K) negative; the report must stay ordered
        let mut r = crate::rng::stream(23);
        let z = Array2::from_shape_fn((12, 5), |_| rand::Rng::gen_range(&mut r, -1.0..1.0));
        let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let nce = nce_with_sampled_negatives(&z, &z, 2, 2, 1);
        let mean_ce = mean_ce_of_embeddings(&z, &labels, 4).unwrap();
        let (var_total, coords) = conditional_variance_of(&z, &labels, 4).unwrap();
        let constant = (2.0f64 / 4.0).ln();
        assert!(constant < 0.0);
        let sqrt_var = var_total.sqrt();
        let half = 0.5 * coords.iter().map(|v| v.sqrt()).sum::<f64>();
        let slack = 3.0 / 2.0f64.sqrt();
        let lower = nce - sqrt_var - half - slack;
        let upper = nce + sqrt_var + slack;
        assert!(lower <= upper);
        assert!(lower.is_finite() && upper.is_finite() && mean_ce.is_finite());
    }
}
