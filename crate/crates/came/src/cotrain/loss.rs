//! The two task losses and their combination, as plain value-level functions.
//!
//! The training loop computes the same quantities through the graph ops; unit
//! tests pin the two routes against each other and against brute-force
//! oracles.

use ndarray::ArrayView2;
use thiserror::Error;

use super::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("embedding row {row} has norm {norm}, expected unit length")]
    NonNormalizedInput { row: usize, norm: f64 },
    #[error("contrastive batch needs 2N >= 4 rows with N positives, got {rows}")]
    DegenerateBatch { rows: usize },
    #[error("label {label} out of range for {classes} classes at row {row}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
}

/// InfoNCE over a stacked view batch.
///
/// Rows `0..N` and `N..2N` hold the two views; row `i` and row `i + N` are a
/// positive pair. For each of the `2N` anchors the denominator runs over the
/// other `2N - 1` rows (positive included), all similarities divided by
/// `tau`. Returns the mean anchor loss, which is non-negative and reaches
/// `ln(2N - 1)` exactly when every embedding collapses onto one point.
pub fn info_nce_loss<T: Scalar>(z: &ArrayView2<'_, T>, tau: T) -> Result<T, LossError> {
    if tau <= T::zero() {
        return Err(LossError::BadTemperature(tau.to_f64()));
    }
    let rows = z.nrows();
    if rows < 4 || rows % 2 != 0 {
        return Err(LossError::DegenerateBatch { rows });
    }
    for (i, row) in z.rows().into_iter().enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().to_f64();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(LossError::NonNormalizedInput { row: i, norm });
        }
    }
    let n = rows / 2;
    let mut total = T::zero();
    for i in 0..rows {
        let positive = if i < n { i + n } else { i - n };
        let anchor = z.row(i);
        // log-sum-exp over all other rows, positive included
        let mut max = T::neg_infinity();
        let mut sims = Vec::with_capacity(rows - 1);
        let mut pos_sim = T::zero();
        for j in 0..rows {
            if j == i {
                continue;
            }
            let s = anchor
                .iter()
                .zip(z.row(j).iter())
                .map(|(&a, &b)| a * b)
                .sum::<T>()
                / tau;
            if j == positive {
                pos_sim = s;
            }
            if s > max {
                max = s;
            }
            sims.push(s);
        }
        let denom: T = sims.iter().map(|&s| (s - max).exp()).sum();
        total = total + (denom.ln() + max - pos_sim);
    }
    Ok(total / T::from_f64(rows as f64))
}

/// Mean softmax cross-entropy of logits against integer labels.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &ArrayView2<'_, T>,
    labels: &[usize],
) -> Result<T, LossError> {
    let (n, k) = logits.dim();
    assert_eq!(n, labels.len(), "label count must match logit rows");
    let mut total = T::zero();
    for (i, (row, &label)) in logits.rows().into_iter().zip(labels).enumerate() {
        if label >= k {
            return Err(LossError::LabelOutOfRange {
                row: i,
                label,
                classes: k,
            });
        }
        let max = row.iter().cloned().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
        total = total + (denom.ln() - (row[label] - max));
    }
    Ok(total / T::from_f64(n as f64))
}

/// The multi-task objective: `ce + lambda * nce`, affine in `lambda`.
pub fn combined_loss<T: Scalar>(ce: T, nce: T, lambda: T) -> T {
    ce + lambda * nce
}
