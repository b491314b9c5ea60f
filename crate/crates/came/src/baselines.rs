//! Confidence-based accuracy estimators used for head-to-head comparison
//! against the regression approach.
//!
//! All estimators consume softmax probability tables (one row per sample) so
//! they stay independent of any particular model implementation; the pipeline
//! layer produces the tables from a trained model.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("probability table is empty")]
    EmptySet,
    #[error("probability table needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("row {row} does not sum to 1 (sum = {sum})")]
    NotNormalized { row: usize, sum: f64 },
    #[error("labels length {labels} does not match {rows} rows")]
    LabelMismatch { labels: usize, rows: usize },
}

/// Which confidence score ATC thresholds on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtcScore {
    /// Maximum softmax confidence.
    Mc,
    /// Negative normalized entropy.
    Ne,
}

/// Estimator identifiers for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PredThreshold,
    EntropyThreshold,
    AvgConfidence,
    Doc,
    AtcMc,
    AtcNe,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::PredThreshold => "pred_threshold",
            EstimatorKind::EntropyThreshold => "entropy_threshold",
            EstimatorKind::AvgConfidence => "avg_confidence",
            EstimatorKind::Doc => "doc",
            EstimatorKind::AtcMc => "atc_mc",
            EstimatorKind::AtcNe => "atc_ne",
        };
        f.write_str(s)
    }
}

fn validate(probs: &ArrayView2<f64>) -> Result<(), BaselineError> {
    if probs.nrows() == 0 {
        return Err(BaselineError::EmptySet);
    }
    if probs.ncols() < 2 {
        return Err(BaselineError::TooFewClasses(probs.ncols()));
    }
    for (row, r) in probs.rows().into_iter().enumerate() {
        let sum: f64 = r.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(BaselineError::NotNormalized { row, sum });
        }
    }
    Ok(())
}

fn max_confidence(row: &ArrayView1<f64>) -> f64 {
    row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Shannon entropy of one softmax row normalized by `log K`, in `[0, 1]`.
pub fn normalized_entropy(row: &ArrayView1<f64>) -> f64 {
    let k = row.len() as f64;
    let h: f64 = row
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    h / k.ln()
}

fn scores(probs: &ArrayView2<f64>, score: AtcScore) -> Vec<f64> {
    probs
        .rows()
        .into_iter()
        .map(|r| match score {
            AtcScore::Mc => max_confidence(&r),
            AtcScore::Ne => -normalized_entropy(&r),
        })
        .collect()
}

/// Fraction of samples whose maximum softmax output exceeds `tau`.
pub fn pred_threshold(probs: &Array2<f64>, tau: f64) -> Result<f64, BaselineError> {
    validate(&probs.view())?;
    let n = probs.nrows() as f64;
    let hits = probs
        .rows()
        .into_iter()
        .filter(|r| max_confidence(r) > tau)
        .count();
    Ok(hits as f64 / n)
}

/// Fraction of samples whose normalized entropy is below `tau`.
pub fn entropy_threshold(probs: &Array2<f64>, tau: f64) -> Result<f64, BaselineError> {
    validate(&probs.view())?;
    let n = probs.nrows() as f64;
    let hits = probs
        .rows()
        .into_iter()
        .filter(|r| normalized_entropy(r) < tau)
        .count();
    Ok(hits as f64 / n)
}

/// Mean of the per-sample maximum softmax output.
pub fn avg_confidence(probs: &Array2<f64>) -> Result<f64, BaselineError> {
    validate(&probs.view())?;
    let n = probs.nrows() as f64;
    let total: f64 = probs.rows().into_iter().map(|r| max_confidence(&r)).sum();
    Ok(total / n)
}

/// Difference-of-confidences estimate: source accuracy minus the confidence
/// drop from source to target, clamped to `[0, 1]`.
pub fn doc_estimate(
    source_accuracy: f64,
    source_probs: &Array2<f64>,
    target_probs: &Array2<f64>,
) -> Result<f64, BaselineError> {
    let src_conf = avg_confidence(source_probs)?;
    let tgt_conf = avg_confidence(target_probs)?;
    Ok((source_accuracy - (src_conf - tgt_conf)).clamp(0.0, 1.0))
}

/// Accuracy of argmax predictions against labels, ties to the lowest index.
pub fn table_accuracy(probs: &Array2<f64>, labels: &[usize]) -> Result<f64, BaselineError> {
    validate(&probs.view())?;
    if labels.len() != probs.nrows() {
        return Err(BaselineError::LabelMismatch {
            labels: labels.len(),
            rows: probs.nrows(),
        });
    }
    let correct = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn argmax(row: &ArrayView1<f64>) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// The source-calibrated confidence threshold used by ATC.
///
/// Sorting the source scores ascending, the threshold is the largest score
/// value whose strictly-above coverage still reaches the source accuracy.
/// Ties are resolved downward: when a tie group straddles the cut (so
/// excluding the whole group would cover too little), the threshold moves
/// below the group; below all scores it is negative infinity (coverage 1).
pub fn atc_threshold(source_scores: &[f64], source_accuracy: f64) -> f64 {
    let n = source_scores.len();
    let mut ascending = source_scores.to_vec();
    ascending.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // number of samples allowed at-or-below the threshold; the epsilon keeps
    // integral counts like 6 * (1 - 5/6) from flooring one short
    let mut below = ((n as f64) * (1.0 - source_accuracy) + 1e-9).floor() as usize;
    // walk below a straddling tie group
    if below > 0 && below < n && ascending[below - 1] == ascending[below] {
        let tie = ascending[below - 1];
        while below > 0 && ascending[below - 1] == tie {
            below -= 1;
        }
    }
    if below == 0 {
        f64::NEG_INFINITY
    } else {
        ascending[below - 1]
    }
}

/// Average-thresholded-confidence estimate: learn a threshold on source
/// scores so the above-threshold fraction matches source accuracy, then
/// report the above-threshold fraction on the target.
pub fn atc_estimate(
    source_probs: &Array2<f64>,
    source_labels: &[usize],
    target_probs: &Array2<f64>,
    score: AtcScore,
) -> Result<f64, BaselineError> {
    let source_accuracy = table_accuracy(source_probs, source_labels)?;
    validate(&target_probs.view())?;
    let src_scores = scores(&source_probs.view(), score);
    let t = atc_threshold(&src_scores, source_accuracy);
    let tgt_scores = scores(&target_probs.view(), score);
    let hits = tgt_scores.iter().filter(|&&s| s > t).count();
    Ok(hits as f64 / tgt_scores.len() as f64)
}
