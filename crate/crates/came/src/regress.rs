//! Correlation statistics, the robust linear regressor from contrastive
//! accuracy to classification accuracy, and the MAE evaluation metric.
//!
//! Accuracies are handled as fractions in `[0, 1]` throughout; reporting
//! layers convert to percentage points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("inputs have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate variance in `{side}`")]
    DegenerateVariance { side: &'static str },
    #[error("non-finite value in input")]
    NonFinite,
}

/// One (contrastive accuracy, classification accuracy) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPair {
    pub sample_set_id: String,
    pub acc_con: f64,
    pub acc_cla: f64,
}

/// Regression method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Ols,
    Huber,
}

impl std::fmt::Display for FitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitMethod::Ols => f.write_str("ols"),
            FitMethod::Huber => f.write_str("huber"),
        }
    }
}

/// A fitted linear map `acc_cla = slope * acc_con + intercept` with
/// correlation statistics and residuals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegressorFit {
    pub slope: f64,
    pub intercept: f64,
    pub method: FitMethod,
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub residuals: Vec<f64>,
    pub n: usize,
    /// False when IRLS hit the iteration cap before the tolerance; the best
    /// iterate is still returned.
    pub converged: bool,
    /// Input range seen during fitting, used to flag extrapolation.
    pub x_min: f64,
    pub x_max: f64,
}

/// A prediction with its clamp/extrapolation flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value: f64,
    pub clamped: bool,
    pub extrapolated: bool,
}

fn validate_paired(xs: &[f64], ys: &[f64], needed: usize) -> Result<(), RegressError> {
    if xs.len() != ys.len() {
        return Err(RegressError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < needed {
        return Err(RegressError::TooFewPoints {
            needed,
            got: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(RegressError::NonFinite);
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, RegressError> {
    validate_paired(xs, ys, 2)?;
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(RegressError::DegenerateVariance { side: "x" });
    }
    if syy == 0.0 {
        return Err(RegressError::DegenerateVariance { side: "y" });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fractional (mid) ranks with ties averaged.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 averaged over the tie group
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson on fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, RegressError> {
    validate_paired(xs, ys, 2)?;
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

/// Fit `acc_cla = slope * acc_con + intercept` over the pairs.
///
/// `ols` minimizes squared residuals in closed form. `huber` runs iterated
/// reweighted least squares with the Huber weight at a MAD-scaled cutoff
/// (`delta = 1.35 * MAD / 0.6745`), tolerance 1e-10, at most 100 iterations.
pub fn fit_linear(pairs: &[AccuracyPair], method: FitMethod) -> Result<RegressorFit, RegressError> {
    let xs: Vec<f64> = pairs.iter().map(|p| p.acc_con).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.acc_cla).collect();
    validate_paired(&xs, &ys, 2)?;

    let (slope, intercept, converged) = match method {
        FitMethod::Ols => {
            let (w, b) = weighted_ols(&xs, &ys, None)?;
            (w, b, true)
        }
        FitMethod::Huber => huber_irls(&xs, &ys)?,
    };

    let residuals: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| y - (slope * x + intercept))
        .collect();
    // correlation statistics may individually be degenerate (e.g. constant
    // ys two-point fits); record NaN-free fallbacks of 0 in that case
    let pearson_r = pearson(&xs, &ys).unwrap_or(0.0);
    let spearman_rho = spearman(&xs, &ys).unwrap_or(0.0);
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(RegressorFit {
        slope,
        intercept,
        method,
        pearson_r,
        spearman_rho,
        residuals,
        n: pairs.len(),
        converged,
        x_min,
        x_max,
    })
}

fn weighted_ols(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<(f64, f64), RegressError> {
    let mut sw = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..xs.len() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        sw += w;
        sx += w * xs[i];
        sy += w * ys[i];
        sxx += w * xs[i] * xs[i];
        sxy += w * xs[i] * ys[i];
    }
    let det = sw * sxx - sx * sx;
    if det.abs() < 1e-300 || sw == 0.0 {
        return Err(RegressError::DegenerateVariance { side: "x" });
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    Ok((slope, intercept))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn huber_irls(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, bool), RegressError> {
    const MAX_ITER: usize = 100;
    const TOL: f64 = 1e-10;
    let (mut slope, mut intercept) = weighted_ols(xs, ys, None)?;
    let mut converged = false;
    let mut weights = vec![1.0; xs.len()];
    for _ in 0..MAX_ITER {
        let residuals: Vec<f64> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| y - (slope * x + intercept))
            .collect();
        let mut abs_dev: Vec<f64> =
            residuals.iter().map(|r| (r - median_of(&residuals)).abs()).collect();
        let mad = median(&mut abs_dev);
        // MAD -> sigma via the normal consistency constant; floor keeps the
        // cutoff positive when most residuals are exactly zero
        let scale = (mad / 0.6745).max(1e-12);
        let delta = 1.35 * scale;
        for (w, r) in weights.iter_mut().zip(&residuals) {
            let a = r.abs();
            *w = if a <= delta { 1.0 } else { delta / a };
        }
        let (new_slope, new_intercept) = weighted_ols(xs, ys, Some(&weights))?;
        let step = (new_slope - slope).abs().max((new_intercept - intercept).abs());
        slope = new_slope;
        intercept = new_intercept;
        if step < TOL {
            converged = true;
            break;
        }
    }
    Ok((slope, intercept, converged))
}

fn median_of(values: &[f64]) -> f64 {
    let mut copy = values.to_vec();
    median(&mut copy)
}

/// Predict classification accuracy from contrastive accuracy, clamped to
/// `[0, 1]` with the clamp and extrapolation events flagged.
pub fn predict(fit: &RegressorFit, acc_con: f64) -> Prediction {
    let raw = fit.slope * acc_con + fit.intercept;
    let value = raw.clamp(0.0, 1.0);
    Prediction {
        value,
        clamped: value != raw,
        extrapolated: acc_con < fit.x_min || acc_con > fit.x_max,
    }
}

/// Mean absolute error between predictions and ground truth, in the units of
/// the inputs (percentage points when inputs are percentages).
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, RegressError> {
    if pred.len() != truth.len() {
        return Err(RegressError::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(RegressError::TooFewPoints { needed: 1, got: 0 });
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}
