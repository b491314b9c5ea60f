//! Evaluation reports and the pairs CSV.
//!
//! Accuracies are percentages in reports (matching the usual presentation)
//! and fractions in the pairs CSV (the regressor's internal unit).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::regress::AccuracyPair;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// A synthesized sample set held out from fitting.
    Holdout,
    /// An unseen test set named in the configuration.
    Target,
}

/// One evaluated set: measured contrastive accuracy, predicted
/// classification accuracy, and ground truth when labels exist. Percentages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub set_id: String,
    pub kind: RowKind,
    pub acc_con: f64,
    pub predicted_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_error: Option<f64>,
    pub clamped: bool,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub checkpoint_id: String,
    pub code_version: String,
}

/// The end-to-end evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    /// Number of synthesized pairs the regressor was fit on.
    pub fit_pairs: usize,
    /// Correlation over the fit pairs.
    pub pearson_r: f64,
    pub spearman_rho: f64,
    /// MAE over held-out sample sets, percentage points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_mae: Option<f64>,
    /// In-distribution sanity MAE from a one-shot split of the fit pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sanity_mae: Option<f64>,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("report: {e}")))
    }

    /// CSV view of the rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "set_id,kind,acc_con,predicted_acc,ground_truth_acc,abs_error,clamped,extrapolated\n",
        );
        for row in &self.rows {
            let kind = match row.kind {
                RowKind::Holdout => "holdout",
                RowKind::Target => "target",
            };
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{},{},{},{}\n",
                row.set_id,
                kind,
                row.acc_con,
                row.predicted_acc,
                row.ground_truth_acc
                    .map_or(String::new(), |v| format!("{v:.4}")),
                row.abs_error.map_or(String::new(), |v| format!("{v:.4}")),
                row.clamped,
                row.extrapolated,
            ));
        }
        out
    }
}

/// Serialize accuracy pairs (fractions) to the pairs CSV format.
pub fn pairs_to_csv(pairs: &[AccuracyPair]) -> String {
    let mut out = String::from("sample_set_id,acc_con,acc_cla\n");
    for pair in pairs {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            pair.sample_set_id, pair.acc_con, pair.acc_cla
        ));
    }
    out
}

pub fn write_pairs_csv(pairs: &[AccuracyPair], path: &Path) -> std::io::Result<()> {
    fs::write(path, pairs_to_csv(pairs))
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<AccuracyPair>, PipelineError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for record in reader.deserialize::<AccuracyPair>() {
        pairs.push(record.map_err(|e| PipelineError::Config(format!("pairs csv: {e}")))?);
    }
    Ok(pairs)
}

/// A baseline estimator result row, percentages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRow {
    pub target: String,
    pub estimator: String,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_error: Option<f64>,
}
