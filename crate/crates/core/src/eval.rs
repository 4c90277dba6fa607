//! Confusion matrices, per-class metrics and comparison tables.
//!
//! The positive class is "relevant" (or "visual"). Scores at or above the
//! threshold count as positive predictions. Ratios with a zero denominator
//! are absent rather than 0 and render as `—`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionMatrix> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        cm.record(s >= threshold, y);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision_pos: Option<f64>,
    pub recall_pos: Option<f64>,
    pub precision_neg: Option<f64>,
    pub recall_neg: Option<f64>,
    /// Mean of the two recalls.
    pub normalized_accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let recall_pos = ratio(cm.tp, cm.tp + cm.fn_);
    let recall_neg = ratio(cm.tn, cm.tn + cm.fp);
    ClassMetrics {
        precision_pos: ratio(cm.tp, cm.tp + cm.fp),
        recall_pos,
        precision_neg: ratio(cm.tn, cm.tn + cm.fn_),
        recall_neg,
        normalized_accuracy: recall_pos.zip(recall_neg).map(|(a, b)| (a + b) / 2.0),
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    ratio(cm.tp + cm.tn, cm.total()).ok_or_else(|| Error::invalid("accuracy of an empty confusion matrix"))
}

/// One row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedResult {
    pub model: String,
    pub dataset: String,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub dataset: String,
    pub confusion: ConfusionMatrix,
    pub accuracy: Option<f64>,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

fn sorted_rows(results: &[NamedResult]) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = results
        .iter()
        .map(|r| ResultRow {
            model: r.model.clone(),
            dataset: r.dataset.clone(),
            confusion: r.confusion,
            accuracy: accuracy(&r.confusion).ok(),
            metrics: per_class_metrics(&r.confusion),
        })
        .collect();
    rows.sort_by(|a, b| (&a.model, &a.dataset).cmp(&(&b.model, &b.dataset)));
    rows
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "—".to_string(), |x| format!("{x:.4}"))
}

/// Column-aligned text table, one row per result, sorted by model then
/// dataset. `acc` is plain accuracy; `norm_acc` is the mean per-class recall.
pub fn report(results: &[NamedResult]) -> String {
    let header = [
        "model", "dataset", "n", "acc", "norm_acc", "prec+", "rec+", "prec-", "rec-",
    ];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in sorted_rows(results) {
        let m = r.metrics;
        table.push(vec![
            r.model,
            r.dataset,
            r.confusion.total().to_string(),
            cell(r.accuracy),
            cell(m.normalized_accuracy),
            cell(m.precision_pos),
            cell(m.recall_pos),
            cell(m.precision_neg),
            cell(m.recall_neg),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let mut line = String::new();
        for (c, (text, &w)) in row.iter().zip(&widths).enumerate() {
            let pad = w - text.chars().count();
            if c > 0 {
                line.push_str("  ");
            }
            // names left-aligned, numbers right-aligned
            if c < 2 {
                line.push_str(text);
                line.extend(std::iter::repeat_n(' ', pad));
            } else {
                line.extend(std::iter::repeat_n(' ', pad));
                line.push_str(text);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// The same rows as [`report`], as JSON.
pub fn report_json(results: &[NamedResult]) -> serde_json::Value {
    serde_json::to_value(sorted_rows(results)).expect("plain data serializes")
}
