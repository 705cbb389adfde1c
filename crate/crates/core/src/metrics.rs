//! Binary classification metrics from a confusion matrix.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub false_positive_rate: f64,
    pub confusion: Confusion,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Undefined ratios (empty denominators) are reported as 0.
    pub fn from_confusion(c: Confusion) -> Result<Self> {
        if c.total() == 0 {
            return Err(Error::Dataset("metrics need at least one prediction".into()));
        }
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            recall,
            precision,
            f1,
            false_positive_rate: ratio(c.fp, c.fp + c.tn),
            confusion: c,
        })
    }
}

/// Labels are 0 (benign) or 1 (malicious).
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (0, 1) => c.fn_ += 1,
            _ => return Err(Error::Dataset(format!("non-binary label pair ({p}, {y})"))),
        }
    }
    Metrics::from_confusion(c)
}

/// One `name,accuracy,recall,precision,f1,fpr,tp,fp,tn,fn` row per entry.
pub fn write_metrics_csv<W: Write>(writer: W, rows: &[(String, Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "name", "accuracy", "recall", "precision", "f1", "fpr", "tp", "fp", "tn", "fn",
    ])?;
    for (name, m) in rows {
        let c = m.confusion;
        w.write_record([
            name.clone(),
            format!("{:.6}", m.accuracy),
            format!("{:.6}", m.recall),
            format!("{:.6}", m.precision),
            format!("{:.6}", m.f1),
            format!("{:.6}", m.false_positive_rate),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
