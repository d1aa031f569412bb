//! Confusion counts and per-class precision / recall / F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Probabilities at or above this count as plume detections.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    /// Metrics of one class from its own true/false positives and false
    /// negatives.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        ClassMetrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub plume: ClassMetrics,
    pub background: ClassMetrics,
}

impl EvalResult {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64, threshold: f64) -> Self {
        EvalResult {
            threshold,
            tp,
            fp,
            fn_,
            tn,
            plume: ClassMetrics::from_counts(tp, fp, fn_),
            // For the background class the roles of the counts swap.
            background: ClassMetrics::from_counts(tn, fn_, fp),
        }
    }

    pub fn macro_f1(&self) -> f64 {
        0.5 * (self.plume.f1 + self.background.f1)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.fp + self.fn_ + self.tn)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// A tile is predicted positive when its probability is at least `threshold`.
pub fn evaluate(probabilities: &[f64], labels: &[bool], threshold: f64) -> Result<EvalResult> {
    if probabilities.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::Data(
            "cannot evaluate an empty prediction set".into(),
        ));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &l) in probabilities.iter().zip(labels) {
        match (p >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(EvalResult::from_counts(tp, fp, fn_, tn, threshold))
}
