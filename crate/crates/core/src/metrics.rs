//! Binary classification metrics: accuracy, positive-class F1 and ROC AUC.

use crate::error::{Error, Result};

/// Positive-class probabilities with their {0, 1} labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

impl EvalBatch {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("evaluation batch"));
        }
        if scores.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Config(format!("score {s} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Config(format!("label {l} is not binary")));
        }
        Ok(EvalBatch { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn predictions(&self, threshold: f64) -> impl Iterator<Item = (u8, u8)> + '_ {
        self.scores
            .iter()
            .zip(&self.labels)
            .map(move |(&s, &l)| (u8::from(s >= threshold), l))
    }
}

/// Fraction of examples where (score ≥ threshold) agrees with the label.
pub fn accuracy(b: &EvalBatch, threshold: f64) -> f64 {
    let correct = b.predictions(threshold).filter(|(p, l)| p == l).count();
    correct as f64 / b.len() as f64
}

/// F1 of the positive class. Defined as 0 when there are no true positives,
/// which covers the case with neither positive predictions nor positive labels.
pub fn f1(b: &EvalBatch, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, l) in b.predictions(threshold) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Mann–Whitney AUC from midranks. Ties count one half.
///
/// The statistic is accumulated in doubled integer ranks, so the result is the
/// exact ratio (2·wins + ties) / (2·n₊·n₋).
pub fn auc(b: &EvalBatch) -> Result<f64> {
    let n_pos = b.labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = b.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..b.len()).collect();
    order.sort_by(|&i, &j| b.scores[i].total_cmp(&b.scores[j]));

    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && b.scores[order[end]] == b.scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share the doubled midrank start+1+end
        let doubled = (start + 1 + end) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| b.labels[i] == 1).count() as u64;
        doubled_rank_sum += doubled * pos_in_group;
        start = end;
    }
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Accuracy, F1 and AUC for one evaluation pass.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub f1: f64,
    /// `None` when the batch holds a single class.
    pub auc: Option<f64>,
}

pub fn evaluate(b: &EvalBatch, threshold: f64) -> Scores {
    Scores {
        acc: accuracy(b, threshold),
        f1: f1(b, threshold),
        auc: auc(b).ok(),
    }
}
