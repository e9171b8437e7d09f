use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Scores;

/// One epoch's outcome. Evaluation fields are empty when no eval split ran.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub eval_loss: Option<f64>,
    pub scores: Option<Scores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stage: String,
    pub seed: u64,
    /// Effective configuration of the run, frozen at creation.
    pub config: serde_json::Value,
    rows: Vec<EpochRecord>,
}

pub const CSV_HEADER: &str = "epoch,stage,lr,loss,acc,f1,auc";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunReport {
    pub fn new(stage: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        RunReport {
            stage: stage.into(),
            seed,
            config,
            rows: Vec::new(),
        }
    }

    pub fn rows(&self) -> &[EpochRecord] {
        &self.rows
    }

    pub fn push(&mut self, row: EpochRecord) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::Config(format!(
                    "report epochs must increase: {} after {}",
                    row.epoch, last.epoch
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.rows.last()
    }

    /// Accuracy of the last epoch and the best accuracy over all epochs.
    pub fn final_and_best_acc(&self) -> Option<(f64, f64)> {
        let accs: Vec<f64> = self.rows.iter().filter_map(|r| r.scores.map(|s| s.acc)).collect();
        let last = *accs.last()?;
        Some((last, accs.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
    }

    /// First epoch whose eval loss is at or below `threshold`.
    pub fn epochs_to_eval_loss(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.eval_loss.is_some_and(|l| l <= threshold))
            .map(|r| r.epoch)
    }

    /// One line per epoch under [`CSV_HEADER`]; unevaluated fields are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let s = r.scores;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                self.stage,
                r.lr,
                r.loss,
                opt(s.map(|s| s.acc)),
                opt(s.map(|s| s.f1)),
                opt(s.and_then(|s| s.auc)),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, acc: Option<f64>) -> EpochRecord {
        EpochRecord {
            epoch,
            lr: 1e-4,
            loss: 0.5,
            eval_loss: acc.map(|a| 1.0 - a),
            scores: acc.map(|acc| Scores { acc, f1: 0.25, auc: None }),
        }
    }

    #[test]
    fn csv_layout() {
        let mut r = RunReport::new("s1", 3, serde_json::json!({}));
        r.push(row(0, None)).unwrap();
        r.push(row(1, Some(0.75))).unwrap();
        assert_eq!(
            r.to_csv(),
            "epoch,stage,lr,loss,acc,f1,auc\n0,s1,0.0001,0.5,,,\n1,s1,0.0001,0.5,0.75,0.25,\n"
        );
    }

    #[test]
    fn epochs_must_increase() {
        let mut r = RunReport::new("s", 0, serde_json::Value::Null);
        r.push(row(2, None)).unwrap();
        assert!(r.push(row(2, None)).is_err());
        assert!(r.push(row(1, None)).is_err());
    }

    #[test]
    fn acc_summaries() {
        let mut r = RunReport::new("s", 0, serde_json::Value::Null);
        for (e, a) in [0.5, 0.9, 0.8].into_iter().enumerate() {
            r.push(row(e, Some(a))).unwrap();
        }
        assert_eq!(r.final_and_best_acc(), Some((0.8, 0.9)));
        assert_eq!(r.epochs_to_eval_loss(0.15), Some(1));
        assert_eq!(r.epochs_to_eval_loss(0.05), None);
    }
}
