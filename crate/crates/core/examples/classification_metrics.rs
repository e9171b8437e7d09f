//! Accuracy, positive-class F1 and rank-based AUC on a small batch.
//!
//! cargo run --example classification_metrics

use maeforge::metrics::{evaluate, EvalBatch, DEFAULT_THRESHOLD};

fn main() -> maeforge::Result<()> {
    let batch = EvalBatch::new(vec![0.9, 0.8, 0.7, 0.55, 0.3, 0.2, 0.2], vec![1, 1, 0, 1, 0, 1, 0])?;
    let s = evaluate(&batch, DEFAULT_THRESHOLD);
    println!("acc {:.4}  f1 {:.4}  auc {:?}", s.acc, s.f1, s.auc);

    // a single-class batch has no AUC
    let one_class = EvalBatch::new(vec![0.4, 0.6], vec![1, 1])?;
    println!("single class: {:?}", evaluate(&one_class, DEFAULT_THRESHOLD).auc);
    Ok(())
}
