//! Random-init fine-tuning against SSL-init fine-tuning (ablation Test 1) on
//! the synthetic corpora, printing the per-epoch eval loss of each.
//!
//! cargo run --release --example transfer_finetune

use maeforge::mae::{MaeConfig, TargetNorm};
use maeforge::pipelines::{
    baseline_plan, build_ablation_plan, run_plan, synthetic_sources, Budget, DatasetRole, PlanEnv, PlanOutcome,
    SyntheticSizes,
};
use maeforge::training::TrainConfig;

fn curve(o: &PlanOutcome) -> String {
    let r = o.final_report();
    r.rows().iter().map(|row| format!("{:.3}", row.eval_loss.unwrap_or(f64::NAN))).collect::<Vec<_>>().join(" ")
}

fn main() -> maeforge::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut ssl = TrainConfig::new(32, 8);
    ssl.schedule.base_lr = 1e-3;
    let env = PlanEnv {
        datasets: synthetic_sources(&dir.path().join("data"), SyntheticSizes::default(), 0)?,
        model: MaeConfig {
            target_norm: TargetNorm::PerPatch,
            ..MaeConfig::desk()
        },
        ssl,
        finetune: TrainConfig::new(32, 8),
        linear_probe: false,
        seed: 0,
        out_dir: dir.path().join("runs"),
    };
    let budget = Budget {
        ssl_epochs: 10,
        finetune_epochs: 6,
    };
    let random = run_plan::<f32>(&baseline_plan(DatasetRole::Downstream, &budget), &env)?;
    let pretrained = run_plan::<f32>(&build_ablation_plan(1, &budget)?, &env)?;
    println!("eval loss, random init: {}", curve(&random));
    println!("eval loss, ssl init:    {}", curve(&pretrained));
    if let Some((last, best)) = pretrained.final_report().final_and_best_acc() {
        println!("ssl-init accuracy: final {last:.3}, best {best:.3}");
    }
    Ok(())
}
