//! Prints the stage sequence of each built-in ablation test.
//!
//! cargo run --example ablation_plans

use maeforge::pipelines::{build_ablation_plan, Budget, Init};

fn main() -> maeforge::Result<()> {
    for test in 1..=5 {
        let plan = build_ablation_plan(test, &Budget::desk())?;
        println!("{}:", plan.id);
        for (i, s) in plan.stages.iter().enumerate() {
            let init = match &s.init {
                Init::Random => "random".to_string(),
                Init::Stage(j) => format!("from {}", plan.stages[*j].id),
                Init::File(p) => format!("from {}", p.display()),
            };
            let labels = if s.uses_labels { "labels" } else { "no labels" };
            println!("  {i}. {:<20} {:<16} {init:<24} {labels}", s.id, s.dataset.as_str());
        }
    }
    Ok(())
}
