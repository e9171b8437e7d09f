//! Checkpoints and staged pretrain → fine-tune orchestration.

pub mod checkpoint;
pub mod plan;
pub mod run;
pub mod synthetic;

pub use checkpoint::{Checkpoint, CheckpointMeta, ModelKind};
pub use plan::{baseline_plan, build_ablation_plan, Budget, DatasetRole, Init, Stage, StageKind, StagePlan};
pub use run::{run_plan, run_stage, DataSource, PlanEnv, PlanOutcome, StageOutcome};
pub use synthetic::{synthetic_sources, SyntheticSizes};
