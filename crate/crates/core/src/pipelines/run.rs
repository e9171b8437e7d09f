//! Executes stage plans and lays out their artifacts as
//! `<root>/<plan-id>/<stage-id>/{checkpoint.bin, report.csv, report.json}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{load_manifest, Dataset};
use crate::error::{Error, Result};
use crate::mae::{MaeConfig, MaeModel};
use crate::pipelines::checkpoint::{Checkpoint, CheckpointMeta, ModelKind};
use crate::pipelines::plan::{DatasetRole, Init, Stage, StageKind, StagePlan};
use crate::real::Real;
use crate::rng::Rng;
use crate::training::{
    evaluate_classifier, pretrain_epoch, supervised_epoch, AdamState, EpochRecord, RunReport, TrainConfig,
};
use crate::vit::Classifier;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub train: PathBuf,
    /// Held-out manifest; required for fine-tuning stages.
    pub eval: Option<PathBuf>,
}

/// Everything a plan needs besides the plan itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEnv {
    pub datasets: BTreeMap<DatasetRole, DataSource>,
    pub model: MaeConfig,
    pub ssl: TrainConfig,
    pub finetune: TrainConfig,
    /// Fine-tune stages train only the head.
    pub linear_probe: bool,
    pub seed: u64,
    /// Root under which `<plan-id>/` is created.
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    pub report: RunReport,
    pub checkpoint: Checkpoint,
    pub dir: PathBuf,
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub plan_dir: PathBuf,
    pub stages: Vec<StageOutcome>,
}

impl PlanOutcome {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        &self.stages.last().expect("validated plans have stages").checkpoint
    }

    pub fn final_report(&self) -> &RunReport {
        &self.stages.last().expect("validated plans have stages").report
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

impl PlanEnv {
    fn source(&self, role: DatasetRole) -> Result<&DataSource> {
        self.datasets
            .get(&role)
            .ok_or_else(|| Error::Plan(format!("no dataset supplied for role `{role}`")))
    }

    /// Fails early when a plan names a dataset the environment lacks.
    pub fn check(&self, plan: &StagePlan) -> Result<()> {
        plan.validate()?;
        self.model.validate()?;
        self.ssl.validate()?;
        self.finetune.validate()?;
        for s in &plan.stages {
            let src = self.source(s.dataset)?;
            if s.kind == StageKind::Finetune && src.eval.is_none() {
                return Err(Error::Plan(format!("stage `{}` needs an eval manifest for `{}`", s.id, s.dataset)));
            }
        }
        Ok(())
    }
}

fn init_checkpoint<'a>(init: &Init, done: &'a [StageOutcome], owned: &'a mut Option<Checkpoint>) -> Result<Option<&'a Checkpoint>> {
    Ok(match init {
        Init::Random => None,
        Init::Stage(j) => Some(&done[*j].checkpoint),
        Init::File(path) => Some(owned.insert(Checkpoint::load(path)?)),
    })
}

fn stage_config(stage: &Stage, env: &PlanEnv, train: &TrainConfig) -> serde_json::Value {
    json!({
        "stage": stage,
        "model": env.model,
        "train": train,
        "linear_probe": env.linear_probe,
        "seed": env.seed,
    })
}

/// Runs one stage given the outcomes of the stages before it.
pub fn run_stage<T: Real>(plan: &StagePlan, index: usize, env: &PlanEnv, done: &[StageOutcome]) -> Result<StageOutcome> {
    let stage = &plan.stages[index];
    let root = Rng::new(env.seed).derive_path(&[index as u64]);
    let src = env.source(stage.dataset)?;
    let mut owned = None;
    let init = init_checkpoint(&stage.init, done, &mut owned)?;
    let mut lineage = init.map(|c| c.meta.lineage.clone()).unwrap_or_default();
    lineage.push(stage.id.clone());

    let (report, checkpoint) = match stage.kind {
        StageKind::SslPretrain => {
            // labels are dropped before any image is read
            let manifest = load_manifest(&src.train)?.without_labels();
            let data: Dataset<T> = Dataset::load(&manifest)?;
            let mut model = MaeModel::<T>::new(env.model.clone(), &mut root.derive(0))?;
            if let Some(ck) = init {
                ck.load_shared(&mut model.params)?;
            }
            let mut report = RunReport::new(&stage.id, env.seed, stage_config(stage, env, &env.ssl));
            let mut opt = AdamState::new(env.ssl.adam);
            let train_rng = root.derive(1);
            for epoch in 0..stage.epochs {
                let s = pretrain_epoch(&mut model, &data.images, &mut opt, &env.ssl, epoch, &train_rng)?;
                report.push(EpochRecord {
                    epoch,
                    lr: s.lr,
                    loss: s.loss,
                    eval_loss: None,
                    scores: None,
                })?;
            }
            let meta = CheckpointMeta {
                kind: ModelKind::Mae,
                config: env.model.clone(),
                n_classes: None,
                lineage,
                seed: env.seed,
            };
            (report, Checkpoint::from_params(&model.params, meta))
        }
        StageKind::Finetune => {
            let train: Dataset<T> = Dataset::load(&load_manifest(&src.train)?)?;
            let eval_path = src.eval.as_ref().ok_or_else(|| Error::Plan(format!("no eval manifest for `{}`", stage.dataset)))?;
            let eval: Dataset<T> = Dataset::load(&load_manifest(eval_path)?)?;
            let labels = train.class_labels()?;
            let eval_labels: Vec<u8> = eval.class_labels()?.into_iter().map(|l| l as u8).collect();
            // the head always starts from fresh random weights
            let mut head_rng = root.derive(2);
            let mut model: Classifier<T> = match init {
                None => {
                    let cfg = &env.model;
                    Classifier::new(cfg.patch_dim(), cfg.grid(), 2, &cfg.encoder, &mut head_rng)?
                }
                Some(ck) => {
                    let mut enc_only = ck.encoder_only();
                    enc_only.meta.config = env.model.clone();
                    enc_only.to_classifier(2, &mut head_rng)?
                }
            };
            let mut report = RunReport::new(&stage.id, env.seed, stage_config(stage, env, &env.finetune));
            let mut opt = AdamState::new(env.finetune.adam);
            let train_rng = root.derive(1);
            for epoch in 0..stage.epochs {
                let s = supervised_epoch(
                    &mut model,
                    &train.images,
                    &labels,
                    env.linear_probe,
                    &mut opt,
                    &env.finetune,
                    epoch,
                    &train_rng,
                )?;
                let r = evaluate_classifier(&model, &eval.images, &eval_labels)?;
                report.push(EpochRecord {
                    epoch,
                    lr: s.lr,
                    loss: s.loss,
                    eval_loss: Some(r.loss),
                    scores: Some(r.scores),
                })?;
            }
            let meta = CheckpointMeta {
                kind: ModelKind::Classifier,
                config: env.model.clone(),
                n_classes: Some(2),
                lineage,
                seed: env.seed,
            };
            (report, Checkpoint::from_params(&model, meta))
        }
    };

    let dir = env.out_dir.join(&plan.id).join(&stage.id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    checkpoint.save(&dir.join("checkpoint.bin"))?;
    write(&dir.join("report.csv"), report.to_csv())?;
    let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Plan(e.to_string()))?;
    write(&dir.join("report.json"), json)?;
    Ok(StageOutcome {
        stage: stage.clone(),
        report,
        checkpoint,
        dir,
    })
}

/// Runs every stage in order. A failing stage aborts the plan; artifacts of
/// the stages already finished stay on disk.
pub fn run_plan<T: Real>(plan: &StagePlan, env: &PlanEnv) -> Result<PlanOutcome> {
    env.check(plan)?;
    let plan_dir = env.out_dir.join(&plan.id);
    fs::create_dir_all(&plan_dir).map_err(|e| Error::io(format!("creating {}", plan_dir.display()), e))?;
    let snapshot = serde_json::to_vec_pretty(&json!({ "plan": plan, "env": env })).map_err(|e| Error::Plan(e.to_string()))?;
    write(&plan_dir.join("plan.json"), snapshot)?;
    let mut stages = Vec::with_capacity(plan.stages.len());
    for i in 0..plan.stages.len() {
        let outcome = run_stage::<T>(plan, i, env, &stages)?;
        stages.push(outcome);
    }
    Ok(PlanOutcome { plan_dir, stages })
}
