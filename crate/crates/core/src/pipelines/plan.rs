//! Declarative stage plans, including the five built-in ablation tests.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    SslPretrain,
    Finetune,
}

/// Which dataset a stage consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetRole {
    /// Broad natural-image style corpus.
    Generic,
    /// Unlabeled corpus from the target modality.
    TargetAdjacent,
    /// First downstream task.
    Downstream,
    /// Second downstream task.
    #[serde(rename = "downstream-2")]
    Downstream2,
}

impl DatasetRole {
    pub const ALL: [DatasetRole; 4] = [
        DatasetRole::Generic,
        DatasetRole::TargetAdjacent,
        DatasetRole::Downstream,
        DatasetRole::Downstream2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetRole::Generic => "generic",
            DatasetRole::TargetAdjacent => "target-adjacent",
            DatasetRole::Downstream => "downstream",
            DatasetRole::Downstream2 => "downstream-2",
        }
    }
}

impl fmt::Display for DatasetRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Random,
    /// Output of an earlier stage of the same plan, by index.
    Stage(usize),
    /// A checkpoint file produced elsewhere.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub id: String,
    pub kind: StageKind,
    pub dataset: DatasetRole,
    pub epochs: usize,
    pub init: Init,
    pub uses_labels: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub id: String,
    pub stages: Vec<Stage>,
}

/// Epoch budget per stage kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub ssl_epochs: usize,
    pub finetune_epochs: usize,
}

impl Budget {
    pub fn desk() -> Self {
        Budget {
            ssl_epochs: 10,
            finetune_epochs: 10,
        }
    }

    pub fn full_scale() -> Self {
        Budget {
            ssl_epochs: 1000,
            finetune_epochs: 1000,
        }
    }
}

impl StagePlan {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Plan("plan has no stages".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.kind == StageKind::SslPretrain && s.uses_labels {
                return Err(Error::Plan(format!("stage `{}`: pretraining cannot use labels", s.id)));
            }
            if s.kind == StageKind::Finetune && !s.uses_labels {
                return Err(Error::Plan(format!("stage `{}`: fine-tuning needs labels", s.id)));
            }
            if let Init::Stage(j) = s.init {
                if j >= i {
                    return Err(Error::Plan(format!("stage `{}` initializes from a later stage {j}", s.id)));
                }
            }
            if s.epochs == 0 {
                return Err(Error::Plan(format!("stage `{}` has zero epochs", s.id)));
            }
            if self.stages[..i].iter().any(|t| t.id == s.id) {
                return Err(Error::Plan(format!("duplicate stage id `{}`", s.id)));
            }
        }
        Ok(())
    }

    pub fn roles(&self) -> Vec<DatasetRole> {
        let mut r: Vec<_> = self.stages.iter().map(|s| s.dataset).collect();
        r.sort();
        r.dedup();
        r
    }

    /// Stage ids from the first stage through `index`, following init links.
    pub fn lineage(&self, index: usize) -> Vec<String> {
        let mut chain = vec![self.stages[index].id.clone()];
        let mut cur = index;
        while let Init::Stage(j) = self.stages[cur].init {
            chain.push(self.stages[j].id.clone());
            cur = j;
        }
        chain.reverse();
        chain
    }
}

fn ssl(dataset: DatasetRole, init: Init, b: &Budget) -> Stage {
    Stage {
        id: format!("ssl-{dataset}"),
        kind: StageKind::SslPretrain,
        dataset,
        epochs: b.ssl_epochs,
        init,
        uses_labels: false,
    }
}

fn finetune(dataset: DatasetRole, init: Init, b: &Budget) -> Stage {
    Stage {
        id: "finetune".into(),
        kind: StageKind::Finetune,
        dataset,
        epochs: b.finetune_epochs,
        init,
        uses_labels: true,
    }
}

/// The ablation protocol:
///
/// 1. random init, pretrain on the target-adjacent corpus, fine-tune downstream
/// 2. random init, pretrain on the generic corpus, fine-tune downstream
/// 3. generic, then target-adjacent pretraining, fine-tune downstream
/// 4. generic, then unlabeled downstream pretraining, fine-tune downstream
/// 5. as 4, on the second downstream task
pub fn build_ablation_plan(test_id: u8, budget: &Budget) -> Result<StagePlan> {
    use DatasetRole::*;
    let b = budget;
    let stages = match test_id {
        1 => vec![ssl(TargetAdjacent, Init::Random, b), finetune(Downstream, Init::Stage(0), b)],
        2 => vec![ssl(Generic, Init::Random, b), finetune(Downstream, Init::Stage(0), b)],
        3 => vec![
            ssl(Generic, Init::Random, b),
            ssl(TargetAdjacent, Init::Stage(0), b),
            finetune(Downstream, Init::Stage(1), b),
        ],
        4 | 5 => {
            let task = if test_id == 4 { Downstream } else { Downstream2 };
            vec![
                ssl(Generic, Init::Random, b),
                ssl(task, Init::Stage(0), b),
                finetune(task, Init::Stage(1), b),
            ]
        }
        _ => return Err(Error::Plan(format!("unknown ablation test {test_id}; expected 1 to 5"))),
    };
    let plan = StagePlan {
        id: format!("test-{test_id}"),
        stages,
    };
    plan.validate()?;
    Ok(plan)
}

/// Plain supervised training from random init on one downstream task.
pub fn baseline_plan(dataset: DatasetRole, budget: &Budget) -> StagePlan {
    StagePlan {
        id: format!("baseline-{dataset}"),
        stages: vec![finetune(dataset, Init::Random, budget)],
    }
}
