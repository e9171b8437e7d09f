//! The `maeforge` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 flag parse error, 3 invalid
//! configuration or input. Failures print one line to stderr of the form
//! `error[<kind>]: <message>`.

pub mod settings;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_manifest, synth_dataset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::mae::{masked_image, reconstruct_image, ReconstructMode};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::patcher;
use crate::pipelines::{
    build_ablation_plan, run_plan, synthetic_sources, Checkpoint, DataSource, DatasetRole, Init, ModelKind,
    PlanEnv, PlanOutcome, Stage, StageKind, StagePlan, SyntheticSizes,
};
use crate::real::{Precision, Real};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::training::{evaluate_classifier, fit_side};
pub use settings::{Resolved, Settings, SEED_ENV};

#[derive(Parser, Debug)]
#[command(name = "maeforge", version, about = "Masked-autoencoder pretraining and transfer-learning runs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Masked-reconstruction pretraining on an unlabeled manifest
    Pretrain(PretrainArgs),
    /// Supervised fine-tuning, from scratch or from a checkpoint
    Finetune(FinetuneArgs),
    /// Run one of the five built-in ablation plans
    Ablate(AblateArgs),
    /// Accuracy, F1 and AUC of a classifier checkpoint on a labeled manifest
    Evaluate(EvaluateArgs),
    /// Write original / masked / reconstructed image triplets
    Inspect(InspectArgs),
    /// Finite-difference check of every gradient
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PretrainArgs {
    /// File of `key = value` lines, one per long flag
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Manifest of training images (labels are ignored)
    #[arg(long, value_name = "CSV")]
    pub train: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading one; implies desk scale
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub synthetic: Option<bool>,
    /// Checkpoint to continue from
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
    /// Name of the run directory under --out
    #[arg(long)]
    pub run_id: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub settings: Settings,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FinetuneArgs {
    /// File of `key = value` lines, one per long flag
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Labeled training manifest
    #[arg(long, value_name = "CSV")]
    pub train: Option<PathBuf>,
    /// Labeled evaluation manifest
    #[arg(long, value_name = "CSV")]
    pub eval: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading one; implies desk scale
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub synthetic: Option<bool>,
    /// Checkpoint whose encoder initializes the model; the head is always fresh
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
    /// Name of the run directory under --out
    #[arg(long)]
    pub run_id: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub settings: Settings,
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AblateArgs {
    /// File of `key = value` lines, one per long flag
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Ablation test number
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub test: Option<u8>,
    /// Generate synthetic corpora for every role; implies desk scale
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub synthetic: Option<bool>,
    /// Unlabeled generic-domain manifest
    #[arg(long, value_name = "CSV")]
    pub generic: Option<PathBuf>,
    /// Unlabeled target-modality manifest
    #[arg(long, value_name = "CSV")]
    pub target_adjacent: Option<PathBuf>,
    /// First downstream task, training manifest
    #[arg(long, value_name = "CSV")]
    pub downstream: Option<PathBuf>,
    /// First downstream task, evaluation manifest
    #[arg(long, value_name = "CSV")]
    pub downstream_eval: Option<PathBuf>,
    /// Second downstream task, training manifest
    #[arg(long, value_name = "CSV")]
    pub downstream_2: Option<PathBuf>,
    /// Second downstream task, evaluation manifest
    #[arg(long, value_name = "CSV")]
    pub downstream_2_eval: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub settings: Settings,
}

#[derive(Args, Clone, Debug, PartialEq)]
pub struct EvaluateArgs {
    /// Classifier checkpoint
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Labeled manifest
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    /// Decision threshold on the positive-class probability
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "f64")]
    pub precision: Precision,
}

#[derive(Args, Clone, Debug, PartialEq)]
pub struct InspectArgs {
    /// MAE checkpoint
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Manifest of images to reconstruct
    #[arg(long, value_name = "CSV")]
    pub manifest: PathBuf,
    /// Number of images, taken from the top of the manifest
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Directory for the PGM triplets
    #[arg(long, value_name = "DIR", default_value = "inspect")]
    pub out: PathBuf,
    /// Seed for the masks; falls back to $MAEFORGE_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep the true pixels at visible positions or show predictions everywhere
    #[arg(long, value_enum, default_value = "paste-visible")]
    pub mode: ReconstructModeArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconstructModeArg {
    PasteVisible,
    PredEverywhere,
}

#[derive(Args, Clone, Debug, PartialEq)]
pub struct GradcheckArgs {
    /// Print every check, not only failures and the summary
    #[arg(long)]
    pub verbose: bool,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        3
    } else {
        1
    }
}

fn report_error(e: &Error) -> i32 {
    let kind = if e.is_validation() { "validation" } else { "runtime" };
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error[{kind}]: {msg}");
    exit_code(e)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match execute(cli.command, env_seed.as_deref()) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

/// Long flag names a subcommand accepts, minus `config` and `help`.
pub fn flag_names(sub: &str) -> Vec<String> {
    let cmd = Cli::command();
    let Some(sc) = cmd.find_subcommand(sub) else {
        return Vec::new();
    };
    sc.get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|l| l != "config" && l != "help")
        .collect()
}

/// Merges a config file (when given) beneath the command-line values.
fn layered<A>(sub: &str, cli: &A, config: Option<&Path>, pick: fn(Command) -> Option<A>) -> Result<A>
where
    A: Serialize + for<'de> Deserialize<'de>,
{
    let Some(path) = config else {
        return settings::overlay(cli, cli);
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut argv = vec!["maeforge".to_string(), sub.to_string()];
    argv.extend(settings::config_tokens(&text, path, &flag_names(sub))?);
    let parsed = Cli::try_parse_from(&argv)
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.kind())))?;
    let from_file = pick(parsed.command).ok_or_else(|| Error::Config("config parsed as another command".into()))?;
    settings::overlay(&from_file, cli)
}

fn execute(command: Command, env_seed: Option<&str>) -> Result<()> {
    match command {
        Command::Pretrain(a) => {
            let a = layered("pretrain", &a, a.config.as_deref(), |c| match c {
                Command::Pretrain(x) => Some(x),
                _ => None,
            })?;
            cmd_pretrain(a, env_seed)
        }
        Command::Finetune(a) => {
            let a = layered("finetune", &a, a.config.as_deref(), |c| match c {
                Command::Finetune(x) => Some(x),
                _ => None,
            })?;
            cmd_finetune(a, env_seed)
        }
        Command::Ablate(a) => {
            let a = layered("ablate", &a, a.config.as_deref(), |c| match c {
                Command::Ablate(x) => Some(x),
                _ => None,
            })?;
            cmd_ablate(a, env_seed)
        }
        Command::Evaluate(a) => match a.precision {
            Precision::F32 => cmd_evaluate::<f32>(&a),
            Precision::F64 => cmd_evaluate::<f64>(&a),
        },
        Command::Inspect(a) => {
            let seed = resolve_seed(a.seed, env_seed)?;
            cmd_inspect(&a, seed)
        }
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn resolve_seed(flag: Option<u64>, env_seed: Option<&str>) -> Result<u64> {
    Settings {
        seed: flag,
        ..Default::default()
    }
    .resolve(true, env_seed)
    .map(|r| r.seed)
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| Error::Config(format!("--{flag} is required unless --synthetic is set")))
}

fn plan_env(r: &Resolved, datasets: std::collections::BTreeMap<DatasetRole, DataSource>) -> PlanEnv {
    PlanEnv {
        datasets,
        model: r.model.clone(),
        ssl: r.ssl.clone(),
        finetune: r.finetune.clone(),
        linear_probe: r.linear_probe,
        seed: r.seed,
        out_dir: r.out.clone(),
    }
}

fn run_any(plan: &StagePlan, env: &PlanEnv, precision: Precision) -> Result<PlanOutcome> {
    match precision {
        Precision::F32 => run_plan::<f32>(plan, env),
        Precision::F64 => run_plan::<f64>(plan, env),
    }
}

/// Records the fully resolved settings next to the run so it can be replayed
/// with `--config <plan-dir>/effective.conf`.
fn echo_effective<A: Serialize>(args: &A, r: &Resolved, plan_dir: &Path) -> Result<()> {
    let mut text = settings::to_config_lines(args);
    for (k, v) in [
        ("seed", r.seed.to_string()),
        ("desk-scale", r.desk_scale.to_string()),
        ("precision", r.precision.to_string()),
    ] {
        if !text.lines().any(|l| l.starts_with(&format!("{k} ="))) {
            text.push_str(&format!("{k} = {v}\n"));
        }
    }
    let path = plan_dir.join("effective.conf");
    fs::write(&path, &text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    println!("effective config: {}", path.display());
    Ok(())
}

fn summarize(outcome: &PlanOutcome) {
    for s in &outcome.stages {
        let Some(last) = s.report.last() else { continue };
        let mut line = format!("stage {}: epochs={} loss={:.6}", s.stage.id, s.report.rows().len(), last.loss);
        if let (Some(sc), Some((fin, best))) = (last.scores, s.report.final_and_best_acc()) {
            line.push_str(&format!(" acc={fin:.4} best-acc={best:.4} f1={:.4}", sc.f1));
            match sc.auc {
                Some(a) => line.push_str(&format!(" auc={a:.4}")),
                None => line.push_str(" auc=undefined"),
            }
        }
        println!("{line}");
    }
    println!("artifacts: {}", outcome.plan_dir.display());
}

fn single_stage_plan(id: String, kind: StageKind, role: DatasetRole, epochs: usize, init: &Option<PathBuf>) -> StagePlan {
    let stage_id = match kind {
        StageKind::SslPretrain => "ssl",
        StageKind::Finetune => "finetune",
    };
    StagePlan {
        id,
        stages: vec![Stage {
            id: stage_id.into(),
            kind,
            dataset: role,
            epochs,
            init: init.clone().map_or(Init::Random, Init::File),
            uses_labels: kind == StageKind::Finetune,
        }],
    }
}

fn cmd_pretrain(mut a: PretrainArgs, env_seed: Option<&str>) -> Result<()> {
    let synthetic = a.synthetic.unwrap_or(false);
    let r = a.settings.resolve(synthetic, env_seed)?;
    let id = a.run_id.clone().unwrap_or_else(|| "pretrain".into());
    let source = if synthetic {
        let dir = r.out.join(&id).join("data");
        let spec = SyntheticSpec::ct(r.model.image_side, 200, 0, r.seed);
        synth_dataset(&spec, &dir)?;
        DataSource {
            train: dir.join("train.csv"),
            eval: None,
        }
    } else {
        DataSource {
            train: required(&a.train, "train")?.clone(),
            eval: None,
        }
    };
    let role = DatasetRole::TargetAdjacent;
    let plan = single_stage_plan(id, StageKind::SslPretrain, role, r.budget.ssl_epochs, &a.init);
    let env = plan_env(&r, [(role, source)].into());
    let outcome = run_any(&plan, &env, r.precision)?;
    a.settings.seed = Some(r.seed);
    echo_effective(&a, &r, &outcome.plan_dir)?;
    summarize(&outcome);
    Ok(())
}

fn cmd_finetune(mut a: FinetuneArgs, env_seed: Option<&str>) -> Result<()> {
    let synthetic = a.synthetic.unwrap_or(false);
    let r = a.settings.resolve(synthetic, env_seed)?;
    let id = a.run_id.clone().unwrap_or_else(|| "finetune".into());
    let source = if synthetic {
        let dir = r.out.join(&id).join("data");
        let spec = SyntheticSpec::ct(r.model.image_side, 200, 100, r.seed);
        synth_dataset(&spec, &dir)?;
        DataSource {
            train: dir.join("train.csv"),
            eval: Some(dir.join("test.csv")),
        }
    } else {
        DataSource {
            train: required(&a.train, "train")?.clone(),
            eval: Some(required(&a.eval, "eval")?.clone()),
        }
    };
    let role = DatasetRole::Downstream;
    let plan = single_stage_plan(id, StageKind::Finetune, role, r.budget.finetune_epochs, &a.init);
    let env = plan_env(&r, [(role, source)].into());
    let outcome = run_any(&plan, &env, r.precision)?;
    a.settings.seed = Some(r.seed);
    echo_effective(&a, &r, &outcome.plan_dir)?;
    summarize(&outcome);
    Ok(())
}

fn cmd_ablate(mut a: AblateArgs, env_seed: Option<&str>) -> Result<()> {
    let test = a.test.ok_or_else(|| Error::Config("--test is required".into()))?;
    let synthetic = a.synthetic.unwrap_or(false);
    let r = a.settings.resolve(synthetic, env_seed)?;
    let plan = build_ablation_plan(test, &r.budget)?;
    let datasets = if synthetic {
        let sizes = SyntheticSizes {
            side: r.model.image_side,
            ..Default::default()
        };
        synthetic_sources(&r.out.join(&plan.id).join("data"), sizes, r.seed)?
    } else {
        let mut m = std::collections::BTreeMap::new();
        let pairs = [
            (DatasetRole::Generic, &a.generic, &None),
            (DatasetRole::TargetAdjacent, &a.target_adjacent, &None),
            (DatasetRole::Downstream, &a.downstream, &a.downstream_eval),
            (DatasetRole::Downstream2, &a.downstream_2, &a.downstream_2_eval),
        ];
        for (role, train, eval) in pairs {
            if let Some(t) = train {
                m.insert(
                    role,
                    DataSource {
                        train: t.clone(),
                        eval: eval.clone(),
                    },
                );
            }
        }
        m
    };
    let env = plan_env(&r, datasets);
    let outcome = run_any(&plan, &env, r.precision)?;
    a.settings.seed = Some(r.seed);
    echo_effective(&a, &r, &outcome.plan_dir)?;
    summarize(&outcome);
    Ok(())
}

fn cmd_evaluate<T: Real>(a: &EvaluateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if ck.meta.kind != ModelKind::Classifier {
        return Err(Error::Config(format!(
            "{} holds a {:?} checkpoint; evaluation needs a fine-tuned classifier",
            a.checkpoint.display(),
            ck.meta.kind
        )));
    }
    let n_classes = ck.meta.n_classes.unwrap_or(2);
    let model = ck.to_classifier::<T>(n_classes, &mut Rng::new(0))?;
    let data: Dataset<T> = Dataset::load(&load_manifest(&a.manifest)?)?;
    let labels: Vec<u8> = data.class_labels()?.into_iter().map(|l| l as u8).collect();
    let mut r = evaluate_classifier(&model, &data.images, &labels)?;
    if a.threshold != DEFAULT_THRESHOLD {
        let probs = crate::training::predict(&model, &data.images)?;
        let batch = crate::metrics::EvalBatch::new(probs.iter().map(|p| p[1]).collect(), labels)?;
        r.scores = crate::metrics::evaluate(&batch, a.threshold);
    }
    let auc = r.scores.auc.map_or("undefined".to_string(), |v| format!("{v:.6}"));
    println!(
        "n={} acc={:.6} f1={:.6} auc={auc} loss={:.6}",
        data.len(),
        r.scores.acc,
        r.scores.f1,
        r.loss
    );
    Ok(())
}

fn cmd_inspect(a: &InspectArgs, seed: u64) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.to_mae::<f64>()?;
    let manifest = load_manifest(&a.manifest)?.without_labels();
    let data: Dataset<f64> = Dataset::load(&manifest)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(format!("creating {}", a.out.display()), e))?;
    let mode = match a.mode {
        ReconstructModeArg::PasteVisible => ReconstructMode::PasteVisible,
        ReconstructModeArg::PredEverywhere => ReconstructMode::PredEverywhere,
    };
    let root = Rng::new(seed);
    for (i, img) in data.images.iter().take(a.count).enumerate() {
        let img = fit_side(img, model.cfg.image_side)?;
        let ps = model.patchify(&img)?;
        let plan = patcher::random_mask(ps.len(), model.cfg.mask_ratio, &mut root.derive(i as u64))?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let x = tape.constant(&ps.patches);
        let pred = model.forward_with_plan(&mut tape, &vars, x, &plan)?;
        let pred = tape.tensor(pred);
        let mse = masked_mse(&pred, &ps.patches, &plan);
        let triplet = [
            ("original", img.clone()),
            ("masked", masked_image(&ps, &plan, 0.0)),
            ("reconstructed", reconstruct_image(&pred, &plan, &ps, mode)?),
        ];
        for (tag, t) in triplet {
            let path = a.out.join(format!("{i:03}-{tag}.pgm"));
            fs::write(&path, crate::data::encode_pgm(&t)?)
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        println!("{i:03} masked={} masked-mse={mse:.6}", plan.masked_idx.len());
    }
    println!("triplets: {}", a.out.display());
    Ok(())
}

fn masked_mse(pred: &crate::Tensor<f64>, target: &crate::Tensor<f64>, plan: &patcher::MaskPlan) -> f64 {
    let d = target.shape()[1];
    let mut sum = 0.0;
    for &i in &plan.masked_idx {
        for (p, t) in pred.row(i).iter().zip(target.row(i)) {
            sum += (p - t) * (p - t);
        }
    }
    sum / (plan.masked_idx.len().max(1) * d) as f64
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let checks = gradcheck::suite()?;
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    for c in &checks {
        if a.verbose || !c.passed() {
            let status = if c.passed() { "ok" } else { "FAIL" };
            println!("{status} {} rel-err={:.3e} inputs={}", c.name, c.max_rel_err, c.probed);
        }
    }
    println!("checks: {}", checks.len());
    println!("max relative error: {worst:.3e} (tolerance {:.0e})", gradcheck::TOLERANCE);
    if worst <= gradcheck::TOLERANCE {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient(format!(
            "gradient check failed: max relative error {worst:.3e}"
        )))
    }
}
