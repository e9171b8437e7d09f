use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mae::MaeModel;
use crate::metrics::{self, EvalBatch, Scores};
use crate::params::ParamTree;
use crate::patcher::{self, MaskPlan};
use crate::real::Real;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::training::adam::{AdamConfig, AdamState};
use crate::training::augment::{augment, fit_side, AugmentConfig};
use crate::training::schedule::{cosine_lr, ScheduleConfig};
use crate::vit::Classifier;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Pretrain,
    Finetune,
    LinearProbe,
}

/// When the MAE mask is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPolicy {
    /// Fresh mask for every image at every step.
    #[default]
    PerStep,
    /// One mask per dataset index, reused across epochs.
    FixedPerImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub mask_policy: MaskPolicy,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(out_side: usize, batch_size: usize) -> Self {
        TrainConfig {
            batch_size,
            augment: AugmentConfig::new(out_side),
            mask_policy: MaskPolicy::PerStep,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.augment.validate()?;
        self.schedule.validate()
    }
}

/// A model a training epoch can drive.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T: Real = f64> {
    Mae(MaeModel<T>),
    Classifier(Classifier<T>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-image training loss over the epoch.
    pub loss: f64,
    pub steps: usize,
}

const SHUFFLE: u64 = 0;
const ITEMS: u64 = 1;
const FIXED_MASK: u64 = 2;

/// Input side and patch size a classifier was built for. Grayscale only.
pub fn classifier_geometry<T: Real>(model: &Classifier<T>) -> Result<(usize, usize)> {
    let dim = model.encoder.patch_embed.in_features();
    let p = (dim as f64).sqrt().round() as usize;
    let n = model.encoder.num_patches();
    let g = (n as f64).sqrt().round() as usize;
    if p * p != dim || g * g != n {
        return Err(Error::Config(format!(
            "classifier expects square grayscale patches on a square grid, got dim {dim} and {n} patches"
        )));
    }
    Ok((g * p, p))
}

/// Model-sized input: augmented when enabled, otherwise a deterministic resize.
fn prepare<T: Real>(image: &Tensor<T>, aug: &AugmentConfig, side: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    if aug.enabled {
        augment(image, &AugmentConfig { out_side: side, ..*aug }, rng)
    } else if image.shape()[0] == side && image.shape()[1] == side {
        Ok(image.clone())
    } else {
        fit_side(image, side)
    }
}

fn batches(n: usize, batch: usize, epoch: usize, rng: &Rng) -> Vec<Vec<usize>> {
    let order = rng.derive_path(&[epoch as u64, SHUFFLE]).permutation(n);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn draw_mask(policy: MaskPolicy, n: usize, ratio: f64, item: &mut Rng, root: &Rng, index: usize) -> Result<MaskPlan> {
    match policy {
        MaskPolicy::PerStep => patcher::random_mask(n, ratio, item),
        MaskPolicy::FixedPerImage => patcher::random_mask(n, ratio, &mut root.derive_path(&[FIXED_MASK, index as u64])),
    }
}

fn mean_loss<T: Real>(tape: &mut Tape<T>, losses: &[Var]) -> Result<Var> {
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    Ok(tape.scale(total, T::from_f64(1.0 / losses.len() as f64)))
}

fn apply_step<T: Real, P: ParamTree<T>>(
    tape: &mut Tape<T>,
    loss: Var,
    params: &mut P,
    opt: &mut AdamState,
    lr: f64,
) -> Result<f64> {
    let value = tape.scalar(loss).as_f64();
    tape.backward(loss)?;
    params.accumulate_grads("", &tape.param_grads())?;
    opt.step(params, lr)?;
    Ok(value)
}

/// One shuffled pass of masked-reconstruction training. Only images are
/// consumed; labels never reach this function.
pub fn pretrain_epoch<T: Real>(
    model: &mut MaeModel<T>,
    images: &[Tensor<T>],
    opt: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &Rng,
) -> Result<EpochStats> {
    if images.is_empty() {
        return Err(Error::Empty("pretraining dataset"));
    }
    cfg.validate()?;
    let lr = cosine_lr(epoch, &cfg.schedule);
    let n = model.cfg.num_patches();
    let mut sum = 0.0;
    let plan = batches(images.len(), cfg.batch_size, epoch, rng);
    for (b, batch) in plan.iter().enumerate() {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let mut losses = Vec::with_capacity(batch.len());
        for (k, &i) in batch.iter().enumerate() {
            let mut item = rng.derive_path(&[epoch as u64, ITEMS, b as u64, k as u64]);
            let img = prepare(&images[i], &cfg.augment, model.cfg.image_side, &mut item)?;
            let ps = model.patchify(&img)?;
            let mask = draw_mask(cfg.mask_policy, n, model.cfg.mask_ratio, &mut item, rng, i)?;
            losses.push(model.loss_with_plan(&mut tape, &vars, &ps, &mask)?);
        }
        let loss = mean_loss(&mut tape, &losses)?;
        sum += apply_step(&mut tape, loss, &mut model.params, opt, lr)? * batch.len() as f64;
    }
    Ok(EpochStats {
        epoch,
        lr,
        loss: sum / images.len() as f64,
        steps: plan.len(),
    })
}

/// One shuffled pass of cross-entropy training. With `freeze_encoder` only
/// the head moves.
#[allow(clippy::too_many_arguments)]
pub fn supervised_epoch<T: Real>(
    model: &mut Classifier<T>,
    images: &[Tensor<T>],
    labels: &[usize],
    freeze_encoder: bool,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &Rng,
) -> Result<EpochStats> {
    if images.is_empty() {
        return Err(Error::Empty("fine-tuning dataset"));
    }
    if images.len() != labels.len() {
        return Err(Error::Config(format!("{} images but {} labels", images.len(), labels.len())));
    }
    cfg.validate()?;
    let (side, p) = classifier_geometry(model)?;
    let lr = cosine_lr(epoch, &cfg.schedule);
    let mut sum = 0.0;
    let plan = batches(images.len(), cfg.batch_size, epoch, rng);
    for (b, batch) in plan.iter().enumerate() {
        let mut tape = Tape::new();
        let vars = model.bind_with(&mut tape, freeze_encoder);
        let mut losses = Vec::with_capacity(batch.len());
        for (k, &i) in batch.iter().enumerate() {
            let mut item = rng.derive_path(&[epoch as u64, ITEMS, b as u64, k as u64]);
            let img = prepare(&images[i], &cfg.augment, side, &mut item)?;
            let ps = patcher::patchify(&img, p)?;
            let x = tape.constant(&ps.patches);
            let logits = model.forward(&mut tape, &vars, x)?;
            losses.push(tape.softmax_cross_entropy(logits, &[labels[i]])?);
        }
        let loss = mean_loss(&mut tape, &losses)?;
        sum += apply_step(&mut tape, loss, model, opt, lr)? * batch.len() as f64;
    }
    Ok(EpochStats {
        epoch,
        lr,
        loss: sum / images.len() as f64,
        steps: plan.len(),
    })
}

/// Mode-dispatched epoch. Pretraining reads only the images of `data`.
pub fn train_epoch<T: Real>(
    model: &mut Model<T>,
    data: &Dataset<T>,
    mode: Mode,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &Rng,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    match (mode, model) {
        (Mode::Pretrain, Model::Mae(m)) => pretrain_epoch(m, &data.images, opt, cfg, epoch, rng),
        (Mode::Finetune | Mode::LinearProbe, Model::Classifier(c)) => {
            let labels = data.class_labels()?;
            supervised_epoch(c, &data.images, &labels, mode == Mode::LinearProbe, opt, cfg, epoch, rng)
        }
        (mode, _) => Err(Error::Config(format!("{mode:?} does not fit the supplied model"))),
    }
}

/// Positive-class probabilities for each image (deterministic resize, no augmentation).
pub fn predict<T: Real>(model: &Classifier<T>, images: &[Tensor<T>]) -> Result<Vec<[f64; 2]>> {
    let (side, p) = classifier_geometry(model)?;
    if model.head.n_classes() != 2 {
        return Err(Error::Config("prediction supports binary heads only".into()));
    }
    images
        .iter()
        .map(|img| {
            let img = prepare(img, &AugmentConfig::disabled(side), side, &mut Rng::new(0))?;
            let ps = patcher::patchify(&img, p)?;
            let mut tape = Tape::new();
            let vars = model.bind_with(&mut tape, true);
            let x = tape.constant(&ps.patches);
            let logits = model.forward(&mut tape, &vars, x)?;
            let l: Vec<f64> = tape.value(logits).iter().map(|v| v.as_f64()).collect();
            let m = l[0].max(l[1]);
            let (e0, e1) = ((l[0] - m).exp(), (l[1] - m).exp());
            Ok([e0 / (e0 + e1), e1 / (e0 + e1)])
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    /// Mean cross-entropy.
    pub loss: f64,
    pub scores: Scores,
}

pub fn evaluate_classifier<T: Real>(model: &Classifier<T>, images: &[Tensor<T>], labels: &[u8]) -> Result<EvalResult> {
    if images.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let probs = predict(model, images)?;
    let loss = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y as usize].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / probs.len() as f64;
    let batch = EvalBatch::new(probs.iter().map(|p| p[1]).collect(), labels.to_vec())?;
    Ok(EvalResult {
        loss,
        scores: metrics::evaluate(&batch, metrics::DEFAULT_THRESHOLD),
    })
}
