//! Layered settings: built-in defaults < `key = value` config file < flags.
//! Config keys are exactly the long flag names of the subcommand.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mae::{LossScope, MaeConfig, TargetNorm};
use crate::pipelines::Budget;
use crate::real::Precision;
use crate::training::{AdamConfig, AugmentConfig, MaskPolicy, ScheduleConfig, TrainConfig};
use crate::vit::{NormStyle, Pool, PosEmbedding};

pub const SEED_ENV: &str = "MAEFORGE_SEED";

/// Model and training knobs shared by the training subcommands. Every field
/// is optional so that layers can be merged; unset fields take the defaults
/// of the selected scale.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Settings {
    /// Small desk-scale defaults instead of the full-size ones
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub desk_scale: Option<bool>,
    /// Master seed; falls back to $MAEFORGE_SEED, then 0
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arithmetic precision of training
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Root directory for run artifacts
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Square input side in pixels
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Encoder depth
    #[arg(long)]
    pub depth: Option<usize>,
    /// Encoder width
    #[arg(long)]
    pub width: Option<usize>,
    /// Encoder attention heads
    #[arg(long)]
    pub heads: Option<usize>,
    /// FFN hidden width as a multiple of the model width
    #[arg(long)]
    pub ffn_mult: Option<usize>,
    #[arg(long)]
    pub norm_style: Option<NormStyle>,
    #[arg(long)]
    pub pool: Option<Pool>,
    #[arg(long)]
    pub pos_embedding: Option<PosEmbedding>,
    #[arg(long)]
    pub decoder_depth: Option<usize>,
    #[arg(long)]
    pub decoder_width: Option<usize>,
    #[arg(long)]
    pub decoder_heads: Option<usize>,
    /// Fraction of patches hidden from the encoder
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Which patches the reconstruction loss covers
    #[arg(long)]
    pub loss_scope: Option<LossScope>,
    /// Reconstruction target normalization
    #[arg(long)]
    pub target_norm: Option<TargetNorm>,

    /// Epochs per pretraining stage
    #[arg(long)]
    pub ssl_epochs: Option<usize>,
    /// Epochs per fine-tuning stage
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// Initial (peak) learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate floor of the cosine schedule
    #[arg(long)]
    pub eta_min: Option<f64>,
    /// Epochs from peak to floor of the cosine schedule
    #[arg(long)]
    pub half_period: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Random crop-and-resize augmentation
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub augment: Option<bool>,
    /// Smallest crop area fraction
    #[arg(long)]
    pub crop_min: Option<f64>,
    /// Largest crop area fraction
    #[arg(long)]
    pub crop_max: Option<f64>,
    /// Fresh mask every step or one fixed mask per image
    #[arg(long)]
    pub mask_policy: Option<MaskPolicy>,
    /// Fine-tune only the classification head
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub linear_probe: Option<bool>,
}

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub desk_scale: bool,
    pub seed: u64,
    pub precision: Precision,
    pub out: PathBuf,
    pub model: MaeConfig,
    pub budget: Budget,
    pub ssl: TrainConfig,
    pub finetune: TrainConfig,
    pub linear_probe: bool,
}

impl Settings {
    /// Resolves against the defaults of the chosen scale. `implied_desk`
    /// selects desk scale when the flag is absent (synthetic corpora).
    pub fn resolve(&self, implied_desk: bool, env_seed: Option<&str>) -> Result<Resolved> {
        let desk = self.desk_scale.unwrap_or(implied_desk);
        let seed = match (self.seed, env_seed) {
            (Some(s), _) => s,
            (None, Some(v)) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?,
            (None, None) => 0,
        };
        let mut model = if desk { MaeConfig::desk() } else { MaeConfig::full_scale() };
        let budget = if desk { Budget::desk() } else { Budget::full_scale() };
        let batch = if desk { 8 } else { 32 };

        macro_rules! set {
            ($($dst:expr => $src:ident),* $(,)?) => { $( if let Some(v) = self.$src { $dst = v; } )* };
        }
        set!(
            model.image_side => image_side,
            model.patch_size => patch_size,
            model.encoder.depth => depth,
            model.encoder.width => width,
            model.encoder.heads => heads,
            model.encoder.ffn_mult => ffn_mult,
            model.encoder.norm_style => norm_style,
            model.encoder.pool => pool,
            model.encoder.pos_embedding => pos_embedding,
            model.decoder_depth => decoder_depth,
            model.decoder_width => decoder_width,
            model.decoder_heads => decoder_heads,
            model.mask_ratio => mask_ratio,
            model.loss_scope => loss_scope,
            model.target_norm => target_norm,
        );
        model.validate()?;

        let mut budget = budget;
        let mut schedule = ScheduleConfig::default();
        let mut adam = AdamConfig::default();
        let mut augment = AugmentConfig::new(model.image_side);
        let mut batch_size = batch;
        let mut mask_policy = MaskPolicy::default();
        set!(
            budget.ssl_epochs => ssl_epochs,
            budget.finetune_epochs => finetune_epochs,
            schedule.base_lr => lr,
            schedule.eta_min => eta_min,
            schedule.half_period => half_period,
            adam.beta1 => beta1,
            adam.beta2 => beta2,
            adam.eps => adam_eps,
            augment.enabled => augment,
            augment.scale.0 => crop_min,
            augment.scale.1 => crop_max,
            batch_size => batch_size,
            mask_policy => mask_policy,
        );
        let train = TrainConfig {
            batch_size,
            augment,
            mask_policy,
            schedule,
            adam,
        };
        train.validate()?;
        if budget.ssl_epochs == 0 || budget.finetune_epochs == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        Ok(Resolved {
            desk_scale: desk,
            seed,
            precision: self.precision.unwrap_or_default(),
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("runs")),
            model,
            budget,
            // both stage kinds share one augmentation and optimizer setup
            ssl: train.clone(),
            finetune: train,
            linear_probe: self.linear_probe.unwrap_or(false),
        })
    }
}

/// Parses `key = value` lines (`#` starts a comment) into flag tokens,
/// rejecting keys outside `known`.
pub fn config_tokens(text: &str, path: &Path, known: &[String]) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), i + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}: expected `key = value`", at())))?;
        let (key, value) = (key.trim(), value.trim());
        if !known.iter().any(|k| k == key) {
            return Err(Error::Config(format!("{}: unknown key `{key}`", at())));
        }
        tokens.push(format!("--{key}"));
        tokens.push(value.to_string());
    }
    Ok(tokens)
}

/// Overlays every non-null field of `top` onto `base`; both must serialize
/// to JSON objects of the same type.
pub fn overlay<T: Serialize + for<'de> Deserialize<'de>>(base: &T, top: &T) -> Result<T> {
    let err = |e: serde_json::Error| Error::Config(format!("merging settings: {e}"));
    let mut b = serde_json::to_value(base).map_err(err)?;
    let t = serde_json::to_value(top).map_err(err)?;
    if let (Some(bo), Some(to)) = (b.as_object_mut(), t.as_object()) {
        for (k, v) in to {
            if !v.is_null() {
                bo.insert(k.clone(), v.clone());
            }
        }
    }
    serde_json::from_value(b).map_err(err)
}

/// Renders every set field as `key = value` lines, the inverse of
/// [`config_tokens`].
pub fn to_config_lines<T: Serialize>(value: &T) -> String {
    let mut out = String::new();
    if let Ok(serde_json::Value::Object(map)) = serde_json::to_value(value) {
        for (k, v) in map {
            let text = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {text}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_full_defaults() {
        let full = Settings::default().resolve(false, None).unwrap();
        assert_eq!(full.model, MaeConfig::full_scale());
        assert_eq!(full.ssl.batch_size, 32);
        assert_eq!(full.ssl.schedule.base_lr, 1e-4);
        assert_eq!(full.ssl.schedule.half_period, 10);
        let desk = Settings::default().resolve(true, None).unwrap();
        assert_eq!(desk.model, MaeConfig::desk());
        assert_eq!(desk.ssl.batch_size, 8);
        let forced = Settings {
            desk_scale: Some(false),
            ..Default::default()
        };
        assert!(!forced.resolve(true, None).unwrap().desk_scale);
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(Settings::default().resolve(true, None).unwrap().seed, 0);
        assert_eq!(Settings::default().resolve(true, Some("42")).unwrap().seed, 42);
        let s = Settings {
            seed: Some(7),
            ..Default::default()
        };
        assert_eq!(s.resolve(true, Some("42")).unwrap().seed, 7);
        assert!(Settings::default().resolve(true, Some("x")).is_err());
    }

    #[test]
    fn overrides_are_validated() {
        let s = Settings {
            patch_size: Some(5),
            desk_scale: Some(true),
            ..Default::default()
        };
        assert!(matches!(s.resolve(true, None), Err(Error::Config(_))));
        let s = Settings {
            crop_min: Some(0.9),
            crop_max: Some(0.5),
            ..Default::default()
        };
        assert!(s.resolve(true, None).is_err());
    }

    #[test]
    fn config_parsing() {
        let known = vec!["lr".to_string(), "desk-scale".to_string()];
        let p = Path::new("c.conf");
        let t = config_tokens("# comment\nlr = 0.01  # trailing\n\ndesk-scale = true\n", p, &known).unwrap();
        assert_eq!(t, ["--lr", "0.01", "--desk-scale", "true"]);
        let e = config_tokens("lr = 1\nbogus = 2\n", p, &known).unwrap_err();
        assert!(e.to_string().contains("c.conf:2") && e.to_string().contains("bogus"));
        assert!(config_tokens("lr 1\n", p, &known).is_err());
    }

    #[test]
    fn overlay_prefers_top_and_lines_roundtrip() {
        let base = Settings {
            lr: Some(0.1),
            seed: Some(1),
            ..Default::default()
        };
        let top = Settings {
            seed: Some(2),
            pool: Some(Pool::MeanToken),
            ..Default::default()
        };
        let merged = overlay(&base, &top).unwrap();
        assert_eq!((merged.lr, merged.seed, merged.pool), (Some(0.1), Some(2), Some(Pool::MeanToken)));
        let lines = to_config_lines(&merged);
        assert!(lines.contains("pool = mean-token\n") && lines.contains("lr = 0.1\n"));
    }
}
