//! Asymmetric masked autoencoder.
//!
//! The encoder sees only the visible patch tokens. The decoder sees every
//! position: encoded visible tokens plus one shared learned mask token at each
//! masked position, re-ordered to the original patch order, with positional
//! rows added over the full set. A linear head maps each decoder token back to
//! the p²·c pixels of its patch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Bind, Linear, LinearVars, ParamTree};
use crate::patcher::{self, MaskPlan, PatchSet};
use crate::real::Real;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vit::{self, BlockParams, BlockShape, BlockVars, EncoderConfig, PosTable, VitEncoder, VitEncoderVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LossScope {
    MaskedOnly,
    AllPatches,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TargetNorm {
    /// Raw pixel values.
    None,
    /// Each target patch standardized to zero mean, unit variance.
    PerPatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeConfig {
    pub encoder: EncoderConfig,
    pub decoder_depth: usize,
    pub decoder_width: usize,
    pub decoder_heads: usize,
    pub mask_ratio: f64,
    pub patch_size: usize,
    pub image_side: usize,
    pub channels: usize,
    pub loss_scope: LossScope,
    pub target_norm: TargetNorm,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MaeConfig {
    /// 224×224 input, 16×16 patches, 75% masking, decoder depth 8 / width 512.
    pub fn full_scale() -> Self {
        MaeConfig {
            encoder: EncoderConfig::full_scale(),
            decoder_depth: 8,
            decoder_width: 512,
            decoder_heads: 16,
            mask_ratio: 0.75,
            patch_size: 16,
            image_side: 224,
            channels: 1,
            loss_scope: LossScope::MaskedOnly,
            target_norm: TargetNorm::None,
        }
    }

    /// Scaled-down geometry that trains in seconds on one CPU core.
    pub fn desk() -> Self {
        MaeConfig {
            encoder: EncoderConfig::desk(),
            decoder_depth: 2,
            decoder_width: 32,
            decoder_heads: 4,
            patch_size: 8,
            image_side: 32,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.patch_size == 0 || !self.image_side.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image side {} is not a multiple of patch size {}",
                self.image_side, self.patch_size
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask ratio {} outside (0, 1)", self.mask_ratio)));
        }
        if self.decoder_depth == 0 {
            return Err(Error::Config("decoder depth must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        vit::validate_width(self.decoder_width, self.decoder_heads, "decoder")
    }

    pub fn grid(&self) -> (usize, usize) {
        let g = self.image_side / self.patch_size;
        (g, g)
    }

    pub fn num_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    fn decoder_shape(&self) -> BlockShape {
        BlockShape {
            heads: self.decoder_heads,
            norm_style: self.encoder.norm_style,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaeParams<T: Real = f64> {
    pub encoder: VitEncoder<T>,
    /// Encoder→decoder width bridge; absent when the widths match.
    pub adapter: Option<Linear<T>>,
    /// The single learned vector placed at every masked position.
    pub mask_token: Tensor<T>,
    pub decoder_pos: PosTable<T>,
    pub decoder_blocks: Vec<BlockParams<T>>,
    pub pixel_head: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct MaeVars {
    pub encoder: VitEncoderVars,
    pub adapter: Option<LinearVars>,
    pub mask_token: Var,
    pub decoder_pos: Var,
    pub decoder_blocks: Vec<BlockVars>,
    pub pixel_head: LinearVars,
}

impl<T: Real> MaeParams<T> {
    pub fn new(cfg: &MaeConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let enc_w = cfg.encoder.width;
        let dec_w = cfg.decoder_width;
        Ok(MaeParams {
            encoder: VitEncoder::new(cfg.patch_dim(), cfg.grid(), &cfg.encoder, rng)?,
            adapter: (enc_w != dec_w).then(|| Linear::new(enc_w, dec_w, true, rng)),
            mask_token: Tensor::randn(&[1, dec_w], 0.02, rng),
            decoder_pos: PosTable::new(cfg.encoder.pos_embedding, cfg.grid(), dec_w)?,
            decoder_blocks: (0..cfg.decoder_depth)
                .map(|_| BlockParams::new(dec_w, cfg.encoder.ffn_mult, rng))
                .collect(),
            pixel_head: Linear::new(dec_w, cfg.patch_dim(), true, rng),
        })
    }
}

impl<T: Real> ParamTree<T> for MaeParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        let dec = join(prefix, "decoder");
        if let Some(a) = &self.adapter {
            a.visit(&join(&dec, "adapter"), f);
        }
        f(join(&dec, "mask_token"), &self.mask_token);
        if let PosTable::Learned(t) = &self.decoder_pos {
            f(join(&dec, "pos_embed"), t);
        }
        self.decoder_blocks.visit(&join(&dec, "blocks"), f);
        self.pixel_head.visit(&join(&dec, "pixel_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        let dec = join(prefix, "decoder");
        if let Some(a) = &mut self.adapter {
            a.visit_mut(&join(&dec, "adapter"), f);
        }
        f(join(&dec, "mask_token"), &mut self.mask_token);
        if let PosTable::Learned(t) = &mut self.decoder_pos {
            f(join(&dec, "pos_embed"), t);
        }
        self.decoder_blocks.visit_mut(&join(&dec, "blocks"), f);
        self.pixel_head.visit_mut(&join(&dec, "pixel_head"), f);
    }
}

impl<T: Real> Bind<T> for MaeParams<T> {
    type Vars = MaeVars;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> MaeVars {
        let dec = join(prefix, "decoder");
        MaeVars {
            encoder: self.encoder.bind(tape, &join(prefix, "encoder")),
            adapter: self.adapter.as_ref().map(|a| a.bind(tape, &join(&dec, "adapter"))),
            mask_token: tape.param(join(&dec, "mask_token"), &self.mask_token),
            decoder_pos: self.decoder_pos.bind(tape, &join(&dec, "pos_embed")),
            decoder_blocks: self.decoder_blocks.bind(tape, &join(&dec, "blocks")),
            pixel_head: self.pixel_head.bind(tape, &join(&dec, "pixel_head")),
        }
    }
}

/// Configuration and parameters of one masked autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct MaeModel<T: Real = f64> {
    pub cfg: MaeConfig,
    pub params: MaeParams<T>,
}

impl<T: Real> MaeModel<T> {
    pub fn new(cfg: MaeConfig, rng: &mut Rng) -> Result<Self> {
        let params = MaeParams::new(&cfg, rng)?;
        Ok(MaeModel { cfg, params })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> MaeVars {
        self.params.bind(tape, "")
    }

    pub fn patchify(&self, image: &Tensor<T>) -> Result<PatchSet<T>> {
        let (side, c) = (self.cfg.image_side, self.cfg.channels);
        let ok = match image.shape() {
            [h, w] => *h == side && *w == side && c == 1,
            [h, w, ch] => *h == side && *w == side && *ch == c,
            _ => false,
        };
        if !ok {
            return Err(Error::Shape {
                op: "mae_forward",
                lhs: image.shape().to_vec(),
                rhs: vec![side, side, c],
            });
        }
        patcher::patchify(image, self.cfg.patch_size)
    }

    /// Encoder pass over the visible tokens only.
    pub fn encode_visible(&self, tape: &mut Tape<T>, vars: &MaeVars, patches: Var, plan: &MaskPlan) -> Result<Var> {
        if plan.visible_idx.is_empty() {
            return Err(Error::Config("mask plan leaves no visible patches".into()));
        }
        let tokens = vars.encoder.embed(tape, patches, Some(&plan.visible_idx))?;
        if let Some(tr) = tape.trace_mut() {
            tr.encoder_tokens.push(plan.visible_idx.len());
        }
        vit::encode(
            tape,
            tokens,
            &vars.encoder.blocks,
            self.cfg.encoder.depth,
            (&self.cfg.encoder).into(),
        )
    }

    /// Full-length decoder input before positional rows are added: adapted
    /// visible tokens and the shared mask token, in original patch order.
    pub fn decoder_tokens(&self, tape: &mut Tape<T>, vars: &MaeVars, encoded: Var, plan: &MaskPlan) -> Result<Var> {
        let visible = match &vars.adapter {
            Some(a) => a.apply(tape, encoded)?,
            None => encoded,
        };
        let seq = if plan.masked_idx.is_empty() {
            visible
        } else {
            let masks = tape.repeat_row(vars.mask_token, plan.masked_idx.len())?;
            tape.concat_rows(&[visible, masks])?
        };
        tape.gather_rows(seq, &plan.restore_perm)
    }

    /// Predicted pixels (N×p²c, original patch order) for one patchified image
    /// under a given mask.
    pub fn forward_with_plan(&self, tape: &mut Tape<T>, vars: &MaeVars, patches: Var, plan: &MaskPlan) -> Result<Var> {
        let n = self.cfg.num_patches();
        if tape.shape(patches) != [n, self.cfg.patch_dim()] || plan.len() != n {
            return Err(Error::Shape {
                op: "mae_forward",
                lhs: tape.shape(patches).to_vec(),
                rhs: vec![n, self.cfg.patch_dim()],
            });
        }
        let encoded = self.encode_visible(tape, vars, patches, plan)?;
        let tokens = self.decoder_tokens(tape, vars, encoded, plan)?;
        let tokens = tape.add(tokens, vars.decoder_pos)?;
        if let Some(tr) = tape.trace_mut() {
            tr.decoder_tokens.push(n);
        }
        let decoded = vit::encode(
            tape,
            tokens,
            &vars.decoder_blocks,
            self.cfg.decoder_depth,
            self.cfg.decoder_shape(),
        )?;
        vars.pixel_head.apply(tape, decoded)
    }

    /// Patchify, sample a fresh mask from `rng`, and predict.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &MaeVars,
        image: &Tensor<T>,
        rng: &mut Rng,
    ) -> Result<(Var, MaskPlan, PatchSet<T>)> {
        let ps = self.patchify(image)?;
        let plan = patcher::random_mask(ps.len(), self.cfg.mask_ratio, rng)?;
        let p = tape.constant(&ps.patches);
        let pred = self.forward_with_plan(tape, vars, p, &plan)?;
        Ok((pred, plan, ps))
    }

    /// Forward plus reconstruction loss for one image under `plan`.
    pub fn loss_with_plan(&self, tape: &mut Tape<T>, vars: &MaeVars, ps: &PatchSet<T>, plan: &MaskPlan) -> Result<Var> {
        let p = tape.constant(&ps.patches);
        let pred = self.forward_with_plan(tape, vars, p, plan)?;
        let target = reconstruction_target(&ps.patches, self.cfg.target_norm);
        let target = tape.constant(&target);
        reconstruction_loss(tape, pred, target, plan, self.cfg.loss_scope)
    }
}

/// Pixel targets, optionally standardized per patch.
pub fn reconstruction_target<T: Real>(patches: &Tensor<T>, norm: TargetNorm) -> Tensor<T> {
    match norm {
        TargetNorm::None => patches.clone(),
        TargetNorm::PerPatch => {
            let (n, d) = patches.dims2();
            let mut out = patches.clone();
            let dn = T::from_f64(d as f64);
            for r in 0..n {
                let row = &mut out.data_mut()[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let inv = T::one() / (var + T::from_f64(1e-6)).sqrt();
                row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            }
            out
        }
    }
}

/// Mean squared error between predicted and target patches over the chosen scope.
pub fn reconstruction_loss<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Var,
    plan: &MaskPlan,
    scope: LossScope,
) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::Shape {
            op: "reconstruction_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(target).to_vec(),
        });
    }
    let (p, t) = match scope {
        LossScope::AllPatches => (pred, target),
        LossScope::MaskedOnly => {
            if plan.masked_idx.is_empty() {
                return Err(Error::Config(
                    "masked-only reconstruction loss with no masked patches".into(),
                ));
            }
            (
                tape.gather_rows(pred, &plan.masked_idx)?,
                tape.gather_rows(target, &plan.masked_idx)?,
            )
        }
    };
    let diff = tape.sub(p, t)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconstructMode {
    /// Predictions at every position.
    PredEverywhere,
    /// Ground truth at visible positions, predictions at masked ones.
    PasteVisible,
}

pub fn reconstruct_image<T: Real>(
    pred: &Tensor<T>,
    plan: &MaskPlan,
    original: &PatchSet<T>,
    mode: ReconstructMode,
) -> Result<Tensor<T>> {
    if pred.shape() != original.patches.shape() || plan.len() != original.len() {
        return Err(Error::Shape {
            op: "reconstruct_image",
            lhs: pred.shape().to_vec(),
            rhs: original.patches.shape().to_vec(),
        });
    }
    let mut patches = pred.clone();
    if mode == ReconstructMode::PasteVisible {
        let d = original.patch_dim();
        for &i in &plan.visible_idx {
            patches.data_mut()[i * d..(i + 1) * d].copy_from_slice(original.patches.row(i));
        }
    }
    Ok(patcher::unpatchify(&PatchSet {
        patches,
        grid: original.grid,
        patch_size: original.patch_size,
        channels: original.channels,
    }))
}

/// The encoder input as seen by a viewer: masked patches blanked to `fill`.
pub fn masked_image<T: Real>(original: &PatchSet<T>, plan: &MaskPlan, fill: T) -> Tensor<T> {
    let mut ps = original.clone();
    let d = ps.patch_dim();
    for &i in &plan.masked_idx {
        ps.patches.data_mut()[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = fill);
    }
    patcher::unpatchify(&ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, relative_error};
    use crate::params::assert_bind_matches_visit;

    fn tiny_cfg() -> MaeConfig {
        MaeConfig {
            encoder: EncoderConfig {
                depth: 1,
                width: 8,
                heads: 2,
                ffn_mult: 2,
                ..EncoderConfig::desk()
            },
            decoder_depth: 1,
            decoder_width: 8,
            decoder_heads: 2,
            mask_ratio: 0.75,
            patch_size: 4,
            image_side: 16,
            channels: 1,
            loss_scope: LossScope::MaskedOnly,
            target_norm: TargetNorm::None,
        }
    }

    #[test]
    fn config_validation() {
        assert!(MaeConfig::full_scale().validate().is_ok());
        assert!(MaeConfig::desk().validate().is_ok());
        let mut c = tiny_cfg();
        c.image_side = 18;
        assert!(c.validate().is_err());
        let mut c = tiny_cfg();
        c.mask_ratio = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny_cfg();
        c.decoder_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn full_geometry_token_counts() {
        // 224×224 with 16×16 patches at 75% masking, narrow widths to keep it fast
        let cfg = MaeConfig {
            encoder: EncoderConfig {
                depth: 1,
                width: 8,
                heads: 2,
                ffn_mult: 1,
                ..EncoderConfig::desk()
            },
            decoder_depth: 1,
            decoder_width: 8,
            decoder_heads: 2,
            ..MaeConfig::full_scale()
        };
        let mut rng = Rng::new(0);
        let model = MaeModel::<f64>::new(cfg, &mut rng).unwrap();
        let img = Tensor::rand_uniform(&[224, 224, 1], 0.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        tape.enable_trace(false);
        let vars = model.bind(&mut tape);
        let (pred, plan, _) = model.forward(&mut tape, &vars, &img, &mut rng).unwrap();
        assert_eq!(tape.shape(pred), &[196, 256]);
        assert_eq!(plan.visible_idx.len(), 49);
        let tr = tape.trace().unwrap();
        assert_eq!(tr.encoder_tokens, vec![49]);
        assert_eq!(tr.decoder_tokens, vec![196]);
    }

    #[test]
    fn degenerate_mask_keeps_output_shape() {
        let mut rng = Rng::new(1);
        let model = MaeModel::<f64>::new(tiny_cfg(), &mut rng).unwrap();
        let img = Tensor::rand_uniform(&[16, 16, 1], 0.0, 1.0, &mut rng);
        let ps = model.patchify(&img).unwrap();
        let plan = MaskPlan::none(16);
        let mut tape = Tape::new();
        tape.enable_trace(false);
        let vars = model.bind(&mut tape);
        let p = tape.constant(&ps.patches);
        let pred = model.forward_with_plan(&mut tape, &vars, p, &plan).unwrap();
        assert_eq!(tape.shape(pred), &[16, 16]);
        // no mask token rows were created
        assert!((0..tape.len()).all(|i| tape.op_name(crate::tape::Var::from_index(i)) != "repeat_row"));
        let target = tape.constant(&ps.patches);
        assert!(reconstruction_loss(&mut tape, pred, target, &plan, LossScope::MaskedOnly).is_err());
        assert!(reconstruction_loss(&mut tape, pred, target, &plan, LossScope::AllPatches).is_ok());
    }

    #[test]
    fn fixed_plan_fixes_output() {
        let mut rng = Rng::new(2);
        let model = MaeModel::<f64>::new(tiny_cfg(), &mut rng).unwrap();
        let img = Tensor::rand_uniform(&[16, 16, 1], 0.0, 1.0, &mut rng);
        let ps = model.patchify(&img).unwrap();
        let plan = patcher::random_mask(16, 0.75, &mut Rng::new(99)).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape);
            let p = tape.constant(&ps.patches);
            let pred = model.forward_with_plan(&mut tape, &vars, p, &plan).unwrap();
            tape.tensor(pred)
        };
        let a = run();
        let b = run();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let mut rng = Rng::new(3);
        let model = MaeModel::<f64>::new(tiny_cfg(), &mut rng).unwrap();
        let img = Tensor::zeros(&[32, 32, 1]);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        assert!(model.forward(&mut tape, &vars, &img, &mut rng).is_err());
    }

    #[test]
    fn mask_token_is_shared_across_masked_positions() {
        let mut rng = Rng::new(4);
        let model = MaeModel::<f64>::new(tiny_cfg(), &mut rng).unwrap();
        let img = Tensor::rand_uniform(&[16, 16, 1], 0.0, 1.0, &mut rng);
        let ps = model.patchify(&img).unwrap();
        let plan = patcher::random_mask(16, 0.75, &mut rng).unwrap();
        assert_eq!(model.params.mask_token.shape(), &[1, 8]);

        let dec_in = |m: &MaeModel| {
            let mut tape = Tape::new();
            let vars = m.bind(&mut tape);
            let p = tape.constant(&ps.patches);
            let enc = m.encode_visible(&mut tape, &vars, p, &plan).unwrap();
            let t = m.decoder_tokens(&mut tape, &vars, enc, &plan).unwrap();
            tape.tensor(t)
        };
        let base = dec_in(&model);
        let mut bumped = model.clone();
        let delta: Vec<f64> = (0..8).map(|i| 0.1 * (i as f64 + 1.0)).collect();
        bumped
            .params
            .mask_token
            .data_mut()
            .iter_mut()
            .zip(&delta)
            .for_each(|(v, d)| *v += d);
        let after = dec_in(&bumped);
        for i in 0..16 {
            let diff: Vec<f64> = after.row(i).iter().zip(base.row(i)).map(|(a, b)| a - b).collect();
            if plan.is_masked(i) {
                for (d, want) in diff.iter().zip(&delta) {
                    assert!((d - want).abs() < 1e-12);
                }
            } else {
                assert!(diff.iter().all(|&d| d == 0.0));
            }
        }
    }

    #[test]
    fn loss_examples() {
        let mut rng = Rng::new(5);
        let target = Tensor::<f64>::rand_uniform(&[4, 3], 0.0, 1.0, &mut rng);
        let plan = MaskPlan::from_masked(4, &[1, 3], 0.5).unwrap();
        let mut tape = Tape::new();
        let t = tape.constant(&target);
        let l = reconstruction_loss(&mut tape, t, t, &plan, LossScope::MaskedOnly).unwrap();
        assert_eq!(tape.scalar(l), 0.0);

        let shifted = target.map(|v| v + 1.0);
        let p = tape.constant(&shifted);
        let l = reconstruction_loss(&mut tape, p, t, &plan, LossScope::MaskedOnly).unwrap();
        assert!((tape.scalar(l) - 1.0).abs() < 1e-12);

        // two patches, the second masked: only its squared differences count
        let pred = Tensor::from_f64(&[2, 2], &[0.1, 0.2, 0.7, -0.4]).unwrap();
        let tgt = Tensor::from_f64(&[2, 2], &[0.9, 0.9, 0.5, 0.1]).unwrap();
        let plan = MaskPlan::from_masked(2, &[1], 0.5).unwrap();
        let p = tape.constant(&pred);
        let t = tape.constant(&tgt);
        let l = reconstruction_loss(&mut tape, p, t, &plan, LossScope::MaskedOnly).unwrap();
        let want = ((0.7f64 - 0.5).powi(2) + (-0.4f64 - 0.1).powi(2)) / 2.0;
        assert!((tape.scalar(l) - want).abs() < 1e-15);
        let l = reconstruction_loss(&mut tape, p, t, &plan, LossScope::AllPatches).unwrap();
        let want_all = ((0.1f64 - 0.9).powi(2) + (0.2f64 - 0.9).powi(2) + (0.7f64 - 0.5).powi(2) + (-0.4f64 - 0.1).powi(2)) / 4.0;
        assert!((tape.scalar(l) - want_all).abs() < 1e-15);
    }

    #[test]
    fn per_patch_targets_are_standardized() {
        let mut rng = Rng::new(6);
        let p = Tensor::<f64>::rand_uniform(&[3, 16], 0.0, 1.0, &mut rng);
        let t = reconstruction_target(&p, TargetNorm::PerPatch);
        for r in 0..3 {
            let mean: f64 = t.row(r).iter().sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
        }
        assert_eq!(reconstruction_target(&p, TargetNorm::None), p);
    }

    #[test]
    fn reconstruct_image_modes() {
        let mut rng = Rng::new(7);
        let img = Tensor::<f64>::rand_uniform(&[8, 8, 1], 0.0, 1.0, &mut rng);
        let ps = patcher::patchify(&img, 4).unwrap();
        let zeros = Tensor::zeros(&[4, 16]);

        let none = MaskPlan::none(4);
        assert_eq!(reconstruct_image(&zeros, &none, &ps, ReconstructMode::PasteVisible).unwrap(), img);
        assert_eq!(
            reconstruct_image(&zeros, &none, &ps, ReconstructMode::PredEverywhere).unwrap(),
            Tensor::zeros(&[8, 8, 1])
        );

        // masked patches 0 and 3 come from the prediction, 1 and 2 from the image
        let plan = MaskPlan::from_masked(4, &[0, 3], 0.5).unwrap();
        let pred = Tensor::full(&[4, 16], -1.0);
        let out = reconstruct_image(&pred, &plan, &ps, ReconstructMode::PasteVisible).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let patch = (y / 4) * 2 + x / 4;
                let want = if patch == 0 || patch == 3 { -1.0 } else { img.at(&[y, x, 0]) };
                assert_eq!(out.at(&[y, x, 0]), want);
            }
        }
        let masked = masked_image(&ps, &plan, 0.0);
        assert_eq!(masked.at(&[0, 0, 0]), 0.0);
        assert_eq!(masked.at(&[0, 5, 0]), img.at(&[0, 5, 0]));
    }

    #[test]
    fn names_match_binding() {
        let mut rng = Rng::new(8);
        let model = MaeModel::<f64>::new(tiny_cfg(), &mut rng).unwrap();
        assert_bind_matches_visit(&model.params, "");
        assert!(model.params.adapter.is_none());
        let mut cfg = tiny_cfg();
        cfg.decoder_width = 12;
        cfg.decoder_heads = 3;
        cfg.encoder.pos_embedding = vit::PosEmbedding::Learned;
        let model = MaeModel::<f64>::new(cfg, &mut rng).unwrap();
        assert!(model.params.adapter.is_some());
        assert_bind_matches_visit(&model.params, "");
    }

    #[test]
    fn mae_loss_gradient_check() {
        let mut rng = Rng::new(9);
        let mut cfg = tiny_cfg();
        cfg.decoder_width = 12;
        cfg.decoder_heads = 2;
        let model = MaeModel::<f64>::new(cfg, &mut rng).unwrap();
        let img = Tensor::rand_uniform(&[16, 16, 1], 0.0, 1.0, &mut rng);
        let ps = model.patchify(&img).unwrap();
        let plan = patcher::random_mask(16, 0.75, &mut rng).unwrap();
        let loss = |m: &MaeModel| {
            let mut tape = Tape::new();
            let vars = m.bind(&mut tape);
            let l = m.loss_with_plan(&mut tape, &vars, &ps, &plan).unwrap();
            (tape, l)
        };
        let (mut tape, l) = loss(&model);
        tape.backward(l).unwrap();
        let grads = tape.param_grads();
        let mut worst: f64 = 0.0;
        for (name, t) in model.params.named_tensors("") {
            let ad = Tensor::from_vec(t.shape(), grads[&name].clone()).unwrap();
            let fd = finite_diff_grad(
                |x| {
                    let mut m = model.clone();
                    m.params.visit_mut("", &mut |n, p| {
                        if n == name {
                            p.data_mut().copy_from_slice(x.data())
                        }
                    });
                    let (tape, l) = loss(&m);
                    tape.scalar(l)
                },
                t,
                1e-5,
            );
            worst = worst.max(relative_error(&ad, &fd));
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }
}
