//! Vision-Transformer encoder with post-norm residual blocks:
//!
//! ```text
//! Q, K, V = X·W^q, X·W^k, X·W^v              (X already carries PE)
//! X ← LN(W^o · softmax(Q Kᵀ / √d_k) V + X)    per head, heads concatenated
//! Y ← LN(FFN(X) + X)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Bind, LayerNormParams, LayerNormVars, Linear, LinearVars, ParamTree};
use crate::patcher::{sincos_pos_encoding, PosEncoding};
use crate::real::Real;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NormStyle {
    /// LN(sublayer(X) + X)
    Post,
    /// X + sublayer(LN(X))
    Pre,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Pool {
    ClsToken,
    MeanToken,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Gelu,
}

/// How positions are injected into patch tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PosEmbedding {
    /// Fixed 2-D sine–cosine table.
    SinCos,
    /// Trainable table initialized from the sine–cosine one.
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub norm_style: NormStyle,
    pub pool: Pool,
    pub activation: Activation,
    pub pos_embedding: PosEmbedding,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    pub fn desk() -> Self {
        EncoderConfig {
            depth: 4,
            width: 64,
            heads: 4,
            ffn_mult: 4,
            norm_style: NormStyle::Post,
            pool: Pool::ClsToken,
            activation: Activation::Gelu,
            pos_embedding: PosEmbedding::SinCos,
        }
    }

    /// Base-size encoder (depth 12, width 768).
    pub fn full_scale() -> Self {
        EncoderConfig {
            depth: 12,
            width: 768,
            heads: 12,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("encoder depth must be at least 1".into()));
        }
        validate_width(self.width, self.heads, "encoder")?;
        if self.ffn_mult == 0 {
            return Err(Error::Config("ffn_mult must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn validate_width(width: usize, heads: usize, what: &str) -> Result<()> {
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::Config(format!("{what} width {width} not divisible by {heads} heads")));
    }
    if width == 0 || !width.is_multiple_of(4) {
        return Err(Error::Config(format!("{what} width {width} must be a positive multiple of 4")));
    }
    Ok(())
}

/// Shape hyperparameters one transformer block needs at run time.
#[derive(Clone, Copy, Debug)]
pub struct BlockShape {
    pub heads: usize,
    pub norm_style: NormStyle,
}

impl From<&EncoderConfig> for BlockShape {
    fn from(cfg: &EncoderConfig) -> Self {
        BlockShape {
            heads: cfg.heads,
            norm_style: cfg.norm_style,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T: Real = f64> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub attn_norm: LayerNormParams<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
    pub ffn_norm: LayerNormParams<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub attn_norm: LayerNormVars,
    pub ffn_in: LinearVars,
    pub ffn_out: LinearVars,
    pub ffn_norm: LayerNormVars,
}

impl<T: Real> BlockParams<T> {
    pub fn new(width: usize, ffn_mult: usize, rng: &mut Rng) -> Self {
        let hidden = width * ffn_mult;
        BlockParams {
            w_q: crate::params::xavier(width, width, rng),
            w_k: crate::params::xavier(width, width, rng),
            w_v: crate::params::xavier(width, width, rng),
            w_o: crate::params::xavier(width, width, rng),
            attn_norm: LayerNormParams::new(width),
            ffn_in: Linear::new(width, hidden, true, rng),
            ffn_out: Linear::new(hidden, width, true, rng),
            ffn_norm: LayerNormParams::new(width),
        }
    }

    pub fn width(&self) -> usize {
        self.w_q.shape()[0]
    }
}

impl<T: Real> ParamTree<T> for BlockParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "w_q"), &self.w_q);
        f(join(prefix, "w_k"), &self.w_k);
        f(join(prefix, "w_v"), &self.w_v);
        f(join(prefix, "w_o"), &self.w_o);
        self.attn_norm.visit(&join(prefix, "attn_norm"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
        self.ffn_norm.visit(&join(prefix, "ffn_norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "w_q"), &mut self.w_q);
        f(join(prefix, "w_k"), &mut self.w_k);
        f(join(prefix, "w_v"), &mut self.w_v);
        f(join(prefix, "w_o"), &mut self.w_o);
        self.attn_norm.visit_mut(&join(prefix, "attn_norm"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
        self.ffn_norm.visit_mut(&join(prefix, "ffn_norm"), f);
    }
}

impl<T: Real> Bind<T> for BlockParams<T> {
    type Vars = BlockVars;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> BlockVars {
        BlockVars {
            w_q: tape.param(join(prefix, "w_q"), &self.w_q),
            w_k: tape.param(join(prefix, "w_k"), &self.w_k),
            w_v: tape.param(join(prefix, "w_v"), &self.w_v),
            w_o: tape.param(join(prefix, "w_o"), &self.w_o),
            attn_norm: self.attn_norm.bind(tape, &join(prefix, "attn_norm")),
            ffn_in: self.ffn_in.bind(tape, &join(prefix, "ffn_in")),
            ffn_out: self.ffn_out.bind(tape, &join(prefix, "ffn_out")),
            ffn_norm: self.ffn_norm.bind(tape, &join(prefix, "ffn_norm")),
        }
    }
}

/// Multi-head self-attention sublayer with its residual and LayerNorm.
pub fn attention_block<T: Real>(tape: &mut Tape<T>, x: Var, p: &BlockVars, shape: BlockShape) -> Result<Var> {
    let input = match shape.norm_style {
        NormStyle::Post => x,
        NormStyle::Pre => p.attn_norm.apply(tape, x)?,
    };
    let d = tape.shape(x)[1];
    let heads = shape.heads;
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
    }
    let dk = d / heads;
    let q = tape.matmul(input, p.w_q)?;
    let k = tape.matmul(input, p.w_k)?;
    let v = tape.matmul(input, p.w_v)?;
    let scale = T::one() / T::from_f64(dk as f64).sqrt();
    let capture = tape.trace().is_some_and(|t| t.capture_attention);

    let mut head_out = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dk, dk)?,
                tape.slice_cols(k, h * dk, dk)?,
                tape.slice_cols(v, h * dk, dk)?,
            )
        };
        let logits = tape.matmul_nt(qh, kh)?;
        let logits = tape.scale(logits, scale);
        let weights = tape.softmax_rows(logits);
        if capture {
            let w = tape.tensor(weights).cast::<f64>();
            if let Some(tr) = tape.trace_mut() {
                tr.attention.push(w);
            }
        }
        head_out.push(tape.matmul(weights, vh)?);
    }
    let merged = if heads == 1 { head_out[0] } else { tape.concat_cols(&head_out)? };
    let proj = tape.matmul(merged, p.w_o)?;
    match shape.norm_style {
        NormStyle::Post => {
            let res = tape.add(proj, x)?;
            p.attn_norm.apply(tape, res)
        }
        NormStyle::Pre => tape.add(x, proj),
    }
}

/// Position-wise feed-forward sublayer with its residual and LayerNorm.
pub fn ffn_block<T: Real>(tape: &mut Tape<T>, x: Var, p: &BlockVars, shape: BlockShape) -> Result<Var> {
    let input = match shape.norm_style {
        NormStyle::Post => x,
        NormStyle::Pre => p.ffn_norm.apply(tape, x)?,
    };
    let h = p.ffn_in.apply(tape, input)?;
    let h = tape.gelu(h);
    let h = p.ffn_out.apply(tape, h)?;
    match shape.norm_style {
        NormStyle::Post => {
            let res = tape.add(h, x)?;
            p.ffn_norm.apply(tape, res)
        }
        NormStyle::Pre => tape.add(x, h),
    }
}

/// Runs the block stack over `tokens` (T×d). `blocks.len()` must equal `depth`.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    tokens: Var,
    blocks: &[BlockVars],
    depth: usize,
    shape: BlockShape,
) -> Result<Var> {
    if blocks.len() != depth {
        return Err(Error::Config(format!(
            "encoder expects {depth} blocks, got {}",
            blocks.len()
        )));
    }
    let mut x = tokens;
    for b in blocks {
        x = attention_block(tape, x, b, shape)?;
        x = ffn_block(tape, x, b, shape)?;
    }
    Ok(x)
}

/// Positional table for a fixed patch grid: either a constant buffer or a
/// trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum PosTable<T: Real = f64> {
    Fixed(PosEncoding<T>),
    Learned(Tensor<T>),
}

impl<T: Real> PosTable<T> {
    pub fn new(kind: PosEmbedding, grid: (usize, usize), width: usize) -> Result<Self> {
        let table = sincos_pos_encoding(grid, width)?;
        Ok(match kind {
            PosEmbedding::SinCos => PosTable::Fixed(table),
            PosEmbedding::Learned => PosTable::Learned(table.table),
        })
    }

    pub fn table(&self) -> &Tensor<T> {
        match self {
            PosTable::Fixed(pe) => &pe.table,
            PosTable::Learned(t) => t,
        }
    }

    /// Constant for the fixed table, named parameter for the learned one.
    pub fn bind(&self, tape: &mut Tape<T>, name: &str) -> Var {
        match self {
            PosTable::Fixed(pe) => tape.constant(&pe.table),
            PosTable::Learned(t) => tape.param(name, t),
        }
    }

    fn visit<'a>(&'a self, name: String, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        if let PosTable::Learned(t) = self {
            f(name, t);
        }
    }

    fn visit_mut(&mut self, name: String, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        if let PosTable::Learned(t) = self {
            f(name, t);
        }
    }
}

/// Patch embedding, positional table and encoder blocks; the part of the model
/// that transfers between stages.
#[derive(Clone, Debug, PartialEq)]
pub struct VitEncoder<T: Real = f64> {
    pub patch_embed: Linear<T>,
    pub pos: PosTable<T>,
    pub blocks: Vec<BlockParams<T>>,
}

#[derive(Clone, Debug)]
pub struct VitEncoderVars {
    pub patch_embed: LinearVars,
    pub pos: Var,
    pub blocks: Vec<BlockVars>,
}

impl<T: Real> VitEncoder<T> {
    pub fn new(patch_dim: usize, grid: (usize, usize), cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(VitEncoder {
            patch_embed: Linear::new(patch_dim, cfg.width, true, rng),
            pos: PosTable::new(cfg.pos_embedding, grid, cfg.width)?,
            blocks: (0..cfg.depth)
                .map(|_| BlockParams::new(cfg.width, cfg.ffn_mult, rng))
                .collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.patch_embed.out_features()
    }

    pub fn num_patches(&self) -> usize {
        self.pos.table().shape()[0]
    }
}

impl<T: Real> ParamTree<T> for VitEncoder<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), f);
        self.pos.visit(join(prefix, "pos_embed"), f);
        self.blocks.visit(&join(prefix, "blocks"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), f);
        self.pos.visit_mut(join(prefix, "pos_embed"), f);
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
    }
}

impl<T: Real> Bind<T> for VitEncoder<T> {
    type Vars = VitEncoderVars;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> VitEncoderVars {
        VitEncoderVars {
            patch_embed: self.patch_embed.bind(tape, &join(prefix, "patch_embed")),
            pos: self.pos.bind(tape, &join(prefix, "pos_embed")),
            blocks: self.blocks.bind(tape, &join(prefix, "blocks")),
        }
    }
}

impl VitEncoderVars {
    /// Projects raw patches and adds their positional rows. With `rows`, only
    /// those patches are embedded (the rest never reach the encoder).
    pub fn embed<T: Real>(&self, tape: &mut Tape<T>, patches: Var, rows: Option<&[usize]>) -> Result<Var> {
        let (patches, pe) = match rows {
            Some(idx) => (tape.gather_rows(patches, idx)?, tape.gather_rows(self.pos, idx)?),
            None => (patches, self.pos),
        };
        let emb = self.patch_embed.apply(tape, patches)?;
        tape.add(emb, pe)
    }
}

/// Class token and linear classifier used for fine-tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T: Real = f64> {
    pub cls_token: Tensor<T>,
    pub classifier: Linear<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub cls_token: Var,
    pub classifier: LinearVars,
}

impl<T: Real> HeadParams<T> {
    pub fn new(width: usize, n_classes: usize, rng: &mut Rng) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        Ok(HeadParams {
            cls_token: Tensor::randn(&[1, width], 0.02, rng),
            classifier: Linear::new(width, n_classes, true, rng),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.out_features()
    }
}

impl<T: Real> ParamTree<T> for HeadParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "cls_token"), &self.cls_token);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "cls_token"), &mut self.cls_token);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

impl<T: Real> Bind<T> for HeadParams<T> {
    type Vars = HeadVars;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> HeadVars {
        HeadVars {
            cls_token: tape.param(join(prefix, "cls_token"), &self.cls_token),
            classifier: self.classifier.bind(tape, &join(prefix, "classifier")),
        }
    }
}

/// Pools encoded tokens and applies the linear classifier. Returns unnormalized
/// logits as a 1×n_classes row.
pub fn classify<T: Real>(
    tape: &mut Tape<T>,
    encoded: Var,
    head: &HeadVars,
    pool: Pool,
    cls_prepended: bool,
) -> Result<Var> {
    let pooled = match pool {
        Pool::ClsToken if !cls_prepended => {
            return Err(Error::Config(
                "cls-token pooling requires a class token prepended before encoding".into(),
            ))
        }
        Pool::ClsToken => tape.gather_rows(encoded, &[0])?,
        Pool::MeanToken => tape.mean_rows(encoded),
    };
    head.classifier.apply(tape, pooled)
}

/// Encoder plus classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T: Real = f64> {
    pub cfg: EncoderConfig,
    pub encoder: VitEncoder<T>,
    pub head: HeadParams<T>,
}

#[derive(Clone, Debug)]
pub struct ClassifierVars {
    pub encoder: VitEncoderVars,
    pub head: HeadVars,
}

impl<T: Real> Classifier<T> {
    pub fn new(
        patch_dim: usize,
        grid: (usize, usize),
        n_classes: usize,
        cfg: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let encoder = VitEncoder::new(patch_dim, grid, cfg, rng)?;
        let head = HeadParams::new(cfg.width, n_classes, rng)?;
        Ok(Classifier {
            cfg: cfg.clone(),
            encoder,
            head,
        })
    }

    /// Binds parameters; with `freeze_encoder` the encoder is recorded as constants.
    pub fn bind_with(&self, tape: &mut Tape<T>, freeze_encoder: bool) -> ClassifierVars {
        tape.set_frozen(freeze_encoder);
        let encoder = self.encoder.bind(tape, "encoder");
        tape.set_frozen(false);
        let head = self.head.bind(tape, "head");
        ClassifierVars { encoder, head }
    }

    /// Logits (1×n_classes) for one image's patch matrix (N×p²c).
    pub fn forward(&self, tape: &mut Tape<T>, vars: &ClassifierVars, patches: Var) -> Result<Var> {
        let mut tokens = vars.encoder.embed(tape, patches, None)?;
        let cls = self.cfg.pool == Pool::ClsToken;
        if cls {
            tokens = tape.concat_rows(&[vars.head.cls_token, tokens])?;
        }
        let n = tape.shape(tokens)[0];
        if let Some(tr) = tape.trace_mut() {
            tr.encoder_tokens.push(n);
        }
        let enc = encode(tape, tokens, &vars.encoder.blocks, self.cfg.depth, (&self.cfg).into())?;
        classify(tape, enc, &vars.head, self.cfg.pool, cls)
    }
}

impl<T: Real> ParamTree<T> for Classifier<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<T: Real> Bind<T> for Classifier<T> {
    type Vars = ClassifierVars;

    fn bind(&self, tape: &mut Tape<T>, prefix: &str) -> ClassifierVars {
        assert!(prefix.is_empty(), "classifier parameters live at the root");
        self.bind_with(tape, false)
    }
}
