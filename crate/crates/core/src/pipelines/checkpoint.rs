//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "MAEFCKPT"
//! version  u32
//! meta     u64 length + UTF-8 JSON
//! count    u32
//! count × { name: u32 length + UTF-8, dtype: u8 (0 = f32), rank: u32,
//!           dims: rank × u64, payload: numel × f32 }
//! ```
//!
//! Values are always stored as f32, so f64 parameters are narrowed on save.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mae::{MaeConfig, MaeModel};
use crate::params::ParamTree;
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vit::Classifier;

pub const MAGIC: &[u8; 8] = b"MAEFCKPT";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mae,
    Classifier,
    /// Encoder tensors only, extracted from either of the above.
    Encoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    /// Geometry, encoder/decoder shape, loss scope and positional-table choice.
    pub config: MaeConfig,
    pub n_classes: Option<usize>,
    /// Ids of every stage that shaped these weights, oldest first.
    pub lineage: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| fmt_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, wide: bool) -> Result<usize> {
        let n = if wide { self.u64()? } else { self.u32()? as u64 };
        usize::try_from(n).map_err(|_| fmt_err("length overflows usize"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len(false)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| fmt_err("tensor name is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn from_params<T: Real, P: ParamTree<T> + ?Sized>(params: &P, meta: CheckpointMeta) -> Self {
        let tensors = params
            .named_tensors("")
            .into_iter()
            .map(|(n, t)| (n, t.cast::<f32>()))
            .collect();
        Checkpoint { meta, tensors }
    }

    pub fn names(&self) -> Vec<&str> {
        self.tensors.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| fmt_err(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(fmt_err("bad magic: not a maeforge checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}, expected {VERSION}")));
        }
        let n = r.len(true)?;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(n)?).map_err(|e| fmt_err(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name = r.string()?;
            if !seen.insert(name.clone()) {
                return Err(fmt_err(format!("duplicate tensor `{name}`")));
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(fmt_err(format!("tensor `{name}`: unknown dtype {dtype}")));
            }
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.len(true)).collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| fmt_err("tensor size overflows"))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| fmt_err("tensor size overflows"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::from_vec(&dims, data).map_err(|e| fmt_err(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(fmt_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Only the tensors under `encoder.`; the decoder and any head are dropped.
    pub fn encoder_only(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                kind: ModelKind::Encoder,
                n_classes: None,
                ..self.meta.clone()
            },
            tensors: self
                .tensors
                .iter()
                .filter(|(n, _)| n.starts_with("encoder."))
                .cloned()
                .collect(),
        }
    }

    fn map<T: Real>(&self) -> HashMap<String, Tensor<T>> {
        self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect()
    }

    /// Copies tensors into `params`. Within the names selected by `strict`
    /// both sides must agree exactly; other shared names are copied when
    /// `copy_rest` is set and skipped otherwise.
    fn load_with<T: Real, P: ParamTree<T> + ?Sized>(
        &self,
        params: &mut P,
        strict: impl Fn(&str) -> bool,
        copy_rest: bool,
    ) -> Result<()> {
        let mut wanted = HashSet::new();
        params.visit("", &mut |n, _| {
            wanted.insert(n);
        });
        if let Some((extra, _)) = self.tensors.iter().find(|(n, _)| strict(n) && !wanted.contains(n)) {
            return Err(fmt_err(format!("unknown tensor `{extra}`")));
        }
        let src: HashMap<String, Tensor<T>> = self.map();
        let mut res = Ok(());
        params.visit_mut("", &mut |name, t| {
            if res.is_err() {
                return;
            }
            let required = strict(&name);
            match src.get(&name) {
                Some(s) if s.shape() != t.shape() => {
                    res = Err(Error::Shape {
                        op: "load_checkpoint",
                        lhs: t.shape().to_vec(),
                        rhs: s.shape().to_vec(),
                    })
                }
                Some(s) if required || copy_rest => t.data_mut().copy_from_slice(s.data()),
                None if required => res = Err(fmt_err(format!("missing tensor `{name}`"))),
                _ => {}
            }
        });
        res
    }

    /// Overwrites every tensor of `params`; the two name sets must match exactly.
    pub fn load_strict<T: Real, P: ParamTree<T> + ?Sized>(&self, params: &mut P) -> Result<()> {
        self.load_with(params, |_| true, false)
    }

    /// Overwrites only the `encoder.` tensors, which must match exactly.
    pub fn load_encoder<T: Real, P: ParamTree<T> + ?Sized>(&self, params: &mut P) -> Result<()> {
        self.load_with(params, |n| n.starts_with("encoder."), false)
    }

    /// Like [`Checkpoint::load_encoder`], additionally copying any other
    /// tensor both sides share (a decoder carried between pretraining stages).
    pub fn load_shared<T: Real, P: ParamTree<T> + ?Sized>(&self, params: &mut P) -> Result<()> {
        self.load_with(params, |n| n.starts_with("encoder."), true)
    }

    /// Rebuilds the MAE this checkpoint was saved from.
    pub fn to_mae<T: Real>(&self) -> Result<MaeModel<T>> {
        if self.meta.kind != ModelKind::Mae {
            return Err(fmt_err(format!("expected an MAE checkpoint, found {:?}", self.meta.kind)));
        }
        let mut model = MaeModel::new(self.meta.config.clone(), &mut Rng::new(0))?;
        self.load_strict(&mut model.params)?;
        Ok(model)
    }

    /// Rebuilds a classifier. Classifier checkpoints load whole; MAE and
    /// encoder-only checkpoints supply the encoder under a fresh head drawn
    /// from `rng`.
    pub fn to_classifier<T: Real>(&self, n_classes: usize, rng: &mut Rng) -> Result<Classifier<T>> {
        let cfg = &self.meta.config;
        let mut model = Classifier::new(cfg.patch_dim(), cfg.grid(), n_classes, &cfg.encoder, rng)?;
        match self.meta.kind {
            ModelKind::Classifier => self.load_strict(&mut model)?,
            ModelKind::Mae | ModelKind::Encoder => self.load_encoder(&mut model)?,
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mae::MaeParams;
    use crate::vit::{EncoderConfig, PosEmbedding};

    fn tiny(pos: PosEmbedding, dec_w: usize) -> MaeConfig {
        MaeConfig {
            encoder: EncoderConfig {
                depth: 2,
                width: 8,
                heads: 2,
                pos_embedding: pos,
                ..EncoderConfig::desk()
            },
            decoder_depth: 1,
            decoder_width: dec_w,
            decoder_heads: 2,
            patch_size: 4,
            image_side: 8,
            ..MaeConfig::desk()
        }
    }

    fn meta(cfg: MaeConfig, kind: ModelKind) -> CheckpointMeta {
        CheckpointMeta {
            kind,
            config: cfg,
            n_classes: None,
            lineage: vec!["a".into(), "b".into()],
            seed: 11,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for (pos, w) in [(PosEmbedding::SinCos, 8), (PosEmbedding::Learned, 12)] {
            let cfg = tiny(pos, w);
            let model = MaeModel::<f32>::new(cfg.clone(), &mut Rng::new(3)).unwrap();
            let ck = Checkpoint::from_params(&model.params, meta(cfg, ModelKind::Mae));
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back, ck);
            let restored: MaeModel<f32> = back.to_mae().unwrap();
            for ((_, a), (_, b)) in restored.params.named_tensors("").iter().zip(model.params.named_tensors("")) {
                let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let cfg = tiny(PosEmbedding::SinCos, 8);
        let model = MaeModel::<f32>::new(cfg.clone(), &mut Rng::new(0)).unwrap();
        let bytes = Checkpoint::from_params(&model.params, meta(cfg, ModelKind::Mae)).to_bytes().unwrap();

        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("magic"));

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("version"));

        for cut in [bytes.len() - 1, bytes.len() / 2, 13] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }

    #[test]
    fn encoder_only_name_set() {
        let cfg = tiny(PosEmbedding::Learned, 12);
        let model = MaeModel::<f32>::new(cfg.clone(), &mut Rng::new(0)).unwrap();
        let ck = Checkpoint::from_params(&model.params, meta(cfg, ModelKind::Mae)).encoder_only();
        // oracle: the encoder's own tree, rooted at `encoder`
        let want: Vec<String> = model.params.encoder.named_tensors("encoder").into_iter().map(|(n, _)| n).collect();
        assert_eq!(ck.names(), want);
        assert!(ck.names().iter().all(|n| !n.starts_with("decoder")));
        assert_eq!(ck.meta.kind, ModelKind::Encoder);
    }

    #[test]
    fn strict_load_rejects_unknown_and_missing_names() {
        let cfg = tiny(PosEmbedding::SinCos, 8);
        let model = MaeModel::<f32>::new(cfg.clone(), &mut Rng::new(0)).unwrap();
        let mut ck = Checkpoint::from_params(&model.params, meta(cfg.clone(), ModelKind::Mae));
        ck.tensors.push(("decoder.ghost".into(), Tensor::zeros(&[1])));
        let mut target = MaeParams::<f32>::new(&cfg, &mut Rng::new(1)).unwrap();
        assert!(ck.load_strict(&mut target).unwrap_err().to_string().contains("ghost"));
        ck.tensors.truncate(ck.tensors.len() - 2);
        assert!(ck.load_strict(&mut target).unwrap_err().to_string().contains("missing"));
    }

    #[test]
    fn classifier_from_mae_takes_encoder_and_fresh_head() {
        let cfg = tiny(PosEmbedding::SinCos, 8);
        let mae = MaeModel::<f32>::new(cfg.clone(), &mut Rng::new(0)).unwrap();
        let ck = Checkpoint::from_params(&mae.params, meta(cfg, ModelKind::Mae));
        let a: Classifier<f32> = ck.to_classifier(2, &mut Rng::new(5)).unwrap();
        let b: Classifier<f32> = ck.to_classifier(2, &mut Rng::new(6)).unwrap();
        assert_eq!(a.encoder, mae.params.encoder);
        assert_eq!(b.encoder, mae.params.encoder);
        assert_ne!(a.head, b.head);
    }
}
