//! Save an MAE, reload it bit-exactly, and hand its encoder to a classifier.
//!
//! cargo run --example checkpoint_io

use maeforge::mae::{MaeConfig, MaeModel};
use maeforge::pipelines::{Checkpoint, CheckpointMeta, ModelKind};
use maeforge::Rng;

fn main() -> maeforge::Result<()> {
    let cfg = MaeConfig::desk();
    let model = MaeModel::<f32>::new(cfg.clone(), &mut Rng::new(3))?;
    let meta = CheckpointMeta {
        kind: ModelKind::Mae,
        config: cfg,
        n_classes: None,
        lineage: vec!["ssl".into()],
        seed: 3,
    };
    let ck = Checkpoint::from_params(&model.params, meta);
    let bytes = ck.to_bytes()?;
    let back = Checkpoint::from_bytes(&bytes)?;
    assert_eq!(back.to_bytes()?, bytes);
    println!("{} tensors, {} bytes, first: {:?}", back.tensors.len(), bytes.len(), &back.names()[..3]);

    let encoder = back.encoder_only();
    println!("encoder-only: {} tensors", encoder.tensors.len());
    let clf = back.to_classifier::<f32>(2, &mut Rng::new(4))?;
    println!("classifier head outputs {} classes", clf.head.n_classes());
    Ok(())
}
