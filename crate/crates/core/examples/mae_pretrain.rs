//! A few epochs of masked-reconstruction pretraining on synthetic phantoms,
//! then a checkpoint written next to the data.
//!
//! cargo run --release --example mae_pretrain

use maeforge::data::{synth_dataset, Dataset, SyntheticSpec};
use maeforge::mae::{MaeConfig, MaeModel};
use maeforge::pipelines::{Checkpoint, CheckpointMeta, ModelKind};
use maeforge::training::{pretrain_epoch, AdamState, TrainConfig};
use maeforge::Rng;

fn main() -> maeforge::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let (train, _) = synth_dataset(&SyntheticSpec::ct(32, 64, 0, 7), dir.path())?;
    let data: Dataset<f32> = Dataset::load(&train)?.without_labels();

    let cfg = MaeConfig::desk();
    let mut model = MaeModel::<f32>::new(cfg.clone(), &mut Rng::new(7))?;
    let mut tc = TrainConfig::new(cfg.image_side, 8);
    tc.schedule.base_lr = 1e-3;
    let mut opt = AdamState::new(tc.adam);
    let rng = Rng::new(70);
    for epoch in 0..10 {
        let s = pretrain_epoch(&mut model, &data.images, &mut opt, &tc, epoch, &rng)?;
        println!("epoch {epoch}  lr {:.2e}  masked mse {:.4}", s.lr, s.loss);
    }

    let meta = CheckpointMeta {
        kind: ModelKind::Mae,
        config: cfg,
        n_classes: None,
        lineage: vec!["ssl".into()],
        seed: 7,
    };
    let path = dir.path().join("mae.bin");
    Checkpoint::from_params(&model.params, meta).save(&path)?;
    println!("checkpoint {} bytes", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    Ok(())
}
