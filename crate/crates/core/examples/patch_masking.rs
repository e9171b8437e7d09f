//! Patchify a phantom, mask three quarters of it, and write the masked view.
//!
//! cargo run --example patch_masking -- /tmp/masked.pgm

use maeforge::data::encode_pgm;
use maeforge::data::synth::synth_image;
use maeforge::data::SyntheticSpec;
use maeforge::mae::masked_image;
use maeforge::patcher::{patchify, random_mask, unpatchify};
use maeforge::Rng;

fn main() -> maeforge::Result<()> {
    let spec = SyntheticSpec::ct(64, 1, 0, 0);
    let image = synth_image(&spec, 0, 1, &mut Rng::new(0));
    let ps = patchify(&image, 8)?;
    let plan = random_mask(ps.len(), 0.75, &mut Rng::new(42))?;
    println!(
        "{} patches of dim {}: {} visible, {} masked",
        ps.len(),
        ps.patch_dim(),
        plan.visible_idx.len(),
        plan.masked_idx.len()
    );
    println!("visible: {:?}", plan.visible_idx);
    assert_eq!(unpatchify(&ps), image);

    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, encode_pgm(&masked_image(&ps, &plan, 0.0))?).expect("writable path");
        println!("wrote {path}");
    }
    Ok(())
}
