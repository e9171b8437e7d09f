//! Generate a labeled phantom corpus, reload its manifest and re-split it.
//!
//! cargo run --example synthetic_corpus -- /tmp/phantoms

use std::path::PathBuf;

use maeforge::data::{load_manifest, split, synth_dataset, write_manifest, SyntheticSpec};
use maeforge::Rng;

fn main() -> maeforge::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dest = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let (train, test) = synth_dataset(&SyntheticSpec::ct(32, 40, 10, 1), &dest)?;
    println!("{} train / {} test images under {}", train.len(), test.len(), dest.display());

    let reloaded = load_manifest(&dest.join("train.csv"))?;
    assert_eq!(reloaded.records, train.records);
    let (a, b) = split(&reloaded, 0.8, &mut Rng::new(2))?;
    let positives = |m: &maeforge::data::Manifest| m.records.iter().filter(|r| r.label == Some(1)).count();
    println!("split 0.8: {} ({} positive) / {} ({} positive)", a.len(), positives(&a), b.len(), positives(&b));
    write_manifest(&a, &dest.join("train-80.csv"))?;
    Ok(())
}
