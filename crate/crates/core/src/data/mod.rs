//! Image ingestion: PGM codec, CSV manifests and synthetic corpora.

pub mod manifest;
pub mod pgm;
pub mod synth;

pub use manifest::{load_manifest, split, write_manifest, Dataset, Manifest, Record};
pub use pgm::{decode_pgm, encode_pgm};
pub use synth::{synth_dataset, Motif, SyntheticSpec};
