//! Masked-autoencoder pretraining with a Vision Transformer encoder, built on
//! a small reverse-mode autodiff tape, plus the staged pretrain → fine-tune
//! pipeline used for transfer-learning ablations.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mae;
pub mod metrics;
pub mod params;
pub mod patcher;
pub mod pipelines;
pub mod real;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod vit;

pub use error::{Error, Result};
pub use real::{Precision, Real};
pub use rng::Rng;
pub use tape::{Tape, Trace, Var};
pub use tensor::Tensor;
