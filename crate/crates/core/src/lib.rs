//! Toy-scale RGB-D semantic segmentation built on a small reverse-mode
//! autodiff core: a depth-aware fusion block in front of a ViT encoder
//! that attends over RGB and depth tokens jointly, and a shallow ConvNeXt
//! decoder.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fault;
pub mod fusion;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use model::{DecoderInput, Model, ModelConfig};
pub use tensor::{Tape, Tensor, Var};
