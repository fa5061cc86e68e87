//! Variable-rate learned image codec built on N-gram Swin Transformer blocks.

pub mod entropy;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod net;
pub mod nstb;
pub mod rdo;

pub use error::{CodecError, Result};
pub use net::{CodecConfig, CodecModel};
