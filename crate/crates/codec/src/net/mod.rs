//! The end-to-end compression network.

pub mod config;
pub mod model;
pub mod pad;
pub mod quantize;
pub mod transforms;

pub use config::{CodecConfig, HYPER_STRIDE, LATENT_STRIDE};
pub use model::{config_path, CodecModel, Condition, Network, TrainOutput};
pub use pad::{crop, pad_to_multiple};
pub use quantize::{add_uniform_noise, dequantize, quantize, symbols};
