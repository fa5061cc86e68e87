//! Rate-distortion objective, QIndex-to-λ mapping and the training loop.

pub mod adam;
pub mod lambda;
pub mod loss;
pub mod roi;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use lambda::{lambda_of_qindex, LAMBDA_MAX, LAMBDA_MIN};
pub use loss::{mse, rate_term, rd_loss, weight_field, weighted_distortion, weighted_distortion_var, LossTerms, PIXEL_SCALE};
pub use roi::{rasterize, sample_roi_mask, sample_roi_shapes, RoiShape, ROI_BACKGROUND};
pub use trainer::{smoothed, PatchSource, Phase, StepLog, TrainConfig, Trainer};
