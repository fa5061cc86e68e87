mod conv;
mod elementwise;
mod linear;
mod norm;
mod shape;

pub use conv::{Conv2dSpec, Padding};
pub use elementwise::gelu_tanh_scalar;
pub use norm::LAYER_NORM_EPS;
pub use shape::{build_index, row_major_strides};
