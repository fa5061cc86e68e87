//! Probability models, range coding and the bitstream container.

pub mod bitstream;
pub mod cdf;
pub mod image;
pub mod likelihood;
pub mod range_coder;

pub use bitstream::{q_from_fixed, q_to_fixed, Bitstream, HEADER_BYTES};
pub use cdf::{CdfTable, SYMBOL_MAX, SYMBOL_MIN, TOTAL_FREQ};
pub use image::{decode_image, encode_image, gaussian_table, z_tables, Decoded, Encoded};
pub use likelihood::{
    gaussian_likelihood, gaussian_mass, logistic_likelihood, logistic_mass, total_bits, LIKELIHOOD_FLOOR, SIGMA_FLOOR,
};
pub use range_coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};
