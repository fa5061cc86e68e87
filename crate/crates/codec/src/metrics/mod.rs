//! Quality and rate metrics, RD curves and BD-rate.

pub mod bdrate;
pub mod bitmap;
pub mod psnr;
pub mod rd;

pub use bdrate::{bd_rate, fit_cubic, BD_RATE_METHOD, MIN_OVERLAP_DB};
pub use bitmap::{bit_allocation_map, BitAllocationMap};
pub use psnr::{bpp, psnr, weighted_psnr, RegionPsnr, PSNR_CAP, ROI_THRESHOLD};
pub use rd::{read_rd_csv, sweep_rd, write_gnuplot, write_rd_csv, RdCurve, RdPoint};
