//! Command-line surface of the codec: configuration, dataset ingestion and
//! the train/encode/decode/eval/sweep/bdrate/bitmap commands.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use commands::{
    cmd_bdrate, cmd_bitmap, cmd_decode, cmd_encode, cmd_eval, cmd_sweep, cmd_train, format_percent, EncodeReport, EvalRow,
    TrainReport,
};
pub use config::{parse_q_list, Config, Overrides};
pub use error::{CliError, Result};
