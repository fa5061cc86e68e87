//! N-gram Swin Transformer Block and its parts.

pub mod attention;
pub mod block;
pub mod mlp;
pub mod ngram;
pub mod window;

pub use attention::{cosine_window_attention, relative_index, WindowAttention};
pub use block::{Nstb, NstbConfig};
pub use mlp::TagMlp;
pub use ngram::{broadcast_context, window_sum, NGramContext, UnigramEmbed};
pub use window::{effective_window, window_merge, window_partition, WindowGrid};
