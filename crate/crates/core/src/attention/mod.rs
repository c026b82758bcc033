//! Unit-wise spatial-temporal masking, THW-decoupled multi-head attention and
//! unit-granular KV caching.

mod attend;
mod cache;
mod mask;

pub use attend::{attend, attention_core, AttentionLayer, AttentionWeights};
pub use cache::{KVCache, LayerKV};
pub use mask::{build_mask, AttentionMask};
