//! Native one-vision primitives on a small dense-tensor engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: tensors, a tape-based reverse-mode autograd, AdamW and
//!   finite-difference gradient checking.
//! * [`serializer`]: byte-level tokenizer and the unified text/image/video
//!   serialization into a [`serializer::SequenceLayout`] carrying per-token
//!   unit ids and `(t, h, w)` index triples.
//! * [`patch_embed`]: the two-convolution pixel embedding with an additive
//!   2D sinusoidal table between the convolutions.
//! * [`rope`]: multi-axis rotary embedding over contiguous `[T|H|W]` blocks.
//! * [`attention`]: the unit-wise spatial-temporal mask, decoupled multi-head
//!   attention and unit-granular KV caching.
//! * [`backbone`]: the pre-buffer/post partitioned decoder, staged training,
//!   greedy generation and checkpoints.
//! * [`data`]: deterministic synthetic corpora and the mixture sampler.
//! * [`config`]: the flat `key=value` run configuration.

pub mod attention;
pub mod backbone;
pub mod config;
pub mod data;
mod error;
pub mod image;
pub mod numerics;
pub mod par;
pub mod patch_embed;
pub mod pipeline;
pub mod rope;
pub mod serializer;
mod fsutil;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
