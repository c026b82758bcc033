//! Unified text/image/video serialization.

mod dump;
mod layout;
pub mod manifest;
mod prompt;
mod tokenizer;

pub use dump::{parse_layout_dump, write_layout_dump};
pub use layout::{
    grid_dims, parse_global_prefix, render_global_prefix, render_timestamp, serialize, serialize_default,
    SequenceLayout, TokenKind, TokenRecord, UnitInfo, PATCH_SIZE,
};
pub use prompt::{PromptItem, PromptSpec, Video};
pub use tokenizer::{detokenize, tokenize_text, SpecialToken, TokenId, VOCAB_SIZE};
