//! The decoder: embeddings, pre-buffer and post blocks, the next-token
//! objective, staged training, greedy decoding and checkpoints.

mod checkpoint;
mod generate;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader};
pub use generate::{generate, generate_uncached};
pub use loss::{nexttoken_loss, nexttoken_loss_value, text_targets, TrainExample};
pub use model::{Backbone, ModelConfig, ModelInput, RMS_EPS};
pub use train::{stage1_patterns, train_stage, StagePlan, StepMetrics};
