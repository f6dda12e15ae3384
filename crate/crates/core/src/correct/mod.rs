//! Embedding-side corrections: per-prompt embedding optimization and linear
//! projection adapters trained against the frozen pipeline.

mod embed;
mod projection;
mod train;

pub use embed::{
    embedding_examples, embedding_objective, optimize_embedding, optimize_embedding_from, EmbedExample,
    EmbedOptConfig, MaskPreset, TokenMask,
};
pub use projection::{
    clp_apply, projection_backward, wiclp_apply, ProjectionKind, ProjectionParams, DEFAULT_WINDOW_RADIUS,
};
pub use train::{projection_objective, train_projection, train_projection_from, write_loss_csv, LossRow, TrainConfig};

#[cfg(test)]
mod tests;
