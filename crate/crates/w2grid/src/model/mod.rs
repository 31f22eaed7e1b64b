//! The grid-tagging network: token embeddings → bidirectional recurrent
//! encoder → conditional layer normalization over word pairs → grid
//! build-up with distance/region embeddings → multi-granularity dilated
//! convolutions → biaffine + MLP co-predictor → per-cell softmax and
//! negative log-likelihood loss. Every component has an explicit backward.

mod checkpoint;
mod config;
mod net;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{distance_bucket, region_row, ModelConfig, Toggles, DIST_BUCKETS};
pub use net::{
    biaffine_scores, build_grid, cln_grid, combine_scores, encode_words, forward, grid_loss,
    forward_backward, GridLogits, ModelError, multi_dilated, mlp_scores,
};
pub use params::ModelParams;
