//! Unified named-entity recognition as word-word relation classification.
//!
//! A sentence's entities (flat, nested, or discontinuous) are encoded as an
//! N×N grid of relations between word pairs: `NNW` links consecutive words
//! of a mention in the upper triangle, `THW-t` links a mention's tail word
//! to its head word in the lower triangle and carries the entity type. The
//! crate provides the lossless codec between entity sets and grids, a DFS
//! grid decoder, a compact trainable model (conditional layer normalization,
//! multi-granularity dilated convolutions, biaffine + MLP co-predictor),
//! explicit-gradient training with AdamW, exact-match evaluation, and data
//! tooling, all tied together by the `w2grid` CLI.

pub mod cli;
pub mod codec;
pub mod data;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod train;
pub mod types;

pub use codec::{decode_grid, encode_grid, CodecError, DecodeOptions};
pub use types::{Entity, LabelSet, RelationGrid, Sentence};
