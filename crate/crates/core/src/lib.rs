//! Graph-enhanced contrastive summarization for radiology findings.
//!
//! The pipeline: WordPiece-tokenize a findings section, build a directed
//! relation graph over its subwords from entity and dependency annotations,
//! encode text with a compact Transformer and relations with a graph
//! attention network, fuse the two, and decode an impression. Training adds a
//! contrastive objective that separates key-token representations from
//! non-key ones. Everything runs on a small self-contained f32 tensor engine
//! with reverse-mode autodiff.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod contrastive;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod graph;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
