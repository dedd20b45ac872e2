//! Tokenization-strategy benchmark for named entity recognition.
//!
//! The pipeline cleans a wiki-style corpus, tokenizes it under one of several
//! strategies (whole words, characters, character n-grams, byte pair
//! encoding), trains skip-gram embeddings over the token stream, propagates
//! BIO entity tags onto the sub-token boundaries, fits a multinomial
//! logistic-regression tagger with the SAGA solver and scores it with
//! accuracy, unweighted macro F1 and per-class precision/recall.
//!
//! Numerical code (`embed`, `classify`) is generic over the scalar type via
//! [`Real`]; the aliases below pin the common instantiations.

// `!(x > 0.0)` is used on purpose so that NaN settings are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bpe;
pub mod classify;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod metrics;
pub mod nerdata;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod tokenize;

pub use error::{Error, Result};
pub use scalar::Real;

/// Embedding table with double-precision vectors.
pub type EmbeddingTable64 = embed::EmbeddingTable<f64>;
/// Embedding table with single-precision vectors.
pub type EmbeddingTable32 = embed::EmbeddingTable<f32>;
pub type FeatureSet64 = classify::FeatureSet<f64>;
pub type FeatureSet32 = classify::FeatureSet<f32>;
pub type SoftmaxModel64 = classify::SoftmaxModel<f64>;
pub type SoftmaxModel32 = classify::SoftmaxModel<f32>;
pub type Matrix64 = classify::Matrix<f64>;

/// Scalar type used by the experiment pipeline.
pub type PipelineScalar = f64;
