//! Uncertainty-aware group emotion recognition over precomputed individual
//! features: Gaussian embeddings, uncertainty-weighted aggregation, quality
//! filtering, three-branch training and score-level fusion.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod kv;
pub mod losses;
pub mod numerics;
pub mod pipeline;
pub mod quality;
pub mod scoring;

pub use error::{Result, UalError};
