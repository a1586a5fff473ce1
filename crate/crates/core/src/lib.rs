//! Entropy-based data selection for text classification corpora.
//!
//! Samples are scored with information, generative and semantic entropy,
//! the scores are mapped onto a 0 to 10 scale, and training sets are reduced to
//! the samples whose score falls inside a chosen interval. The best interval
//! is found by evaluating every candidate on a representative subset.

pub mod corpus;
pub mod entropy;
pub mod pipeline;
pub mod scoring;
pub mod search;
pub mod selection;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
