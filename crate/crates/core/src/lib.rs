//! Synthetic query generation for retrieval: prompt rendering, generation
//! over a wire backend, query scoring and filtering, preference-triplet
//! construction for CPO, reranker training export, and nDCG evaluation.

pub mod corpus;
pub mod cpo;
pub mod error;
pub mod eval;
pub mod filter;
pub mod generate;
pub mod prompt;
pub mod rerank;
pub mod score;
pub mod seed;
pub mod trec;

pub use error::{BackendError, Error, Result};
