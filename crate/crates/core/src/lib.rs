//! Clothing attribute learning and fashion trend statistics.
//!
//! The pipeline runs from annotated image corpora ([`ingest`]) through per-part
//! histogram features ([`features`]), weighted chi-square kernel SVMs
//! ([`svm`]) and fully connected pairwise CRF refinement ([`crf`]) to
//! accuracy reports ([`eval`]) and prevalence/trend analysis ([`trend`]).

// Checks are written as `!(x > 0.0)` on purpose: NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod crf;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod schema;
pub mod svm;
pub mod synth;
pub mod trend;

pub use error::{Error, Result};
