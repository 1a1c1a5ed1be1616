//! Query-driven evidence localization in long videos.
//!
//! Frames are grouped into segments, segments become nodes of a sparse
//! visual-temporal affinity graph, and a small observation budget is spent on
//! the most promising nodes. Each verified relevance score is diffused over the
//! graph so unobserved segments inherit belief from their neighbors. A diverse,
//! facet-covering subset is finally packaged for an answering model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod facets;
pub mod graph;
pub mod harness;
pub mod providers;
pub mod scoring;
pub mod selection;
pub mod segmenter;
pub mod session;
pub mod text;
pub mod vector;

pub use error::{Error, Result};
