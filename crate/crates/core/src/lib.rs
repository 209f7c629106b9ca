//! Zero-exemplar event ranking.
//!
//! An event query is matched against a vocabulary of concept detectors in a
//! word-embedding space; the most relevant detectors are composed per video
//! with weights learned jointly with an adaptive neighbor graph under an
//! infinite-push ranking loss, supervised only by weakly described videos.

// `!(x > 0.0)` is used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod composer;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod semantic;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
