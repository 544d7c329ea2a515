//! Streaming probabilistic similarity join over incomplete data streams.
//!
//! Two sliding windows of records with missing attributes are joined
//! continuously: missing values are imputed on demand from a complete
//! repository using distance-constraint dependency rules, candidate pairs are
//! pruned through bounding-box and sub-box mass arguments, and surviving
//! pairs are refined to exact join probabilities under possible-worlds
//! semantics.

pub mod cli;
pub mod datagen;
pub mod dd;
pub mod engine;
pub mod error;
pub mod grid;
pub mod index;
pub mod io;
pub mod model;
pub mod prune;

pub use error::{Error, Result};
