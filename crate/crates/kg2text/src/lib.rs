//! Few-shot knowledge-graph-to-text generation.
//!
//! The pipeline: a token-level relational graph convolutional encoder turns
//! an input KG into entity embeddings; a relation-biased traversal linearizes
//! the graph into an entity sequence; a small encoder-decoder generates text
//! from the projected graph embeddings with a copy mechanism; training
//! combines the language-model loss with copy, representation-alignment, and
//! graph-reconstruction objectives.

pub mod error;
pub mod kg;
pub mod linearize;
pub mod losses;
pub mod model;
pub mod rgcn;
pub mod tape;
pub mod tokenizer;

pub use error::{Error, Result};
