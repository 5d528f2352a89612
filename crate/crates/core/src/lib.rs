//! Multi-label zero-shot classification by propagating over a class
//! knowledge graph that is extended with auxiliary (external) classes.
//!
//! Pipeline: a Wu-Palmer taxonomy graph over seen, unseen and auxiliary
//! classes; target-class node states from image features and class
//! embeddings; auxiliary node states inferred by a conditional VAE from the
//! auxiliary classifier probabilities; a graph convolution whose edge
//! weights are scored from embedding pairs; a shared sigmoid head.

pub mod checkpoint;
pub mod data;
pub mod diffcore;
pub mod embeddings;
pub mod error;
pub mod graph;
pub mod model;
pub mod taxonomy;
pub mod train_eval;

pub use error::{Error, Result};
