//! Word-level tag-sequence generation.
//!
//! A two-layer bidirectional LSTM encodes the source words; a four-layer
//! attention decoder with per-tag (local) positional encoding emits tag
//! words separated by a delimiter symbol. Decoding uses beam search with
//! N-best voting, and the crate ships its own small autodiff engine for
//! training.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod par;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
