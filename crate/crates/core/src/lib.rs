//! Data-free zero-shot learning.
//!
//! A data owner keeps real visual features behind a teacher server. A client
//! trains a conditional feature generator and a student classifier using only
//! class semantic embeddings, labels and the teacher's feedback, then
//! classifies real test features in the conventional and generalised
//! zero-shot settings.

pub mod cli;
pub mod client;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod numkit;
pub mod protocol;
pub mod seed;
pub mod teacher;

pub use error::{Error, Result};
