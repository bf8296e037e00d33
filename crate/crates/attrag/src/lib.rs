//! File formats, endpoint clients and pipeline commands around
//! `attrag-core`.

pub mod artifacts;
pub mod commands;
pub mod embeddings;
pub mod error;
pub mod io;
pub mod llm;
pub mod scorers;

pub use error::{Error, Result};
