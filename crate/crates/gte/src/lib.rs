//! File formats, the on-disk feature store, checkpoints and the `gte`
//! command line around [`gte_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embeddings;
mod error;
pub mod report;
pub mod snli;
pub mod store;
pub mod tables;

pub use error::{IoError, Result};
