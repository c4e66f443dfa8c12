//! Grounded textual entailment: a small reverse-mode differentiation engine
//! and the LSTM, V-LSTM, BiMPM, V-BiMPM and region-attention models built on
//! it, together with training, tagging, agreement statistics and evaluation.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the feature
//! store on disk and the command line live in the `gte` companion crate.

#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod encoders;
mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod matching;
pub mod models;
pub mod rng;
pub mod stats;
pub mod tagging;
pub mod tensor;
pub mod train;

pub use autodiff::{grad_check, grad_check_params, Gradients, Graph, ParamId, ParamSet, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
