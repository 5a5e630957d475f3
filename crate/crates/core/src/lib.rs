//! Spectral tracking of hidden-activation streams.
//!
//! Per-token activation frames are stacked into a sliding window, the
//! window's singular values are turned into a fixed 22-slot spectral feature
//! vector, and the resulting feature trajectory is scored by a small
//! recurrent classifier (RNN, GRU or LSTM). The crate also carries the
//! random-matrix references used to validate the features, a synthetic
//! stream generator, and the evaluation protocols (AUROC/F1, window and
//! prefix sweeps, triplet ablation, Shapley attribution).

pub mod activation_io;
pub mod config;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mp;
pub mod pipeline;
pub mod recurrent;
pub mod spectral;
pub mod synthetic;

pub use error::{ConfigError, DumpError, EvalError, ModelError, SpectralError};
