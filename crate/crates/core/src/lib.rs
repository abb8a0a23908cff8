//! Perceptual noise masking by spectral envelope shaping.
//!
//! The crate filters a music signal so that its simultaneous-masking
//! thresholds rise above an ambient noise, while keeping the A-weighted
//! level of the music close to the original. It contains the analysis
//! chain (STFT, Bark bands, masking thresholds), the gain-to-response
//! shaping stage, a baseline equalizer, a constrained gradient solver, a
//! small trainable gain predictor, a synthetic scene generator and the
//! NMR/GLD evaluation harness.

pub mod bark;
pub mod error;
pub mod evaluation;
pub mod export;
pub mod gain_solvers;
pub mod masking;
pub mod pipeline;
pub mod predictor;
pub mod scene;
pub mod shaping;
pub mod signal_io;

pub use error::{Error, Result};
