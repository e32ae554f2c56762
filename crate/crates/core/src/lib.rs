//! Stochastic human motion prediction with a DCT-space denoising diffusion
//! model and an SE-Transformer noise predictor, built on a small f64
//! reverse-mode autodiff engine.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dct;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
