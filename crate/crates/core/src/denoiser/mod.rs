//! Noise-prediction network.
//!
//! Each sequence becomes `L+1` tokens: a condition token (step embedding plus
//! pooled history, or a learned null vector in place of the history) followed
//! by one token per noisy DCT row. Tokens pass through `N_b` SE-Transformer
//! blocks; the first `⌊N_b/2⌋` block outputs are stashed and fused LIFO into
//! the last `⌊N_b/2⌋` blocks. The condition token is dropped and a linear head
//! maps each remaining token back to `3J` coordinates.

mod config;
mod model;

pub use config::{default_step_dim, CondPool, DenoiserConfig, SkipMode};
pub use model::{predict_noise, step_encoding, Denoise, DenoiseBatch, Denoiser, ForwardTrace};
