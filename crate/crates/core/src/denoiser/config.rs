use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How a shallow block's output re-enters its mirror deep block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    /// Concatenate channels, then project `2d → d`.
    Concat,
    /// Elementwise sum, no projection.
    Add,
    None,
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipMode::Concat => "concat",
            SkipMode::Add => "add",
            SkipMode::None => "none",
        })
    }
}

impl FromStr for SkipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(SkipMode::Concat),
            "add" => Ok(SkipMode::Add),
            "none" => Ok(SkipMode::None),
            _ => Err(Error::Config(format!("unknown skip mode `{s}`"))),
        }
    }
}

/// Reduction of the history coefficients into the condition token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondPool {
    /// One linear map over all `L·3J` coefficients at once.
    Flat,
    /// Shared `3J → d` map per row, then the mean over rows.
    Mean,
    /// Shared `3J → d` map per row, then the sum over rows.
    Sum,
}

impl fmt::Display for CondPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CondPool::Flat => "flat",
            CondPool::Mean => "mean",
            CondPool::Sum => "sum",
        })
    }
}

impl FromStr for CondPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(CondPool::Flat),
            "mean" => Ok(CondPool::Mean),
            "sum" => Ok(CondPool::Sum),
            _ => Err(Error::Config(format!("unknown condition pooling `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    /// Number of SE-Transformer blocks.
    pub layers: usize,
    /// Hidden width `d`.
    pub hidden: usize,
    pub heads: usize,
    /// Inner width of the feed-forward network.
    pub ffn: usize,
    /// SE bottleneck is `hidden / se_reduction` wide.
    pub se_reduction: usize,
    /// Retained DCT rows `L`, one token each.
    pub coeff_rows: usize,
    /// Coordinates per frame, `3J`.
    pub features: usize,
    /// Width of the sinusoidal step encoding fed to the step MLP.
    pub step_dim: usize,
    pub skip: SkipMode,
    pub use_se: bool,
    pub cond_pool: CondPool,
    pub init_seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self::new(9, 512, 20, 51)
    }
}

impl DenoiserConfig {
    /// Standard layout for a given depth, width, token count and feature width:
    /// 8 heads (fewer when `hidden` is small), FFN `2d`, SE reduction 4,
    /// step encoding `d/4`.
    pub fn new(layers: usize, hidden: usize, coeff_rows: usize, features: usize) -> Self {
        let heads = [8, 4, 2, 1]
            .into_iter()
            .find(|h| hidden.is_multiple_of(*h) && hidden / h >= 4)
            .unwrap_or(1);
        let se_reduction = if hidden.is_multiple_of(4) { 4 } else { 1 };
        Self {
            layers,
            hidden,
            heads,
            ffn: 2 * hidden,
            se_reduction,
            coeff_rows,
            features,
            step_dim: default_step_dim(hidden),
            skip: SkipMode::Concat,
            use_se: true,
            cond_pool: CondPool::Mean,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return bad("at least one block is required".into());
        }
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            ));
        }
        if self.se_reduction == 0 || !self.hidden.is_multiple_of(self.se_reduction) {
            return bad(format!(
                "SE reduction {} must divide hidden {}",
                self.se_reduction, self.hidden
            ));
        }
        if self.ffn == 0 || self.coeff_rows == 0 || self.features == 0 {
            return bad("ffn, coeff_rows and features must be positive".into());
        }
        if self.step_dim < 2 || !self.step_dim.is_multiple_of(2) {
            return bad(format!("step_dim {} must be even and ≥ 2", self.step_dim));
        }
        Ok(())
    }

    /// Tokens per sequence: one condition token plus `L` coefficient tokens.
    pub fn tokens(&self) -> usize {
        self.coeff_rows + 1
    }

    pub fn se_width(&self) -> usize {
        self.hidden / self.se_reduction
    }

    /// Blocks whose outputs are stashed for a long skip.
    pub fn skip_pairs(&self) -> usize {
        if self.skip == SkipMode::None {
            0
        } else {
            self.layers / 2
        }
    }
}

/// `d/4` rounded up to an even number, at least 2.
pub fn default_step_dim(hidden: usize) -> usize {
    let q = hidden.div_ceil(4).max(2);
    q + q % 2
}
