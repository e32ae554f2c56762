use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Upper clip on any single-step β.
pub const MAX_BETA: f64 = 0.999;
/// Offset of the cosine schedule; keeps β small near t = 0.
pub const COSINE_S: f64 = 0.008;

/// Per-step constants of a `T`-step Gaussian diffusion.
///
/// Tables are indexed by step: `beta[t]`, `alpha[t]`, `sigma[t]` for
/// `t = 1..=T` (slot 0 holds a zero placeholder), `alpha_bar[t]` for
/// `t = 0..=T` with `alpha_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the tables from `β_1..β_T`; `ᾱ` is the running product of `α`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("a schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..=MAX_BETA).contains(*b)) {
            return Err(Error::Config(format!("beta {b} outside [0, {MAX_BETA}]")));
        }
        let steps = betas.len();
        let mut beta = vec![0.0; steps + 1];
        let mut alpha = vec![0.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        let mut sigma = vec![0.0; steps + 1];
        for t in 1..=steps {
            beta[t] = betas[t - 1];
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
            let denom = 1.0 - alpha_bar[t];
            sigma[t] = if denom > 0.0 {
                ((1.0 - alpha_bar[t - 1]) / denom * beta[t]).sqrt()
            } else {
                0.0
            };
        }
        Ok(Self {
            steps,
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    /// Diffusion step count `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Posterior standard deviation `σ_t` used by the ancestral step.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::Step(format!("step {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }
}

/// Cosine schedule: `ᾱ(t) = f(t)/f(0)`, `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`.
///
/// `β_t = 1 − ᾱ(t)/ᾱ(t−1)` is clipped to [`MAX_BETA`]; the stored `ᾱ` is the
/// running product of the clipped `α`, so it can deviate from the closed form
/// only at the clipped tail.
pub fn cosine_schedule(steps: usize, s: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("a schedule needs at least one step".into()));
    }
    let f = |t: usize| {
        let x = ((t as f64 / steps as f64 + s) / (1.0 + s)) * FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let betas: Vec<f64> = (1..=steps)
        .map(|t| (1.0 - (f(t) / f0) / (f(t - 1) / f0)).clamp(0.0, MAX_BETA))
        .collect();
    NoiseSchedule::from_betas(&betas)
}
