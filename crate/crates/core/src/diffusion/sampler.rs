//! Reverse-process sampling with noisy observation guidance.

use std::fmt;
use std::str::FromStr;

use super::steps::{
    cfg_mix, ddim_step, ddim_timesteps, ddpm_step, observation_guidance, GuidanceMask,
};
use super::NoiseSchedule;
use crate::dct::DctBasis;
use crate::denoiser::{predict_noise, Denoise, DenoiseBatch};
use crate::error::{Error, Result};
use crate::motion::pad_observation;
use crate::rng::{self, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Every step `T..1` with the ancestral update.
    Ddpm,
    /// An evenly spaced subset of steps with the DDIM update.
    Ddim,
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerMode::Ddpm => "ddpm",
            SamplerMode::Ddim => "ddim",
        })
    }
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(SamplerMode::Ddpm),
            "ddim" => Ok(SamplerMode::Ddim),
            _ => Err(Error::Config(format!("unknown sampler mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOptions {
    pub mode: SamplerMode,
    /// DDIM step count `S`.
    pub ddim_steps: usize,
    /// DDIM stochasticity `η ∈ [0, 1]`.
    pub eta: f64,
    /// Classifier-free guidance weight `w`; 0 disables the unconditional pass.
    pub guidance_scale: f64,
    pub seed: u64,
    /// Draw separate noise for the observation branch instead of sharing `z`.
    pub independent_noise: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Ddim,
            ddim_steps: 100,
            eta: 0.0,
            guidance_scale: 0.0,
            seed: 0,
            independent_noise: false,
        }
    }
}

impl SamplerOptions {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.mode == SamplerMode::Ddim
            && (self.ddim_steps == 0 || self.ddim_steps > schedule.steps())
        {
            return Err(Error::Config(format!(
                "DDIM steps {} outside 1..={}",
                self.ddim_steps,
                schedule.steps()
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(Error::Config(format!(
                "guidance scale {} must be ≥ 0",
                self.guidance_scale
            )));
        }
        Ok(())
    }

    /// `(t, t_prev)` pairs visited by the sampler.
    pub fn timesteps(&self, schedule: &NoiseSchedule) -> Result<Vec<(usize, usize)>> {
        match self.mode {
            SamplerMode::Ddpm => Ok((1..=schedule.steps()).rev().map(|t| (t, t - 1)).collect()),
            SamplerMode::Ddim => ddim_timesteps(schedule.steps(), self.ddim_steps),
        }
    }
}

/// State of one chain right after a sampler step.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub t: usize,
    pub t_prev: usize,
    pub chain: usize,
    /// Noised observation coefficients `y^O_{t_prev}`.
    pub noisy_obs: &'a Tensor,
    /// Model-driven update `y^D_{t_prev}`.
    pub denoised: &'a Tensor,
    /// Guided state `y_{t_prev}` carried into the next step.
    pub mixed: &'a Tensor,
}

pub type StepObserver<'o> = &'o mut dyn FnMut(&StepRecord<'_>);

/// One full `(H+F)×3J` sample. Uses chain seed `opts.seed`.
pub fn sample_prediction<M: Denoise + ?Sized>(
    obs: &Tensor,
    model: &M,
    schedule: &NoiseSchedule,
    basis: &DctBasis,
    opts: &SamplerOptions,
) -> Result<Tensor> {
    Ok(sample_chains(obs, model, schedule, basis, opts, 1, None)?.remove(0))
}

/// `chains` independent samples; chain `k` is seeded with `opts.seed + k`,
/// so its result does not depend on how many chains run alongside it.
pub fn sample_chains<M: Denoise + ?Sized>(
    obs: &Tensor,
    model: &M,
    schedule: &NoiseSchedule,
    basis: &DctBasis,
    opts: &SamplerOptions,
    chains: usize,
    mut observer: Option<StepObserver<'_>>,
) -> Result<Vec<Tensor>> {
    opts.validate(schedule)?;
    let h = obs.rows();
    if h == 0 || h >= basis.frames() {
        return Err(Error::dim(format!(
            "observation of {h} frames for a {}-frame window",
            basis.frames()
        )));
    }
    if chains == 0 {
        return Ok(Vec::new());
    }
    let mask = GuidanceMask::new(h, basis.frames() - h);
    let (l, w) = (basis.rows(), obs.cols());
    let cond = basis.forward(&pad_observation(obs, mask.future_frames)?)?;

    let mut rngs: Vec<SeededRng> = (0..chains)
        .map(|k| rng::seeded(opts.seed.wrapping_add(k as u64)))
        .collect();
    let mut states: Vec<Tensor> = rngs
        .iter_mut()
        .map(|r| Tensor::new([l, w], rng::normal_vec(r, l * w)))
        .collect::<Result<_>>()?;

    let cfg_on = opts.guidance_scale > 0.0;
    let batch_len = if cfg_on { 2 * chains } else { chains };
    let cond_rows: Vec<&Tensor> = vec![&cond; batch_len];
    let cond_stack = Tensor::vstack(&cond_rows)?;
    let use_null: Vec<bool> = (0..batch_len).map(|i| i >= chains).collect();

    for (t, t_prev) in opts.timesteps(schedule)? {
        let state_refs: Vec<&Tensor> = states.iter().cycle().take(batch_len).collect();
        let batch = DenoiseBatch {
            noisy: Tensor::vstack(&state_refs)?,
            cond: cond_stack.clone(),
            steps: vec![t; batch_len],
            use_null: use_null.clone(),
        };
        let eps_all = predict_noise(model, &batch).map_err(|e| Error::Sampling {
            step: t,
            msg: e.to_string(),
        })?;

        let ab_prev = schedule.alpha_bar(t_prev);
        for (k, r) in rngs.iter_mut().enumerate() {
            let z = if t_prev == 0 {
                Tensor::zeros([l, w])
            } else {
                Tensor::new([l, w], rng::normal_vec(r, l * w))?
            };
            let z_obs = if opts.independent_noise && t_prev > 0 {
                Tensor::new([l, w], rng::normal_vec(r, l * w))?
            } else {
                z.clone()
            };
            let eps_cond = eps_all.slice_rows(k * l, (k + 1) * l);
            let eps_hat = if cfg_on {
                let eps_uncond = eps_all.slice_rows((chains + k) * l, (chains + k + 1) * l);
                cfg_mix(&eps_cond, &eps_uncond, opts.guidance_scale)?
            } else {
                eps_cond
            };

            let noisy_obs = cond.axpby(ab_prev.sqrt(), &z_obs, (1.0 - ab_prev).sqrt())?;
            let denoised = match opts.mode {
                SamplerMode::Ddpm => ddpm_step(&states[k], &eps_hat, t, &z, schedule)?,
                SamplerMode::Ddim => {
                    ddim_step(&states[k], &eps_hat, t, t_prev, schedule, opts.eta, &z)?
                }
            };
            let mixed = observation_guidance(&noisy_obs, &denoised, &mask, basis)?;
            if !mixed.is_finite() {
                return Err(Error::Sampling {
                    step: t,
                    msg: format!("non-finite state in chain {k}"),
                });
            }
            if let Some(obs_fn) = observer.as_mut() {
                obs_fn(&StepRecord {
                    t,
                    t_prev,
                    chain: k,
                    noisy_obs: &noisy_obs,
                    denoised: &denoised,
                    mixed: &mixed,
                });
            }
            states[k] = mixed;
        }
    }

    states.iter().map(|y| basis.inverse(y)).collect()
}
