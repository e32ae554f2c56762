//! Single-step primitives of the forward and reverse processes.
//!
//! All states are `L×3J` coefficient matrices.

use super::NoiseSchedule;
use crate::dct::DctBasis;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Closed-form forward sample `y_t = √ᾱ_t·y0 + √(1−ᾱ_t)·ε`.
pub fn q_sample(y0: &Tensor, t: usize, eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    y0.axpby(ab.sqrt(), eps, (1.0 - ab).sqrt())
}

/// Ancestral DDPM update from `y_t` to `y_{t−1}`.
///
/// `z` must be zero at `t = 1`; the sampler enforces this.
pub fn ddpm_step(
    y_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    z: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    schedule.check_step(t)?;
    let beta = schedule.beta(t);
    let coef = if beta == 0.0 {
        0.0
    } else {
        beta / (1.0 - schedule.alpha_bar(t)).sqrt()
    };
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let mean = y_t.axpby(inv_sqrt_alpha, eps_hat, -inv_sqrt_alpha * coef)?;
    mean.axpby(1.0, z, schedule.sigma(t))
}

/// Noise scale of a DDIM jump from `t` to `t_prev`.
pub fn ddim_sigma(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> f64 {
    let (ab_t, ab_prev) = (schedule.alpha_bar(t), schedule.alpha_bar(t_prev));
    if eta == 0.0 || ab_t >= 1.0 {
        return 0.0;
    }
    let v = (1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev);
    eta * v.max(0.0).sqrt()
}

/// Clean-signal estimate `ŷ0 = (y_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
pub fn predict_y0(
    y_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let ab = schedule.alpha_bar(t);
    let s = ab.sqrt();
    y_t.axpby(1.0 / s, eps_hat, -(1.0 - ab).sqrt() / s)
}

/// DDIM update from `y_t` to `y_{t_prev}`; `z` is ignored when `eta = 0`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step(
    y_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    z: &Tensor,
) -> Result<Tensor> {
    schedule.check_step(t)?;
    if t_prev >= t {
        return Err(Error::Step(format!(
            "DDIM jump {t} -> {t_prev} is not backwards"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta {eta} outside [0, 1]")));
    }
    let y0 = predict_y0(y_t, eps_hat, t, schedule)?;
    let ab_prev = schedule.alpha_bar(t_prev);
    let sigma = ddim_sigma(schedule, t, t_prev, eta);
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let out = y0.axpby(ab_prev.sqrt(), eps_hat, dir)?;
    if sigma == 0.0 {
        Ok(out)
    } else {
        out.axpby(1.0, z, sigma)
    }
}

/// `S` evenly spaced steps `t_i = (i−1)·T/S + 1`, visited as `(t_i, t_{i−1})`
/// pairs down to `(1, 0)`.
///
/// With `S = T` this is every step `T..1`. With `S < T` the grid stops short of
/// `T`: the clipped last beta leaves `ᾱ_T` so small that the first jump would
/// amplify any error in `ε̂` by orders of magnitude.
pub fn ddim_timesteps(total: usize, sub_steps: usize) -> Result<Vec<(usize, usize)>> {
    if sub_steps == 0 || sub_steps > total {
        return Err(Error::Config(format!(
            "DDIM steps {sub_steps} must lie in 1..={total}"
        )));
    }
    let at = |i: usize| {
        if i == 0 {
            0
        } else {
            (i - 1) * total / sub_steps + 1
        }
    };
    Ok((1..=sub_steps).rev().map(|i| (at(i), at(i - 1))).collect())
}

/// Classifier-free guidance mix `(1+w)·ε_cond − w·ε_uncond`.
pub fn cfg_mix(eps_cond: &Tensor, eps_uncond: &Tensor, w: f64) -> Result<Tensor> {
    if w == 0.0 {
        return Ok(eps_cond.clone());
    }
    eps_cond.axpby(1.0 + w, eps_uncond, -w)
}

/// Frame mask: ones on the `H` observed frames, zeros on the `F` future ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuidanceMask {
    pub obs_frames: usize,
    pub future_frames: usize,
}

impl GuidanceMask {
    pub fn new(obs_frames: usize, future_frames: usize) -> Self {
        Self {
            obs_frames,
            future_frames,
        }
    }

    pub fn len(&self) -> usize {
        self.obs_frames + self.future_frames
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        let mut m = vec![1.0; self.obs_frames];
        m.resize(self.len(), 0.0);
        m
    }
}

/// `DCT(M ⊙ IDCT(y_obs) + (1−M) ⊙ IDCT(y_den))`, mask applied per frame.
pub fn observation_guidance(
    y_obs: &Tensor,
    y_den: &Tensor,
    mask: &GuidanceMask,
    basis: &DctBasis,
) -> Result<Tensor> {
    if mask.len() != basis.frames() {
        return Err(Error::dim(format!(
            "mask covers {} frames, basis has {}",
            mask.len(),
            basis.frames()
        )));
    }
    let x_obs = basis.inverse(y_obs)?;
    let mut mixed = basis.inverse(y_den)?;
    for t in 0..mask.obs_frames {
        mixed.row_mut(t).copy_from_slice(x_obs.row(t));
    }
    basis.forward(&mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dct::dct_basis;
    use crate::diffusion::{cosine_schedule, COSINE_S};
    use crate::rng;

    fn randn(seed: u64, r: usize, c: usize) -> Tensor {
        let mut g = rng::seeded(seed);
        Tensor::new([r, c], rng::normal_vec(&mut g, r * c)).unwrap()
    }

    #[test]
    fn q_sample_limits() {
        let y0 = randn(1, 4, 3);
        let eps = randn(2, 4, 3);
        let clean = NoiseSchedule::from_betas(&[0.0, 0.5]).unwrap();
        assert_eq!(q_sample(&y0, 1, &eps, &clean).unwrap(), y0);
        let noisy = NoiseSchedule::from_betas(&[0.999; 8]).unwrap();
        assert!(q_sample(&y0, 8, &eps, &noisy).unwrap().max_abs_diff(&eps) < 1e-10);
        assert!(matches!(
            q_sample(&y0, 0, &eps, &noisy),
            Err(Error::Step(_))
        ));
        assert!(matches!(
            q_sample(&y0, 9, &eps, &noisy),
            Err(Error::Step(_))
        ));
    }

    #[test]
    fn ddpm_step_zero_beta_is_identity() {
        let s = NoiseSchedule::from_betas(&[0.1, 0.0, 0.2]).unwrap();
        let y = randn(3, 4, 3);
        let e = randn(4, 4, 3);
        let z = randn(5, 4, 3);
        let out = ddpm_step(&y, &e, 2, &z, &s).unwrap();
        // sigma_2 = 0 as well since beta_2 = 0
        assert_eq!(out, y);
    }

    #[test]
    fn ddpm_step_matches_hand_formula() {
        let s = cosine_schedule(100, COSINE_S).unwrap();
        let y0 = randn(6, 5, 2);
        let eps = randn(7, 5, 2);
        let z = randn(8, 5, 2);
        let t = 37;
        let yt = q_sample(&y0, t, &eps, &s).unwrap();
        let out = ddpm_step(&yt, &eps, t, &z, &s).unwrap();
        let (a, ab, b, sg) = (s.alpha(t), s.alpha_bar(t), s.beta(t), s.sigma(t));
        for i in 0..10 {
            let yti = ab.sqrt() * y0.data()[i] + (1.0 - ab).sqrt() * eps.data()[i];
            let e = (yti - b / (1.0 - ab).sqrt() * eps.data()[i]) / a.sqrt() + sg * z.data()[i];
            assert!((out.data()[i] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn ddim_recovers_clean_signal_with_true_noise() {
        let s = cosine_schedule(100, COSINE_S).unwrap();
        let y0 = randn(9, 5, 2);
        let eps = randn(10, 5, 2);
        let yt = q_sample(&y0, 60, &eps, &s).unwrap();
        assert!(predict_y0(&yt, &eps, 60, &s).unwrap().max_abs_diff(&y0) < 1e-12);
        let z = randn(11, 5, 2);
        let a = ddim_step(&yt, &eps, 60, 40, &s, 0.0, &z).unwrap();
        let b = ddim_step(&yt, &eps, 60, 40, &s, 0.0, &randn(12, 5, 2)).unwrap();
        assert_eq!(a, b);
        // the deterministic jump lands exactly on the forward marginal
        let expect = q_sample(&y0, 40, &eps, &s).unwrap();
        assert!(a.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn ddim_full_eta_matches_ddpm_variance() {
        let s = cosine_schedule(1000, COSINE_S).unwrap();
        for t in 1..=1000 {
            let v = ddim_sigma(&s, t, t - 1, 1.0).powi(2);
            assert!((v - s.sigma(t).powi(2)).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn ddim_ordering_error() {
        let s = cosine_schedule(10, COSINE_S).unwrap();
        let y = randn(1, 2, 2);
        assert!(matches!(
            ddim_step(&y, &y, 3, 3, &s, 0.0, &y),
            Err(Error::Step(_))
        ));
        assert!(matches!(
            ddim_step(&y, &y, 3, 5, &s, 0.0, &y),
            Err(Error::Step(_))
        ));
    }

    #[test]
    fn timestep_subsets() {
        assert_eq!(
            ddim_timesteps(10, 10).unwrap(),
            (1..=10).rev().map(|t| (t, t - 1)).collect::<Vec<_>>()
        );
        let s = ddim_timesteps(1000, 100).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s[0], (991, 981));
        assert_eq!(s[98], (11, 1));
        assert_eq!(s[99], (1, 0));
        assert_eq!(ddim_timesteps(7, 3).unwrap(), vec![(5, 3), (3, 1), (1, 0)]);
        assert_eq!(ddim_timesteps(9, 1).unwrap(), vec![(1, 0)]);
        assert!(ddim_timesteps(5, 6).is_err());
    }

    #[test]
    fn cfg_mix_cases() {
        let c = randn(1, 3, 3);
        let u = randn(2, 3, 3);
        assert_eq!(cfg_mix(&c, &u, 0.0).unwrap(), c);
        for w in [0.5, 1.0, 3.0] {
            assert!(cfg_mix(&c, &c, w).unwrap().max_abs_diff(&c) < 1e-14);
        }
        let two = cfg_mix(&c, &u, 1.0).unwrap();
        let expect = c.axpby(2.0, &u, -1.0).unwrap();
        assert_eq!(two, expect);
    }

    #[test]
    fn guidance_mask_extremes() {
        let basis = dct_basis(12, 5).unwrap();
        let yo = randn(1, 5, 3);
        let yd = randn(2, 5, 3);
        let all_obs = GuidanceMask::new(12, 0);
        let out = observation_guidance(&yo, &yd, &all_obs, &basis).unwrap();
        assert!(out.max_abs_diff(&yo) < 1e-12);
        let none = GuidanceMask::new(0, 12);
        let out = observation_guidance(&yo, &yd, &none, &basis).unwrap();
        assert!(out.max_abs_diff(&yd) < 1e-12);
        let wrong = GuidanceMask::new(3, 3);
        assert!(matches!(
            observation_guidance(&yo, &yd, &wrong, &basis),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn full_rank_guidance_keeps_observed_frames() {
        let basis = dct_basis(10, 10).unwrap();
        let yo = randn(3, 10, 2);
        let yd = randn(4, 10, 2);
        let out = observation_guidance(&yo, &yd, &GuidanceMask::new(4, 6), &basis).unwrap();
        let xo = basis.inverse(&yo).unwrap();
        let xd = basis.inverse(&yd).unwrap();
        let xm = basis.inverse(&out).unwrap();
        for t in 0..4 {
            for c in 0..2 {
                assert!((xm.get(t, c) - xo.get(t, c)).abs() < 1e-12);
            }
        }
        for t in 4..10 {
            for c in 0..2 {
                assert!((xm.get(t, c) - xd.get(t, c)).abs() < 1e-12);
            }
        }
    }
}
