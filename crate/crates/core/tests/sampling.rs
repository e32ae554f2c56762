//! Reverse-process behavior with stub and small real denoisers.

use motion_diffusion::dct::dct_basis;
use motion_diffusion::denoiser::{Denoise, DenoiseBatch, Denoiser, DenoiserConfig};
use motion_diffusion::diffusion::{
    cosine_schedule, sample_chains, sample_prediction, NoiseSchedule, SamplerMode, SamplerOptions,
    StepRecord, COSINE_S,
};
use motion_diffusion::error::Result;
use motion_diffusion::rng;
use motion_diffusion::tensor::{Graph, ParamStore, Tensor, Var};
use motion_diffusion::Error;

/// Exact noise predictor when every training target equals `target`:
/// `ε̂ = (y_t − √ᾱ_t·y0)/√(1−ᾱ_t)`.
struct PointMass {
    target: Tensor,
    schedule: NoiseSchedule,
    params: ParamStore,
}

impl PointMass {
    fn new(target: Tensor, schedule: NoiseSchedule) -> Self {
        Self {
            target,
            schedule,
            params: ParamStore::new(),
        }
    }
}

impl Denoise for PointMass {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var> {
        let l = self.target.rows();
        let mut out = batch.noisy.clone();
        for (i, &t) in batch.steps.iter().enumerate() {
            let ab = self.schedule.alpha_bar(t);
            for r in 0..l {
                let row = out.row_mut(i * l + r);
                for (c, v) in row.iter_mut().enumerate() {
                    *v = (*v - ab.sqrt() * self.target.get(r, c)) / (1.0 - ab).sqrt();
                }
            }
        }
        Ok(g.constant(out))
    }
}

/// Predicts `ε̂ = 0` for every input.
struct Zero(ParamStore);

impl Denoise for Zero {
    fn params(&self) -> &ParamStore {
        &self.0
    }

    fn forward(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var> {
        Ok(g.constant(Tensor::zeros(batch.noisy.shape().to_vec())))
    }
}

/// Returns NaN from the first call on.
struct Broken(ParamStore);

impl Denoise for Broken {
    fn params(&self) -> &ParamStore {
        &self.0
    }

    fn forward(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var> {
        Ok(g.constant(Tensor::full(batch.noisy.shape().to_vec(), f64::NAN)))
    }
}

fn motion(frames: usize, width: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let phase: Vec<f64> = rng::uniform_vec(&mut r, width, 0.0, 6.0);
    let data = (0..frames * width)
        .map(|i| {
            let (t, c) = (i / width, i % width);
            0.3 * ((t as f64) * 0.05 + phase[c]).sin()
        })
        .collect();
    Tensor::new([frames, width], data).unwrap()
}

fn opts(mode: SamplerMode, steps: usize) -> SamplerOptions {
    SamplerOptions {
        mode,
        ddim_steps: steps,
        seed: 3,
        ..SamplerOptions::default()
    }
}

#[test]
fn exact_denoiser_recovers_a_point_mass() {
    let (h, f, w) = (6, 14, 3);
    let basis = dct_basis(h + f, h + f).unwrap();
    let x = motion(h + f, w, 1);
    let schedule = cosine_schedule(100, COSINE_S).unwrap();
    let model = PointMass::new(basis.forward(&x).unwrap(), schedule.clone());
    let obs = x.slice_rows(0, h);
    for o in [
        opts(SamplerMode::Ddpm, 1),
        opts(SamplerMode::Ddim, 100),
        opts(SamplerMode::Ddim, 20),
    ] {
        let out = sample_prediction(&obs, &model, &schedule, &basis, &o).unwrap();
        assert!(
            out.max_abs_diff(&x) < 1e-6,
            "{:?}: {}",
            o.mode,
            out.max_abs_diff(&x)
        );
    }
}

#[test]
fn output_shape_and_seed_determinism() {
    let (h, f, j) = (15, 60, 5);
    let basis = dct_basis(h + f, 10).unwrap();
    let schedule = cosine_schedule(50, COSINE_S).unwrap();
    let model = Denoiser::new(DenoiserConfig::new(2, 16, 10, 3 * j)).unwrap();
    let obs = motion(h, 3 * j, 2);
    let o = opts(SamplerMode::Ddim, 10);
    let a = sample_prediction(&obs, &model, &schedule, &basis, &o).unwrap();
    let b = sample_prediction(&obs, &model, &schedule, &basis, &o).unwrap();
    assert_eq!(a.shape(), &[75, 15]);
    assert_eq!(a, b);
    let other = SamplerOptions { seed: 4, ..o };
    assert_ne!(
        a,
        sample_prediction(&obs, &model, &schedule, &basis, &other).unwrap()
    );
}

#[test]
fn chains_do_not_depend_on_their_neighbors() {
    let basis = dct_basis(12, 12).unwrap();
    let schedule = cosine_schedule(30, COSINE_S).unwrap();
    let model = Denoiser::new(DenoiserConfig::new(1, 8, 12, 3)).unwrap();
    let obs = motion(4, 3, 5);
    let o = opts(SamplerMode::Ddpm, 1);
    let three = sample_chains(&obs, &model, &schedule, &basis, &o, 3, None).unwrap();
    let shifted = SamplerOptions {
        seed: o.seed + 2,
        ..o.clone()
    };
    let alone = sample_prediction(&obs, &model, &schedule, &basis, &shifted).unwrap();
    assert_eq!(three[2], alone);
}

#[test]
fn full_basis_returns_the_observation_exactly() {
    let (h, f, w) = (5, 10, 6);
    let basis = dct_basis(h + f, h + f).unwrap();
    let schedule = cosine_schedule(40, COSINE_S).unwrap();
    let obs = motion(h, w, 9);
    let model = Denoiser::new(DenoiserConfig::new(3, 16, h + f, w)).unwrap();
    for o in [opts(SamplerMode::Ddpm, 1), opts(SamplerMode::Ddim, 8)] {
        let out = sample_prediction(&obs, &model, &schedule, &basis, &o).unwrap();
        assert!(out.slice_rows(0, h).max_abs_diff(&obs) < 1e-9);
    }
}

#[test]
fn every_step_keeps_the_noisy_observation() {
    let (h, f, w) = (4, 8, 3);
    let basis = dct_basis(h + f, h + f).unwrap();
    let schedule = cosine_schedule(25, COSINE_S).unwrap();
    let obs = motion(h, w, 11);
    let mut worst = 0.0f64;
    let mut steps = 0;
    let mut check = |rec: &StepRecord<'_>| {
        let mixed = basis.inverse(rec.mixed).unwrap().slice_rows(0, h);
        let noisy = basis.inverse(rec.noisy_obs).unwrap().slice_rows(0, h);
        worst = worst.max(mixed.max_abs_diff(&noisy));
        steps += 1;
    };
    sample_chains(
        &obs,
        &Zero(ParamStore::new()),
        &schedule,
        &basis,
        &opts(SamplerMode::Ddpm, 1),
        2,
        Some(&mut check),
    )
    .unwrap();
    assert_eq!(steps, 2 * 25);
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn ddim_with_zero_eta_ignores_per_step_noise_except_observation() {
    let basis = dct_basis(12, 12).unwrap();
    let schedule = cosine_schedule(30, COSINE_S).unwrap();
    let obs = motion(4, 3, 5);
    let model = Denoiser::new(DenoiserConfig::new(1, 8, 12, 3)).unwrap();
    let o = opts(SamplerMode::Ddim, 10);
    let a = sample_prediction(&obs, &model, &schedule, &basis, &o).unwrap();
    let b = sample_prediction(&obs, &model, &schedule, &basis, &o).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn guidance_weight_batches_an_unconditional_pass() {
    let basis = dct_basis(12, 6).unwrap();
    let schedule = cosine_schedule(20, COSINE_S).unwrap();
    let obs = motion(4, 3, 5);
    let mut model = Denoiser::new(DenoiserConfig::new(1, 8, 6, 3)).unwrap();
    let store = model.params_mut();
    let mut r = rng::seeded(1);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v = 0.2 * rng::standard_normal(&mut r);
        }
    }
    let plain = opts(SamplerMode::Ddim, 5);
    let guided = SamplerOptions {
        guidance_scale: 1.5,
        ..plain.clone()
    };
    let a = sample_prediction(&obs, &model, &schedule, &basis, &plain).unwrap();
    let b = sample_prediction(&obs, &model, &schedule, &basis, &guided).unwrap();
    assert!(a.is_finite() && b.is_finite());
    assert_ne!(a, b);
}

#[test]
fn non_finite_state_names_the_step() {
    let basis = dct_basis(12, 6).unwrap();
    let schedule = cosine_schedule(20, COSINE_S).unwrap();
    let obs = motion(4, 3, 5);
    let err = sample_prediction(
        &obs,
        &Broken(ParamStore::new()),
        &schedule,
        &basis,
        &opts(SamplerMode::Ddpm, 1),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Sampling { step: 20, .. }), "{err}");
}

#[test]
fn invalid_options_are_rejected() {
    let basis = dct_basis(12, 6).unwrap();
    let schedule = cosine_schedule(20, COSINE_S).unwrap();
    let obs = motion(4, 3, 5);
    let model = Zero(ParamStore::new());
    for bad in [
        SamplerOptions {
            ddim_steps: 0,
            ..SamplerOptions::default()
        },
        SamplerOptions {
            ddim_steps: 21,
            ..SamplerOptions::default()
        },
        SamplerOptions {
            mode: SamplerMode::Ddpm,
            eta: 1.5,
            ..SamplerOptions::default()
        },
        SamplerOptions {
            mode: SamplerMode::Ddpm,
            guidance_scale: -1.0,
            ..SamplerOptions::default()
        },
    ] {
        assert!(matches!(
            sample_prediction(&obs, &model, &schedule, &basis, &bad),
            Err(Error::Config(_))
        ));
    }
    let long_obs = motion(12, 3, 5);
    assert!(sample_prediction(
        &long_obs,
        &model,
        &schedule,
        &basis,
        &opts(SamplerMode::Ddpm, 1)
    )
    .is_err());
}
