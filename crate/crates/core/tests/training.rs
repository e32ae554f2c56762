//! Training loop and loss behavior.

use std::cell::RefCell;

use motion_diffusion::dct::dct_basis;
use motion_diffusion::denoiser::{Denoise, DenoiseBatch, Denoiser, DenoiserConfig};
use motion_diffusion::diffusion::{
    cosine_schedule, diffusion_loss, q_sample, train, TrainConfig, Trainable, COSINE_S,
};
use motion_diffusion::error::Result;
use motion_diffusion::motion::Sample;
use motion_diffusion::rng;
use motion_diffusion::tensor::{Graph, ParamStore, Tensor, Var};
use motion_diffusion::Error;

fn sample(h: usize, f: usize, w: usize, seed: u64) -> Sample {
    let mut r = rng::seeded(seed);
    let phase = rng::uniform_vec(&mut r, w, 0.0, 6.0);
    let row = |t: usize| {
        (0..w)
            .map(|c| 0.4 * (t as f64 * 0.1 + phase[c]).sin())
            .collect::<Vec<_>>()
    };
    Sample {
        observation: Tensor::from_rows(&(0..h).map(row).collect::<Vec<_>>()).unwrap(),
        future: Tensor::from_rows(&(h..h + f).map(row).collect::<Vec<_>>()).unwrap(),
        source: 0,
        offset: 0,
    }
}

fn config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr,
        lr_decay: 0.8,
        decay_every: 100,
        cond_drop: 0.2,
        samples_per_epoch: 8,
        seed: 5,
    }
}

fn noise(l: usize, w: usize, seed: u64) -> Tensor {
    Tensor::new([l, w], rng::normal_vec(&mut rng::seeded(seed), l * w)).unwrap()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let basis = dct_basis(10, 5).unwrap();
    let schedule = cosine_schedule(20, COSINE_S).unwrap();
    let mut model = Denoiser::new(DenoiserConfig::new(2, 8, 5, 3)).unwrap();
    let before = model.clone();
    let data = [sample(4, 6, 3, 1), sample(4, 6, 3, 2)];
    let report = train(&mut model, &data, &schedule, &basis, &config(1, 0.0), None).unwrap();
    assert_eq!(report.optimizer_steps, 2);
    assert_eq!(model, before);
}

#[test]
fn single_window_overfits() {
    let basis = dct_basis(10, 5).unwrap();
    let schedule = cosine_schedule(20, COSINE_S).unwrap();
    let mut model = Denoiser::new(DenoiserConfig::new(2, 16, 5, 3)).unwrap();
    let data = [sample(4, 6, 3, 3)];
    let cfg = TrainConfig {
        batch_size: 1,
        samples_per_epoch: 1,
        cond_drop: 0.0,
        ..config(200, 1e-3)
    };
    let report = train(&mut model, &data, &schedule, &basis, &cfg, None).unwrap();
    assert_eq!(report.optimizer_steps, 200);

    // Fixed probe: mean loss over every step with shared noise.
    let item_y0 = basis.forward(&data[0].full()).unwrap();
    let cond = basis
        .forward(&motion_diffusion::motion::pad_observation(&data[0].observation, 6).unwrap())
        .unwrap();
    let probe = |m: &Denoiser| -> f64 {
        (1..=20)
            .map(|t| {
                diffusion_loss(
                    m,
                    &item_y0,
                    &cond,
                    t,
                    &noise(5, 3, t as u64),
                    false,
                    &schedule,
                )
                .unwrap()
                .0
            })
            .sum::<f64>()
            / 20.0
    };
    let fresh = Denoiser::new(DenoiserConfig::new(2, 16, 5, 3)).unwrap();
    assert!(
        probe(&model) < probe(&fresh),
        "{} vs {}",
        probe(&model),
        probe(&fresh)
    );
    let first = report.epoch_losses[..20].iter().sum::<f64>() / 20.0;
    let last = report.epoch_losses[180..].iter().sum::<f64>() / 20.0;
    assert!(last < first, "{last} vs {first}");
}

/// Records every batch it sees and predicts `ε̂ = y_t` or `ε̂ = 0`.
struct Recorder {
    params: ParamStore,
    seen: RefCell<Vec<Vec<bool>>>,
}

impl Denoise for Recorder {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var> {
        self.seen.borrow_mut().push(batch.use_null.clone());
        let bias = g.param(self.params.ids().next().unwrap());
        let zero = g.constant(Tensor::zeros(batch.noisy.shape().to_vec()));
        let rows = g.gather_rows(bias, vec![0; batch.noisy.rows()])?;
        let out = g.mul(zero, rows)?;
        Ok(out)
    }
}

impl Trainable for Recorder {
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

#[test]
fn full_condition_drop_always_uses_the_null_token() {
    let basis = dct_basis(10, 5).unwrap();
    let schedule = cosine_schedule(20, COSINE_S).unwrap();
    let mut params = ParamStore::new();
    params.register("bias", Tensor::zeros([1, 3])).unwrap();
    let mut model = Recorder {
        params,
        seen: RefCell::new(Vec::new()),
    };
    let data = [sample(4, 6, 3, 1), sample(4, 6, 3, 2), sample(4, 6, 3, 3)];
    let cfg = TrainConfig {
        cond_drop: 1.0,
        ..config(3, 1e-3)
    };
    train(&mut model, &data, &schedule, &basis, &cfg, None).unwrap();
    let seen = model.seen.borrow();
    assert_eq!(seen.len(), 6);
    assert!(seen.iter().flatten().all(|&b| b));

    let mut none = Recorder {
        params: model.params.clone(),
        seen: RefCell::new(Vec::new()),
    };
    train(
        &mut none,
        &data,
        &schedule,
        &basis,
        &TrainConfig {
            cond_drop: 0.0,
            ..cfg
        },
        None,
    )
    .unwrap();
    assert!(none.seen.borrow().iter().flatten().all(|&b| !b));
}

/// Predicts the exact injected noise for one known `y0`.
struct Oracle {
    params: ParamStore,
    y0: Tensor,
    alpha_bar: Vec<f64>,
}

impl Denoise for Oracle {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn forward(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var> {
        let ab = self.alpha_bar[batch.steps[0]];
        let eps = batch.noisy.axpby(
            1.0 / (1.0 - ab).sqrt(),
            &self.y0,
            -ab.sqrt() / (1.0 - ab).sqrt(),
        )?;
        Ok(g.constant(eps))
    }
}

#[test]
fn loss_of_perfect_and_silent_predictors() {
    let schedule = cosine_schedule(50, COSINE_S).unwrap();
    let y0 = noise(6, 4, 1);
    let cond = noise(6, 4, 2);
    let oracle = Oracle {
        params: ParamStore::new(),
        y0: y0.clone(),
        alpha_bar: schedule.alpha_bars().to_vec(),
    };
    for t in [1, 25, 50] {
        let eps = noise(6, 4, 10 + t as u64);
        let (loss, _) = diffusion_loss(&oracle, &y0, &cond, t, &eps, false, &schedule).unwrap();
        assert!(loss < 1e-20, "t={t}: {loss}");
    }

    struct Silent(ParamStore);
    impl Denoise for Silent {
        fn params(&self) -> &ParamStore {
            &self.0
        }
        fn forward(&self, g: &mut Graph<'_>, batch: &DenoiseBatch) -> Result<Var> {
            Ok(g.constant(Tensor::zeros(batch.noisy.shape().to_vec())))
        }
    }
    let (l, w) = (20, 30);
    let eps = noise(l, w, 3);
    let (loss, _) = diffusion_loss(
        &Silent(ParamStore::new()),
        &noise(l, w, 4),
        &noise(l, w, 5),
        10,
        &eps,
        false,
        &schedule,
    )
    .unwrap();
    let mean_sq = eps.data().iter().map(|v| v * v).sum::<f64>() / (l * w) as f64;
    assert!((loss - mean_sq).abs() < 1e-12);
    assert!((loss - 1.0).abs() < 0.15, "{loss}");
}

#[test]
fn q_sample_mean_matches_the_closed_form() {
    let schedule = cosine_schedule(100, COSINE_S).unwrap();
    let y0 = Tensor::new([2, 3], vec![1.0, -0.5, 2.0, 0.0, 0.3, -1.2]).unwrap();
    let t = 50;
    let ab = schedule.alpha_bar(t);
    let n = 10_000;
    let mut r = rng::seeded(8);
    let mut sum = [0.0; 6];
    for _ in 0..n {
        let eps = Tensor::new([2, 3], rng::normal_vec(&mut r, 6)).unwrap();
        for (s, v) in sum
            .iter_mut()
            .zip(q_sample(&y0, t, &eps, &schedule).unwrap().data())
        {
            *s += v;
        }
    }
    let se = ((1.0 - ab) / n as f64).sqrt();
    for (s, &y) in sum.iter().zip(y0.data()) {
        assert!((s / n as f64 - ab.sqrt() * y).abs() < 4.0 * se);
    }
}

#[test]
fn empty_dataset_and_bad_config_are_rejected() {
    let basis = dct_basis(10, 5).unwrap();
    let schedule = cosine_schedule(20, COSINE_S).unwrap();
    let mut model = Denoiser::new(DenoiserConfig::new(1, 8, 5, 3)).unwrap();
    assert!(matches!(
        train(&mut model, &[], &schedule, &basis, &config(1, 1e-3), None),
        Err(Error::EmptyDataset(_))
    ));
    let data = [sample(4, 6, 3, 1)];
    let bad = TrainConfig {
        batch_size: 0,
        ..config(1, 1e-3)
    };
    assert!(matches!(
        train(&mut model, &data, &schedule, &basis, &bad, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn non_finite_loss_names_epoch_and_step() {
    let basis = dct_basis(10, 5).unwrap();
    let schedule = cosine_schedule(20, COSINE_S).unwrap();
    let mut model = Denoiser::new(DenoiserConfig::new(1, 8, 5, 3)).unwrap();
    let mut data = vec![sample(4, 6, 3, 1)];
    data[0].future.set(2, 1, f64::NAN);
    let err = train(&mut model, &data, &schedule, &basis, &config(2, 1e-3), None).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Training {
                epoch: 0,
                step: 0,
                ..
            }
        ),
        "{err}"
    );
}
