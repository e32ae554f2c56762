//! Noise-prediction training with condition dropout.

use rand::seq::SliceRandom;

use super::steps::q_sample;
use super::NoiseSchedule;
use crate::dct::DctBasis;
use crate::denoiser::{Denoise, DenoiseBatch, Denoiser};
use crate::error::{Error, Result};
use crate::motion::{pad_observation, Sample};
use crate::optim::Adam;
use crate::rng::{self, SeededRng};
use crate::tensor::{Gradients, Graph, ParamStore, Tensor, Var};

/// A [`Denoise`] model whose parameters can be updated in place.
pub trait Trainable: Denoise {
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl Trainable for Denoiser {
    fn params_mut(&mut self) -> &mut ParamStore {
        Denoiser::params_mut(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    /// Probability of replacing the history condition with the null token.
    pub cond_drop: f64,
    /// Windows drawn with replacement per epoch; 0 means one shuffled pass.
    pub samples_per_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            batch_size: 64,
            lr: 3e-4,
            lr_decay: 0.8,
            decay_every: 100,
            cond_drop: 0.2,
            samples_per_epoch: 50_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return Err(Error::Config(format!(
                "cond_drop {} outside [0, 1]",
                self.cond_drop
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be ≥ 0",
                self.lr
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Config(format!(
                "lr decay {} must be > 0",
                self.lr_decay
            )));
        }
        Ok(())
    }

    /// Learning rate used throughout `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-window loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: u64,
}

/// DCT targets of one window: `y0 = D·[x_obs; x_fut]`, `c = D·pad(x_obs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub y0: Tensor,
    pub cond: Tensor,
}

pub fn prepare_items(samples: &[Sample], basis: &DctBasis) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .map(|s| {
            if s.obs_frames() + s.future_frames() != basis.frames() {
                return Err(Error::dim(format!(
                    "window of {} frames for a {}-frame basis",
                    s.obs_frames() + s.future_frames(),
                    basis.frames()
                )));
            }
            Ok(TrainItem {
                y0: basis.forward(&s.full())?,
                cond: basis.forward(&pad_observation(&s.observation, s.future_frames())?)?,
            })
        })
        .collect()
}

/// Inputs for one batched loss evaluation. Tensors are stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub y0: Tensor,
    pub cond: Tensor,
    pub eps: Tensor,
    pub steps: Vec<usize>,
    pub drop: Vec<bool>,
}

/// `mean‖ε − ε_θ(√ᾱ_t·y0 + √(1−ᾱ_t)·ε, c, t)‖²` over every element of the batch.
pub fn batch_loss<M: Denoise + ?Sized>(
    g: &mut Graph<'_>,
    model: &M,
    batch: &LossBatch,
    schedule: &NoiseSchedule,
) -> Result<Var> {
    let b = batch.steps.len();
    if b == 0 || batch.drop.len() != b || !batch.y0.rows().is_multiple_of(b) {
        return Err(Error::dim("inconsistent loss batch"));
    }
    if batch.eps.shape() != batch.y0.shape() {
        return Err(Error::dim("noise and target shapes differ"));
    }
    let l = batch.y0.rows() / b;
    let mut noisy = Vec::with_capacity(b);
    for (i, &t) in batch.steps.iter().enumerate() {
        let y0 = batch.y0.slice_rows(i * l, (i + 1) * l);
        let eps = batch.eps.slice_rows(i * l, (i + 1) * l);
        noisy.push(q_sample(&y0, t, &eps, schedule)?);
    }
    let input = DenoiseBatch {
        noisy: Tensor::vstack(&noisy.iter().collect::<Vec<_>>())?,
        cond: batch.cond.clone(),
        steps: batch.steps.clone(),
        use_null: batch.drop.clone(),
    };
    let pred = model.forward(g, &input)?;
    let target = g.constant(batch.eps.clone());
    let diff = g.sub(pred, target)?;
    Ok(g.mean_square(diff))
}

/// Loss and parameter gradients for a single window.
pub fn diffusion_loss<M: Denoise + ?Sized>(
    model: &M,
    y0: &Tensor,
    cond: &Tensor,
    t: usize,
    eps: &Tensor,
    drop_condition: bool,
    schedule: &NoiseSchedule,
) -> Result<(f64, Gradients)> {
    let batch = LossBatch {
        y0: y0.clone(),
        cond: cond.clone(),
        eps: eps.clone(),
        steps: vec![t],
        drop: vec![drop_condition],
    };
    let mut g = Graph::new(model.params());
    let loss = batch_loss(&mut g, model, &batch, schedule)?;
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss)?))
}

fn draw_batch(
    items: &[TrainItem],
    idx: &[usize],
    schedule: &NoiseSchedule,
    cond_drop: f64,
    rng: &mut SeededRng,
) -> Result<LossBatch> {
    let (l, w) = (items[0].y0.rows(), items[0].y0.cols());
    let mut steps = Vec::with_capacity(idx.len());
    let mut drop = Vec::with_capacity(idx.len());
    let mut eps = Vec::with_capacity(idx.len() * l * w);
    for _ in idx {
        steps.push(rng::int_inclusive(rng, 1, schedule.steps()));
        eps.extend(rng::normal_vec(rng, l * w));
        drop.push(rng::bernoulli(rng, cond_drop));
    }
    let y0: Vec<&Tensor> = idx.iter().map(|&i| &items[i].y0).collect();
    let cond: Vec<&Tensor> = idx.iter().map(|&i| &items[i].cond).collect();
    Ok(LossBatch {
        y0: Tensor::vstack(&y0)?,
        cond: Tensor::vstack(&cond)?,
        eps: Tensor::new([idx.len() * l, w], eps)?,
        steps,
        drop,
    })
}

/// Trains `model` with Adam. `on_epoch(epoch, mean_loss)` runs after each epoch.
pub fn train<M: Trainable + ?Sized>(
    model: &mut M,
    samples: &[Sample],
    schedule: &NoiseSchedule,
    basis: &DctBasis,
    cfg: &TrainConfig,
    mut on_epoch: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no training windows".into()));
    }
    let items = prepare_items(samples, basis)?;
    let mut rng = rng::seeded(cfg.seed);
    let mut opt = Adam::new(model.params());
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        optimizer_steps: 0,
    };

    for epoch in 0..cfg.epochs {
        let order: Vec<usize> = if cfg.samples_per_epoch == 0 {
            let mut o: Vec<usize> = (0..items.len()).collect();
            o.shuffle(&mut rng);
            o
        } else {
            (0..cfg.samples_per_epoch)
                .map(|_| rng::int_inclusive(&mut rng, 0, items.len() - 1))
                .collect()
        };
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = draw_batch(&items, idx, schedule, cfg.cond_drop, &mut rng)?;
            let (loss, grads) = {
                let mut g = Graph::new(model.params());
                let loss = batch_loss(&mut g, &*model, &batch, schedule).map_err(|e| match e {
                    Error::NonFinite(what) => Error::Training {
                        epoch,
                        step,
                        msg: format!("non-finite value in {what}"),
                    },
                    other => other,
                })?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        step,
                        msg: format!("loss is {value}"),
                    });
                }
                (value, g.backward(loss)?)
            };
            if !grads.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step,
                    msg: "non-finite gradient".into(),
                });
            }
            opt.step(model.params_mut(), &grads, lr);
            total += loss * idx.len() as f64;
        }
        let mean = total / order.len() as f64;
        report.epoch_losses.push(mean);
        if let Some(f) = on_epoch.as_mut() {
            f(epoch, mean);
        }
    }
    report.optimizer_steps = opt.steps_taken();
    Ok(report)
}
