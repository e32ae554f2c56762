//! Trains a small model on synthetic motion and compares best-of-K ADE with
//! the zero-velocity baseline. Takes about eight minutes on one core.
//!
//! ```text
//! cargo run --release --example desk_experiment -- [epochs] [samples_per_epoch] [lr] [batch] [checkpoint]
//! ```

use std::time::Instant;

use motion_diffusion::checkpoint::{save_checkpoint, CheckpointMeta};
use motion_diffusion::dct::dct_basis;
use motion_diffusion::denoiser::{CondPool, Denoiser, DenoiserConfig};
use motion_diffusion::diffusion::{cosine_schedule, train, SamplerOptions, TrainConfig, COSINE_S};
use motion_diffusion::metrics::{ade, evaluate, PredictionSet, Strategy};
use motion_diffusion::motion::{synth_generate, window_dataset, MotionSequence, SynthConfig};
use motion_diffusion::tensor::Tensor;

const JOINTS: usize = 5;
const H: usize = 15;
const F: usize = 60;

fn sequences(first_seed: u64, count: usize, frames: usize) -> Vec<MotionSequence> {
    (0..count)
        .map(|i| {
            synth_generate(&SynthConfig {
                joints: JOINTS,
                frames,
                seed: first_seed + i as u64,
                ..SynthConfig::default()
            })
            .expect("valid synth config")
        })
        .collect()
}

fn main() -> motion_diffusion::Result<()> {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| {
        raw.get(i)
            .map_or(default, |a| a.parse().expect("numeric argument"))
    };
    let epochs = arg(0, 300.0) as usize;
    let per_epoch = arg(1, 512.0) as usize;

    let train_set = window_dataset(&sequences(0, 40, 1000), H, F, 5)?;
    let test_set = window_dataset(&sequences(10_000, 8, 200), H, F, 25)?;
    println!(
        "{} training windows, {} test windows",
        train_set.len(),
        test_set.len()
    );

    let schedule = cosine_schedule(200, COSINE_S)?;
    let basis = dct_basis(H + F, 10)?;
    let mut model = Denoiser::new(DenoiserConfig {
        cond_pool: CondPool::Flat,
        ..DenoiserConfig::new(4, 64, 10, 3 * JOINTS)
    })?;
    println!("{} parameters", model.param_count());

    let cfg = TrainConfig {
        epochs,
        batch_size: arg(3, 32.0) as usize,
        lr: arg(2, 1e-3),
        lr_decay: 0.8,
        decay_every: (epochs / 5).max(1),
        cond_drop: 0.2,
        samples_per_epoch: per_epoch,
        seed: 7,
    };
    let start = Instant::now();
    let mut log = |e: usize, loss: f64| {
        if e.is_multiple_of(25) || e + 1 == epochs {
            println!(
                "epoch {e:>4}  loss {loss:.5}  {:.0}s",
                start.elapsed().as_secs_f64()
            );
        }
    };
    train(
        &mut model,
        &train_set,
        &schedule,
        &basis,
        &cfg,
        Some(&mut log),
    )?;
    if let Some(path) = raw.get(4) {
        let meta = CheckpointMeta {
            steps: 200,
            cosine_s: COSINE_S,
            obs_frames: H,
            future_frames: F,
        };
        save_checkpoint(path, &model, &meta)?;
    }

    let opts = SamplerOptions {
        ddim_steps: 50,
        eta: 1.0,
        guidance_scale: 1.0,
        seed: 1,
        ..SamplerOptions::default()
    };
    let report = evaluate(&model, &test_set, &schedule, &basis, &opts, 10, 0.5)?;

    let baseline: f64 = test_set
        .iter()
        .map(|s| {
            let last = s.last_observed().to_vec();
            let rows = vec![last; F];
            let zero_vel = Tensor::from_rows(&rows).expect("rectangular rows");
            let set = PredictionSet::new(vec![zero_vel], s.future.clone(), vec![s.future.clone()])
                .expect("shapes agree");
            ade(&set, Strategy::Best)
        })
        .sum::<f64>()
        / test_set.len() as f64;

    println!("best-of-10 ADE {:.4}", report.ade.best);
    println!("zero-velocity ADE {baseline:.4}");
    println!("ratio {:.3}", report.ade.best / baseline);
    println!("APD {:.4}", report.apd.best);
    println!("total {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}
