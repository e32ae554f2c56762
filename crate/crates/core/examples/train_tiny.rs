//! Trains a small denoiser on synthetic windows and saves a checkpoint.
//!
//! ```text
//! cargo run --release --example train_tiny -- [epochs] [checkpoint]
//! ```

use motion_diffusion::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use motion_diffusion::dct::dct_basis;
use motion_diffusion::denoiser::{Denoiser, DenoiserConfig};
use motion_diffusion::diffusion::{cosine_schedule, train, TrainConfig, COSINE_S};
use motion_diffusion::motion::{synth_generate, window_dataset, SynthConfig};

fn main() -> motion_diffusion::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(40, |a| a.parse().expect("epoch count"));
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("tiny.ckpt"), Into::into);

    let (h, f, joints) = (10, 30, 3);
    let seqs = (0..8)
        .map(|seed| {
            synth_generate(&SynthConfig {
                joints,
                frames: 100,
                seed,
                ..SynthConfig::default()
            })
        })
        .collect::<motion_diffusion::Result<Vec<_>>>()?;
    let windows = window_dataset(&seqs, h, f, 5)?;

    let schedule = cosine_schedule(100, COSINE_S)?;
    let basis = dct_basis(h + f, 8)?;
    let mut model = Denoiser::new(DenoiserConfig::new(2, 32, 8, 3 * joints))?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 16,
        lr: 1e-3,
        decay_every: 20,
        samples_per_epoch: 0,
        ..TrainConfig::default()
    };
    let mut log = |e: usize, loss: f64| {
        if e.is_multiple_of(10) || e + 1 == epochs {
            println!("epoch {e:>3}  loss {loss:.4}");
        }
    };
    let report = train(
        &mut model,
        &windows,
        &schedule,
        &basis,
        &cfg,
        Some(&mut log),
    )?;
    println!(
        "{} optimizer steps on {} windows",
        report.optimizer_steps,
        windows.len()
    );

    let meta = CheckpointMeta {
        steps: schedule.steps(),
        cosine_s: COSINE_S,
        obs_frames: h,
        future_frames: f,
    };
    save_checkpoint(&out, &model, &meta)?;
    let back = load_checkpoint(&out)?;
    println!(
        "saved {} ({} parameters)",
        out.display(),
        back.model.param_count()
    );
    Ok(())
}
