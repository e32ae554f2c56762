use std::f64::consts::TAU;

use super::MotionSequence;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Lowest and highest sinusoid frequency in Hz.
pub const SYNTH_FREQ_RANGE: (f64, f64) = (0.2, 2.0);

/// Band-limited synthetic motion: every coordinate channel is a sum of
/// `harmonics` sinusoids around a rest pose. The rest pose depends only on
/// `skeleton_seed`, so sequences with different `seed`s share one skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub joints: usize,
    pub fps: f32,
    pub frames: usize,
    pub harmonics: usize,
    /// Per-sinusoid amplitude range in meters.
    pub amplitude: (f64, f64),
    /// Each joint's resting position is drawn from `[-offset, offset]³`.
    pub offset: f64,
    pub skeleton_seed: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            joints: 17,
            fps: 50.0,
            frames: 250,
            harmonics: 3,
            amplitude: (0.02, 0.2),
            offset: 0.5,
            skeleton_seed: 0,
            seed: 0,
        }
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<MotionSequence> {
    if cfg.harmonics == 0 {
        return Err(Error::Config(
            "synthetic motion needs at least one harmonic".into(),
        ));
    }
    if cfg.frames == 0 || cfg.joints == 0 || !(cfg.fps > 0.0) {
        return Err(Error::Config(
            "synthetic motion needs frames, joints and fps > 0".into(),
        ));
    }
    let mut r = rng::seeded(cfg.seed);
    let mut skeleton = rng::seeded(cfg.skeleton_seed);
    let width = 3 * cfg.joints;
    let fps = f64::from(cfg.fps);
    let (flo, fhi) = SYNTH_FREQ_RANGE;

    let mut frames = Tensor::zeros([cfg.frames, width]);
    for j in 0..cfg.joints {
        for axis in 0..3 {
            let c = 3 * j + axis;
            let offset = rng::uniform(&mut skeleton, -cfg.offset, cfg.offset);
            let waves: Vec<(f64, f64, f64)> = (0..cfg.harmonics)
                .map(|_| {
                    let a = rng::uniform(&mut r, cfg.amplitude.0, cfg.amplitude.1);
                    let f = rng::uniform(&mut r, flo, fhi);
                    let p = rng::uniform(&mut r, 0.0, TAU);
                    (a, f, p)
                })
                .collect();
            for t in 0..cfg.frames {
                let time = t as f64 / fps;
                let v: f64 = waves
                    .iter()
                    .map(|&(a, f, p)| a * (TAU * f * time + p).sin())
                    .sum();
                frames.set(t, c, offset + v);
            }
        }
    }
    MotionSequence::new(cfg.joints, cfg.fps, frames)
}
