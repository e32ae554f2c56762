//! Motion sequences, the MOTN file format, dataset windowing and grouping.

mod io;
mod synth;
mod window;

pub use io::{
    load_motion_file, read_motion, save_motion_file, write_motion, MOTN_MAGIC, MOTN_VERSION,
};
pub use synth::{synth_generate, SynthConfig};
pub use window::{multimodal_group, pad_observation, window_dataset, MultimodalGroup, Sample};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `N×3J` Cartesian joint coordinates in meters, sampled at `fps` Hz.
///
/// Row `t` is the pose at frame `t`, laid out as `[x0 y0 z0 x1 y1 z1 ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    joints: usize,
    fps: f32,
    frames: Tensor,
}

impl MotionSequence {
    pub fn new(joints: usize, fps: f32, frames: Tensor) -> Result<Self> {
        if joints == 0 {
            return Err(Error::Data("a motion needs at least one joint".into()));
        }
        if frames.shape().len() != 2 || frames.cols() != 3 * joints {
            return Err(Error::dim(format!(
                "frames of shape {:?} for {joints} joints",
                frames.shape()
            )));
        }
        if frames.rows() == 0 {
            return Err(Error::Length("a motion needs at least one frame".into()));
        }
        if !frames.is_finite() {
            return Err(Error::Data("non-finite joint coordinate".into()));
        }
        Ok(Self {
            joints,
            fps,
            frames,
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    /// Subtracts joint `root`'s position from every joint, frame by frame.
    pub fn root_centered(&self, root: usize) -> Result<Self> {
        if root >= self.joints {
            return Err(Error::Config(format!(
                "root joint {root} out of range for {} joints",
                self.joints
            )));
        }
        let mut frames = self.frames.clone();
        for t in 0..frames.rows() {
            let row = frames.row_mut(t);
            let origin = [row[3 * root], row[3 * root + 1], row[3 * root + 2]];
            for (i, v) in row.iter_mut().enumerate() {
                *v -= origin[i % 3];
            }
        }
        Self::new(self.joints, self.fps, frames)
    }
}
