//! Forward noising, reverse sampling and training of the DCT-space diffusion model.

mod sampler;
mod schedule;
mod steps;
mod train;

pub use sampler::{
    sample_chains, sample_prediction, SamplerMode, SamplerOptions, StepObserver, StepRecord,
};
pub use schedule::{cosine_schedule, NoiseSchedule, COSINE_S, MAX_BETA};
pub use steps::{
    cfg_mix, ddim_sigma, ddim_step, ddim_timesteps, ddpm_step, observation_guidance, predict_y0,
    q_sample, GuidanceMask,
};
pub use train::{
    batch_loss, diffusion_loss, prepare_items, train, LossBatch, TrainConfig, TrainItem,
    TrainReport, Trainable,
};
