//! Run configuration: flat `key = value` files with `#` comments, overridable
//! from the command line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::checkpoint::CheckpointMeta;
use crate::dct::{dct_basis, DctBasis};
use crate::denoiser::{default_step_dim, CondPool, DenoiserConfig, SkipMode};
use crate::diffusion::{cosine_schedule, NoiseSchedule, SamplerMode, SamplerOptions, TrainConfig};
use crate::error::{Error, Result};
use crate::motion::SynthConfig;

/// A size that is either given explicitly or derived from other fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Auto(pub Option<usize>);

impl Auto {
    pub fn or(self, derived: usize) -> usize {
        self.0.unwrap_or(derived)
    }
}

impl fmt::Display for Auto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("auto"),
        }
    }
}

impl FromStr for Auto {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Auto(None));
        }
        s.parse()
            .map(|v| Auto(Some(v)))
            .map_err(|_| Error::Config(format!("expected a count or `auto`, got `{s}`")))
    }
}

/// Joint-index pairs drawn as bones, written `0-1,1-2`. `chain` connects
/// consecutive joints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bones(pub Option<Vec<(usize, usize)>>);

impl Bones {
    pub fn resolve(&self, joints: usize) -> Vec<(usize, usize)> {
        match &self.0 {
            Some(b) => b.clone(),
            None => (1..joints).map(|j| (j - 1, j)).collect(),
        }
    }
}

impl fmt::Display for Bones {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            None => f.write_str("chain"),
            Some(b) => {
                let parts: Vec<String> = b.iter().map(|(a, c)| format!("{a}-{c}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl FromStr for Bones {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "chain" {
            return Ok(Bones(None));
        }
        let bad = || Error::Config(format!("bone list `{s}` is not of the form `0-1,1-2`"));
        s.split(',')
            .map(|pair| {
                let (a, b) = pair.trim().split_once('-').ok_or_else(bad)?;
                Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| Bones(Some(v)))
    }
}

macro_rules! run_config {
    ($( $field:ident : $ty:ty = $default:literal, $help:literal; )*) => {
        /// Every setting of a run. Field names double as config-file keys;
        /// command-line flags use the kebab-case form.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( #[doc = $help] pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default.parse().expect("valid default"), )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => {
                        self.$field = value
                            .parse()
                            .map_err(|e| Error::Config(format!("`{key} = {value}`: {e}")))?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value)` for every field, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$( (stringify!($field), self.$field.to_string()) ),*]
            }
        }

        /// Command-line overrides; any flag given replaces the file value.
        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct ConfigOverrides {
            $(
                #[arg(long, value_name = "VALUE", help = concat!($help, " [default: ", $default, "]"))]
                pub $field: Option<$ty>,
            )*
        }

        impl ConfigOverrides {
            pub fn apply(&self, cfg: &mut RunConfig) {
                $( if let Some(v) = &self.$field { cfg.$field = v.clone(); } )*
            }
        }
    };
}

run_config! {
    layers: usize = "9", "Number of SE-Transformer blocks";
    hidden: usize = "512", "Token width d";
    heads: Auto = "auto", "Attention heads (auto: 8 when d/8 ≥ 4, else the largest of 4/2/1 that fits)";
    ffn: Auto = "auto", "Feed-forward width (auto: 2d)";
    se_reduction: Auto = "auto", "SE bottleneck reduction r (auto: 4 if it divides d, else 1)";
    step_dim: Auto = "auto", "Sinusoidal step-encoding width (auto: d/4 rounded up to even)";
    coeff_rows: usize = "20", "Retained DCT rows L";
    skip: SkipMode = "concat", "Long-skip fusion: concat, add or none";
    use_se: bool = "true", "Apply the SE gate in every block";
    cond_pool: CondPool = "mean", "Condition-token history pooling: mean, sum, or flat (one linear map over all rows)";
    steps: usize = "1000", "Diffusion steps T";
    cosine_s: f64 = "0.008", "Cosine schedule offset s";
    obs_frames: usize = "25", "Observed frames H";
    future_frames: usize = "100", "Predicted frames F";
    joints: usize = "17", "Joints J";
    fps: f32 = "50", "Frame rate in Hz";
    stride: usize = "10", "Window stride in frames";
    tau: f64 = "0.5", "Multimodal grouping threshold on the last observed pose, meters";
    root_joint: Auto = "auto", "Subtract this joint from every frame (auto: no centering)";
    synth_sequences: usize = "40", "Sequences written by synth-data";
    synth_frames: usize = "250", "Frames per synthetic sequence";
    synth_harmonics: usize = "3", "Sinusoids per synthetic channel";
    synth_amp_min: f64 = "0.02", "Smallest synthetic amplitude, meters";
    synth_amp_max: f64 = "0.2", "Largest synthetic amplitude, meters";
    synth_offset: f64 = "0.5", "Half-width of the synthetic rest-pose box, meters";
    synth_skeleton_seed: u64 = "0", "Seed of the rest pose shared by all synthetic sequences";
    epochs: usize = "1500", "Training epochs";
    batch: usize = "64", "Mini-batch size";
    lr: f64 = "0.0003", "Adam learning rate";
    lr_decay: f64 = "0.8", "Learning-rate decay factor";
    decay_every: usize = "100", "Epochs between learning-rate decays";
    cond_drop: f64 = "0.2", "Probability of training with the null condition";
    samples_per_epoch: usize = "50000", "Windows drawn per epoch (0: one pass over the dataset)";
    sampler: SamplerMode = "ddim", "Reverse process: ddpm or ddim";
    ddim_steps: usize = "100", "DDIM steps S";
    eta: f64 = "0", "DDIM stochasticity η";
    guidance: f64 = "0", "Classifier-free guidance weight w";
    independent_noise: bool = "false", "Separate noise draws for the observation branch";
    k: usize = "50", "Predictions per observation K";
    seed: u64 = "0", "Seed for data synthesis, initialization, training and sampling";
    data_dir: String = "data/train", "Directory of training MOTN files";
    test_dir: String = "data/test", "Directory of evaluation MOTN files";
    checkpoint: String = "run/model.ckpt", "Checkpoint path";
    loss_trace: String = "run/loss.csv", "Per-epoch loss CSV path";
    report: String = "run/report.txt", "Metric report path";
    bones: Bones = "chain", "Plot bones as joint pairs, e.g. 0-1,1-2 (chain: consecutive joints)";
    keyframes: usize = "5", "Poses drawn per motion in plots";
    plot_axes: String = "0,1", "Coordinate indices drawn horizontally and vertically";
}

/// File name of the configuration echo written next to every output.
pub const ECHO_FILE: &str = "effective_config.txt";

impl RunConfig {
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    n + 1
                ))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# effective run configuration\n");
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Writes [`ECHO_FILE`] into `dir`, creating it if needed.
    pub fn echo_into(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(ECHO_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn features(&self) -> usize {
        3 * self.joints
    }

    pub fn window_frames(&self) -> usize {
        self.obs_frames + self.future_frames
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        let base = DenoiserConfig::new(self.layers, self.hidden, self.coeff_rows, self.features());
        DenoiserConfig {
            heads: self.heads.or(base.heads),
            ffn: self.ffn.or(base.ffn),
            se_reduction: self.se_reduction.or(base.se_reduction),
            step_dim: self.step_dim.or(default_step_dim(self.hidden)),
            skip: self.skip,
            use_se: self.use_se,
            cond_pool: self.cond_pool,
            init_seed: self.seed,
            ..base
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        cosine_schedule(self.steps, self.cosine_s)
    }

    pub fn basis(&self) -> Result<Arc<DctBasis>> {
        dct_basis(self.window_frames(), self.coeff_rows)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            lr_decay: self.lr_decay,
            decay_every: self.decay_every,
            cond_drop: self.cond_drop,
            samples_per_epoch: self.samples_per_epoch,
            seed: self.seed,
        }
    }

    pub fn sampler_options(&self) -> SamplerOptions {
        SamplerOptions {
            mode: self.sampler,
            ddim_steps: self.ddim_steps,
            eta: self.eta,
            guidance_scale: self.guidance,
            seed: self.seed,
            independent_noise: self.independent_noise,
        }
    }

    /// Generator settings for synthetic sequence `index`.
    pub fn synth_config(&self, index: usize) -> SynthConfig {
        SynthConfig {
            joints: self.joints,
            fps: self.fps,
            frames: self.synth_frames,
            harmonics: self.synth_harmonics,
            amplitude: (self.synth_amp_min, self.synth_amp_max),
            offset: self.synth_offset,
            skeleton_seed: self.synth_skeleton_seed,
            seed: self.seed.wrapping_add(index as u64),
        }
    }

    pub fn checkpoint_meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            steps: self.steps,
            cosine_s: self.cosine_s,
            obs_frames: self.obs_frames,
            future_frames: self.future_frames,
        }
    }

    pub fn plot_axes(&self) -> Result<(usize, usize)> {
        let bad = || {
            Error::Config(format!(
                "plot_axes `{}` must be two of 0,1,2",
                self.plot_axes
            ))
        };
        let (a, b) = self.plot_axes.split_once(',').ok_or_else(bad)?;
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a > 2 || b > 2 || a == b {
            return Err(bad());
        }
        Ok((a, b))
    }

    /// Checks cross-field constraints that individual parsers cannot.
    pub fn validate(&self) -> Result<()> {
        self.denoiser_config().validate()?;
        if self.obs_frames == 0 || self.future_frames == 0 || self.stride == 0 {
            return Err(Error::Config(
                "obs_frames, future_frames and stride must be ≥ 1".into(),
            ));
        }
        if self.coeff_rows > self.window_frames() {
            return Err(Error::Config(format!(
                "coeff_rows {} exceeds the {}-frame window",
                self.coeff_rows,
                self.window_frames()
            )));
        }
        if self.joints == 0 || !(self.fps > 0.0) {
            return Err(Error::Config("joints and fps must be positive".into()));
        }
        if let Some(r) = self.root_joint.0 {
            if r >= self.joints {
                return Err(Error::Config(format!(
                    "root_joint {r} ≥ joints {}",
                    self.joints
                )));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("k must be ≥ 1".into()));
        }
        self.train_config().validate()?;
        self.sampler_options().validate(&self.schedule()?)?;
        Ok(())
    }
}
