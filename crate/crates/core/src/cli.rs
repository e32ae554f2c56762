//! Command-line subcommands and their exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | I/O or unreadable input file |
//! | 3 | no data or no windows |
//! | 4 | NaN/inf during training or sampling |
//! | 5 | invalid configuration or checkpoint mismatch |
//! | 6 | plot input error |

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{check_compatible, load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{ConfigOverrides, RunConfig};
use crate::denoiser::Denoiser;
use crate::diffusion::{sample_chains, train, TrainReport};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::motion::{
    load_motion_file, save_motion_file, synth_generate, window_dataset, MotionSequence, Sample,
};
use crate::plot::{render_svg, PlotStyle};

#[derive(Debug, Parser)]
#[command(
    name = "motion-diffusion",
    version,
    about = "DCT-space diffusion for stochastic motion prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic MOTN sequences.
    SynthData(SynthArgs),
    /// Train a denoiser on the MOTN files in `data_dir`.
    Train(CommonArgs),
    /// Draw K predictions for one observation.
    Sample(SampleArgs),
    /// Compute the metric report on the MOTN files in `test_dir`.
    Eval(CommonArgs),
    /// Render motions as an SVG strip.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// `key = value` config file; flags override its values.
    #[arg(long, short = 'c', value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output directory [default: the configured data_dir]
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// MOTN file whose first `obs_frames` frames are the observation.
    #[arg(long, value_name = "FILE")]
    pub obs: PathBuf,
    /// Predictions are written to `<prefix>_<k>.motn`.
    #[arg(long, value_name = "PREFIX")]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output SVG path.
    #[arg(long, short = 'o', value_name = "FILE")]
    pub out: PathBuf,
    /// MOTN files, one row each.
    #[arg(value_name = "MOTION")]
    pub files: Vec<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format(_) | Error::Length(_) | Error::Data(_) => 2,
        Error::EmptyDataset(_) => 3,
        Error::NonFinite(_) | Error::Training { .. } | Error::Sampling { .. } => 4,
        Error::Config(_) | Error::ConfigMismatch { .. } | Error::Dimension(_) | Error::Step(_) => 5,
        Error::Plot(_) => 6,
    }
}

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Every `*.motn` file in `dir`, sorted by file name, checked against the
/// configured joint count and optionally root-centered.
pub fn load_dir(dir: impl AsRef<Path>, cfg: &RunConfig) -> Result<Vec<MotionSequence>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::EmptyDataset(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "motn"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no .motn files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_checked(p, cfg)).collect()
}

fn load_checked(path: &Path, cfg: &RunConfig) -> Result<MotionSequence> {
    let seq = load_motion_file(path)?;
    if seq.joints() != cfg.joints {
        return Err(Error::Config(format!(
            "{} has {} joints, config says {}",
            path.display(),
            seq.joints(),
            cfg.joints
        )));
    }
    match cfg.root_joint.0 {
        Some(r) => seq.root_centered(r),
        None => Ok(seq),
    }
}

fn windows(dir: &str, cfg: &RunConfig) -> Result<Vec<Sample>> {
    let seqs = load_dir(dir, cfg)?;
    let samples = window_dataset(&seqs, cfg.obs_frames, cfg.future_frames, cfg.stride)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no {}-frame windows in {dir}",
            cfg.window_frames()
        )));
    }
    Ok(samples)
}

/// Writes `synth_sequences` files `seq_0000.motn`, … with seeds `seed + i`.
pub fn cmd_synth_data(cfg: &RunConfig, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    cfg.echo_into(out_dir)?;
    (0..cfg.synth_sequences)
        .map(|i| {
            let seq = synth_generate(&cfg.synth_config(i))?;
            let path = out_dir.join(format!("seq_{i:04}.motn"));
            save_motion_file(&path, &seq)?;
            Ok(path)
        })
        .collect()
}

/// Trains from `data_dir`, then writes the checkpoint and the loss trace.
pub fn cmd_train(cfg: &RunConfig, log: bool) -> Result<TrainReport> {
    let samples = windows(&cfg.data_dir, cfg)?;
    let schedule = cfg.schedule()?;
    let basis = cfg.basis()?;
    let mut model = Denoiser::new(cfg.denoiser_config())?;
    let every = (cfg.epochs / 20).max(1);
    let mut progress = |epoch: usize, loss: f64| {
        if log && (epoch.is_multiple_of(every) || epoch + 1 == cfg.epochs) {
            eprintln!("epoch {epoch:>5}  loss {loss:.6}");
        }
    };
    if log {
        eprintln!(
            "training on {} windows, {} parameters",
            samples.len(),
            model.param_count()
        );
    }
    let report = train(
        &mut model,
        &samples,
        &schedule,
        &basis,
        &cfg.train_config(),
        Some(&mut progress),
    )?;

    let ckpt = Path::new(&cfg.checkpoint);
    cfg.echo_into(parent_dir(ckpt))?;
    save_checkpoint(ckpt, &model, &cfg.checkpoint_meta())?;

    let trace = Path::new(&cfg.loss_trace);
    cfg.echo_into(parent_dir(trace))?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{e},{l}\n"));
    }
    std::fs::write(trace, csv).map_err(|e| Error::io(trace, e))?;
    Ok(report)
}

/// Loads the configured checkpoint and checks it against `cfg`.
pub fn load_compatible(cfg: &RunConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(&cfg.checkpoint)?;
    check_compatible(&ckpt, &cfg.denoiser_config(), &cfg.checkpoint_meta())?;
    Ok(ckpt)
}

/// Writes `K` full `(H+F)`-frame predictions to `<prefix>_<k>.motn`.
pub fn cmd_sample(
    cfg: &RunConfig,
    obs_file: impl AsRef<Path>,
    out_prefix: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let ckpt = load_compatible(cfg)?;
    let obs_path = obs_file.as_ref();
    let seq = load_checked(obs_path, cfg)?;
    if seq.len() < cfg.obs_frames {
        return Err(Error::Config(format!(
            "{} has {} frames, observation needs {}",
            obs_path.display(),
            seq.len(),
            cfg.obs_frames
        )));
    }
    let obs = seq.frames().slice_rows(0, cfg.obs_frames);
    let preds = sample_chains(
        &obs,
        &ckpt.model,
        &cfg.schedule()?,
        &*cfg.basis()?,
        &cfg.sampler_options(),
        cfg.k,
        None,
    )?;

    let prefix = out_prefix.as_ref();
    cfg.echo_into(parent_dir(prefix))?;
    let stem = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    preds
        .into_iter()
        .enumerate()
        .map(|(k, frames)| {
            let path = parent_dir(prefix).join(format!("{stem}_{k}.motn"));
            save_motion_file(&path, &MotionSequence::new(cfg.joints, seq.fps(), frames)?)?;
            Ok(path)
        })
        .collect()
}

/// Evaluates on every window of `test_dir` and writes the report.
pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricReport> {
    let ckpt = load_compatible(cfg)?;
    let samples = windows(&cfg.test_dir, cfg)?;
    let report = evaluate(
        &ckpt.model,
        &samples,
        &cfg.schedule()?,
        &*cfg.basis()?,
        &cfg.sampler_options(),
        cfg.k,
        cfg.tau,
    )?;
    let path = Path::new(&cfg.report);
    cfg.echo_into(parent_dir(path))?;
    std::fs::write(path, report.to_text()).map_err(|e| Error::io(path, e))?;
    Ok(report)
}

pub fn cmd_plot(cfg: &RunConfig, files: &[PathBuf], out: impl AsRef<Path>) -> Result<()> {
    if files.is_empty() {
        return Err(Error::Plot("no motion files given".into()));
    }
    let motions = files
        .iter()
        .map(|p| {
            let label = p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((label, load_motion_file(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let joints = motions[0].1.joints();
    let style = PlotStyle {
        axes: cfg.plot_axes()?,
        ..PlotStyle::new(cfg.bones.resolve(joints), cfg.keyframes, cfg.obs_frames)
    };
    let svg = render_svg(&motions, &style)?;
    let out = out.as_ref();
    cfg.echo_into(parent_dir(out))?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SynthData(a) => {
            let cfg = a.common.resolve()?;
            let dir = a.out_dir.unwrap_or_else(|| PathBuf::from(&cfg.data_dir));
            let written = cmd_synth_data(&cfg, &dir)?;
            eprintln!("wrote {} sequences to {}", written.len(), dir.display());
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let rep = cmd_train(&cfg, true)?;
            eprintln!(
                "final loss {:.6}; checkpoint {}",
                rep.epoch_losses.last().copied().unwrap_or(f64::NAN),
                cfg.checkpoint
            );
        }
        Command::Sample(a) => {
            let cfg = a.common.resolve()?;
            let written = cmd_sample(&cfg, &a.obs, &a.out_prefix)?;
            eprintln!("wrote {} predictions", written.len());
        }
        Command::Eval(a) => {
            let cfg = a.resolve()?;
            print!("{}", cmd_eval(&cfg)?.to_text());
        }
        Command::Plot(a) => {
            let cfg = a.common.resolve()?;
            cmd_plot(&cfg, &a.files, &a.out)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 5 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
