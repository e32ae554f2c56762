//! Checkpoint files: a text manifest followed by a little-endian f32 blob.
//!
//! ```text
//! motion-diffusion checkpoint 1
//! config steps 1000
//! config cosine_s 0.008
//! ...
//! tensor embed.tokens.weight f32 51x512 0
//! ...
//! end
//! <blob>
//! ```
//!
//! Tensor offsets are in bytes from the start of the blob. Parameters are
//! stored as f32, so a reloaded model carries f32-rounded values; saving a
//! reloaded model reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const HEADER: &str = "motion-diffusion checkpoint 1";

/// Run settings stored next to the network so a checkpoint can be checked
/// against the configuration it is later used with.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    /// Diffusion step count `T`.
    pub steps: usize,
    pub cosine_s: f64,
    pub obs_frames: usize,
    pub future_frames: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Denoiser,
}

fn config_lines(cfg: &DenoiserConfig, meta: &CheckpointMeta) -> Vec<(&'static str, String)> {
    vec![
        ("steps", meta.steps.to_string()),
        ("cosine_s", meta.cosine_s.to_string()),
        ("obs_frames", meta.obs_frames.to_string()),
        ("future_frames", meta.future_frames.to_string()),
        ("coeff_rows", cfg.coeff_rows.to_string()),
        ("layers", cfg.layers.to_string()),
        ("hidden", cfg.hidden.to_string()),
        ("heads", cfg.heads.to_string()),
        ("ffn", cfg.ffn.to_string()),
        ("se_reduction", cfg.se_reduction.to_string()),
        ("features", cfg.features.to_string()),
        ("step_dim", cfg.step_dim.to_string()),
        ("skip", cfg.skip.to_string()),
        ("use_se", cfg.use_se.to_string()),
        ("cond_pool", cfg.cond_pool.to_string()),
        ("init_seed", cfg.init_seed.to_string()),
    ]
}

/// Serializes `model` and `meta`.
pub fn write_checkpoint(model: &Denoiser, meta: &CheckpointMeta) -> Vec<u8> {
    let mut manifest = format!("{HEADER}\n");
    for (k, v) in config_lines(model.config(), meta) {
        let _ = writeln!(manifest, "config {k} {v}");
    }
    let mut blob = Vec::new();
    for (name, t) in model.params().iter() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            manifest,
            "tensor {name} f32 {} {}",
            shape.join("x"),
            blob.len()
        );
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    manifest.push_str("end\n");
    let mut out = manifest.into_bytes();
    out.extend_from_slice(&blob);
    out
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Format(format!("bad value `{v}` for `{key}`")))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("manifest ends without `end`".into()))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Format("manifest is not UTF-8".into()))
    };

    if next_line()? != HEADER {
        return Err(Error::Format("not a motion-diffusion checkpoint".into()));
    }
    let mut cfg = DenoiserConfig::new(1, 1, 1, 1);
    let mut meta = CheckpointMeta {
        steps: 0,
        cosine_s: 0.0,
        obs_frames: 0,
        future_frames: 0,
    };
    let mut seen = Vec::new();
    let mut tensors: Vec<(String, Vec<usize>, usize)> = Vec::new();
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        let parts: Vec<&str> = line.split(' ').collect();
        match parts.as_slice() {
            ["config", key, v] => {
                match *key {
                    "steps" => meta.steps = parse_num(key, v)?,
                    "cosine_s" => meta.cosine_s = parse_num(key, v)?,
                    "obs_frames" => meta.obs_frames = parse_num(key, v)?,
                    "future_frames" => meta.future_frames = parse_num(key, v)?,
                    "coeff_rows" => cfg.coeff_rows = parse_num(key, v)?,
                    "layers" => cfg.layers = parse_num(key, v)?,
                    "hidden" => cfg.hidden = parse_num(key, v)?,
                    "heads" => cfg.heads = parse_num(key, v)?,
                    "ffn" => cfg.ffn = parse_num(key, v)?,
                    "se_reduction" => cfg.se_reduction = parse_num(key, v)?,
                    "features" => cfg.features = parse_num(key, v)?,
                    "step_dim" => cfg.step_dim = parse_num(key, v)?,
                    "skip" => cfg.skip = v.parse()?,
                    "use_se" => cfg.use_se = parse_num(key, v)?,
                    "cond_pool" => cfg.cond_pool = v.parse()?,
                    "init_seed" => cfg.init_seed = parse_num(key, v)?,
                    _ => return Err(Error::Format(format!("unknown config key `{key}`"))),
                }
                seen.push(key.to_string());
            }
            ["tensor", name, "f32", shape, offset] => {
                let shape = shape
                    .split('x')
                    .map(|d| parse_num::<usize>(name, d))
                    .collect::<Result<Vec<_>>>()?;
                tensors.push((name.to_string(), shape, parse_num(name, offset)?));
            }
            _ => return Err(Error::Format(format!("bad manifest line `{line}`"))),
        }
    }
    for (k, _) in config_lines(&cfg, &meta) {
        if !seen.iter().any(|s| s == k) {
            return Err(Error::Format(format!("manifest is missing config `{k}`")));
        }
    }

    let blob = &bytes[pos..];
    let mut params = ParamStore::new();
    let mut expected_offset = 0;
    for (name, shape, offset) in tensors {
        let n: usize = shape.iter().product();
        if offset != expected_offset || offset + 4 * n > blob.len() {
            return Err(Error::Length(format!(
                "tensor `{name}` at offset {offset} does not fit a {}-byte blob",
                blob.len()
            )));
        }
        let data = blob[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.register(name, Tensor::new(shape, data)?)?;
        expected_offset = offset + 4 * n;
    }
    if expected_offset != blob.len() {
        return Err(Error::Length(format!(
            "blob has {} bytes, manifest describes {expected_offset}",
            blob.len()
        )));
    }
    Ok(Checkpoint {
        meta,
        model: Denoiser::from_params(cfg, params)?,
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Denoiser,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

/// Fails with [`Error::ConfigMismatch`] on the first structural field where
/// the checkpoint and the run disagree.
pub fn check_compatible(
    ckpt: &Checkpoint,
    run_cfg: &DenoiserConfig,
    run_meta: &CheckpointMeta,
) -> Result<()> {
    let have = config_lines(ckpt.model.config(), &ckpt.meta);
    let want = config_lines(run_cfg, run_meta);
    for ((key, c), (_, r)) in have.into_iter().zip(want) {
        if key == "init_seed" {
            continue;
        }
        if c != r {
            return Err(Error::ConfigMismatch {
                key: key.to_string(),
                checkpoint: c,
                run: r,
            });
        }
    }
    Ok(())
}
