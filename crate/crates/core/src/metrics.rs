//! Diversity and accuracy metrics over sets of predicted futures.
//!
//! All distances are in the units of the motion data (meters). A per-frame
//! displacement is the L2 norm over all `3J` coordinates of that frame.

use std::fmt;
use std::str::FromStr;

use crate::dct::DctBasis;
use crate::denoiser::Denoise;
use crate::diffusion::{sample_chains, NoiseSchedule, SamplerOptions};
use crate::error::{Error, Result};
use crate::motion::{multimodal_group, Sample};
use crate::tensor::Tensor;

/// How `K` per-sample scores are reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Best,
    /// Lower median: ascending index `⌊(K−1)/2⌋`.
    Median,
    Worst,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Best, Strategy::Median, Strategy::Worst];

    pub fn reduce(self, scores: &[f64]) -> f64 {
        assert!(!scores.is_empty(), "no scores to reduce");
        let mut s = scores.to_vec();
        s.sort_by(f64::total_cmp);
        match self {
            Strategy::Best => s[0],
            Strategy::Median => s[(s.len() - 1) / 2],
            Strategy::Worst => s[s.len() - 1],
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Best => "best",
            Strategy::Median => "median",
            Strategy::Worst => "worst",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(Strategy::Best),
            "median" => Ok(Strategy::Median),
            "worst" => Ok(Strategy::Worst),
            _ => Err(Error::Config(format!("unknown strategy `{s}`"))),
        }
    }
}

/// `K` predicted futures with their ground truth and multimodal futures.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    samples: Vec<Tensor>,
    ground_truth: Tensor,
    multimodal: Vec<Tensor>,
}

impl PredictionSet {
    pub fn new(
        samples: Vec<Tensor>,
        ground_truth: Tensor,
        multimodal: Vec<Tensor>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config(
                "prediction set needs at least one sample".into(),
            ));
        }
        let shape = ground_truth.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::dim(format!(
                "ground truth must be F×3J, got {shape:?}"
            )));
        }
        for (i, t) in samples.iter().chain(&multimodal).enumerate() {
            if t.shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "entry {i} has shape {:?}, ground truth {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            samples,
            ground_truth,
            multimodal,
        })
    }

    pub fn samples(&self) -> &[Tensor] {
        &self.samples
    }

    pub fn ground_truth(&self) -> &Tensor {
        &self.ground_truth
    }

    pub fn multimodal(&self) -> &[Tensor] {
        &self.multimodal
    }

    pub fn k(&self) -> usize {
        self.samples.len()
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean L2 distance over unordered pairs of flattened samples; 0 for `K < 2`.
pub fn apd(samples: &[Tensor]) -> f64 {
    let k = samples.len();
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += l2(samples[i].data(), samples[j].data());
        }
    }
    total / (k * (k - 1) / 2) as f64
}

/// Per-frame L2 distance between `sample` and `gt`.
pub fn displacement_profile(sample: &Tensor, gt: &Tensor) -> Result<Vec<f64>> {
    if sample.shape() != gt.shape() || sample.shape().len() != 2 {
        return Err(Error::dim(format!(
            "displacement between {:?} and {:?}",
            sample.shape(),
            gt.shape()
        )));
    }
    Ok((0..gt.rows())
        .map(|t| l2(sample.row(t), gt.row(t)))
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn average_scores(samples: &[Tensor], gt: &Tensor) -> Vec<f64> {
    samples
        .iter()
        .map(|s| mean(&displacement_profile(s, gt).expect("shapes checked")))
        .collect()
}

fn final_scores(samples: &[Tensor], gt: &Tensor) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            *displacement_profile(s, gt)
                .expect("shapes checked")
                .last()
                .unwrap_or(&0.0)
        })
        .collect()
}

pub fn ade(set: &PredictionSet, strategy: Strategy) -> f64 {
    strategy.reduce(&average_scores(&set.samples, &set.ground_truth))
}

pub fn fde(set: &PredictionSet, strategy: Strategy) -> f64 {
    strategy.reduce(&final_scores(&set.samples, &set.ground_truth))
}

fn multimodal_mean(
    set: &PredictionSet,
    strategy: Strategy,
    scores: fn(&[Tensor], &Tensor) -> Vec<f64>,
) -> Result<f64> {
    if set.multimodal.is_empty() {
        return Err(Error::Config("multimodal future set is empty".into()));
    }
    let per_future: Vec<f64> = set
        .multimodal
        .iter()
        .map(|g| strategy.reduce(&scores(&set.samples, g)))
        .collect();
    Ok(mean(&per_future))
}

/// ADE against each multimodal future, reduced over samples, then averaged.
pub fn mmade(set: &PredictionSet, strategy: Strategy) -> Result<f64> {
    multimodal_mean(set, strategy, average_scores)
}

/// FDE against each multimodal future, reduced over samples, then averaged.
pub fn mmfde(set: &PredictionSet, strategy: Strategy) -> Result<f64> {
    multimodal_mean(set, strategy, final_scores)
}

/// One value per reduction strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StrategyScores {
    pub best: f64,
    pub median: f64,
    pub worst: f64,
}

impl StrategyScores {
    pub fn get(&self, s: Strategy) -> f64 {
        match s {
            Strategy::Best => self.best,
            Strategy::Median => self.median,
            Strategy::Worst => self.worst,
        }
    }

    fn get_mut(&mut self, s: Strategy) -> &mut f64 {
        match s {
            Strategy::Best => &mut self.best,
            Strategy::Median => &mut self.median,
            Strategy::Worst => &mut self.worst,
        }
    }

    fn from_fn(mut f: impl FnMut(Strategy) -> Result<f64>) -> Result<Self> {
        Ok(Self {
            best: f(Strategy::Best)?,
            median: f(Strategy::Median)?,
            worst: f(Strategy::Worst)?,
        })
    }
}

/// All metrics, averaged over test samples. APD does not depend on the
/// strategy, so its three entries are equal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub apd: StrategyScores,
    pub ade: StrategyScores,
    pub fde: StrategyScores,
    pub mmade: StrategyScores,
    pub mmfde: StrategyScores,
    pub test_samples: usize,
    pub predictions: usize,
}

pub const METRIC_NAMES: [&str; 5] = ["apd", "ade", "fde", "mmade", "mmfde"];

impl MetricReport {
    /// Metrics of a single prediction set.
    pub fn of_set(set: &PredictionSet) -> Result<Self> {
        let apd_v = apd(&set.samples);
        Ok(Self {
            apd: StrategyScores {
                best: apd_v,
                median: apd_v,
                worst: apd_v,
            },
            ade: StrategyScores::from_fn(|s| Ok(ade(set, s)))?,
            fde: StrategyScores::from_fn(|s| Ok(fde(set, s)))?,
            mmade: StrategyScores::from_fn(|s| mmade(set, s))?,
            mmfde: StrategyScores::from_fn(|s| mmfde(set, s))?,
            test_samples: 1,
            predictions: set.k(),
        })
    }

    /// Element-wise mean, summed in slice order.
    pub fn mean(reports: &[MetricReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::EmptyDataset("no test samples to evaluate".into()));
        }
        let mut out = MetricReport {
            test_samples: reports.iter().map(|r| r.test_samples).sum(),
            predictions: reports[0].predictions,
            ..Default::default()
        };
        let n = reports.len() as f64;
        for name in METRIC_NAMES {
            for s in Strategy::ALL {
                let total: f64 = reports.iter().map(|r| r.metric(name).get(s)).sum();
                *out.metric_mut(name).get_mut(s) = total / n;
            }
        }
        Ok(out)
    }

    pub fn metric(&self, name: &str) -> &StrategyScores {
        match name {
            "apd" => &self.apd,
            "ade" => &self.ade,
            "fde" => &self.fde,
            "mmade" => &self.mmade,
            "mmfde" => &self.mmfde,
            _ => panic!("unknown metric `{name}`"),
        }
    }

    fn metric_mut(&mut self, name: &str) -> &mut StrategyScores {
        match name {
            "apd" => &mut self.apd,
            "ade" => &mut self.ade,
            "fde" => &mut self.fde,
            "mmade" => &mut self.mmade,
            "mmfde" => &mut self.mmfde,
            _ => panic!("unknown metric `{name}`"),
        }
    }

    /// `(key, value)` pairs such as `("ade_best", 0.12)`, in a fixed order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        METRIC_NAMES
            .iter()
            .flat_map(|&m| {
                Strategy::ALL
                    .iter()
                    .map(move |&s| (format!("{m}_{s}"), self.metric(m).get(s)))
            })
            .collect()
    }

    /// Flat `key=value` text, one metric per line, 6 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k}={}\n", format_sig(v, 6)));
        }
        out.push_str(&format!("test_samples={}\n", self.test_samples));
        out.push_str(&format!("predictions={}\n", self.predictions));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = MetricReport::default();
        let mut seen = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("report line `{line}` has no `=`")))?;
            let bad = || Error::Format(format!("bad value in report line `{line}`"));
            match k {
                "test_samples" => out.test_samples = v.parse().map_err(|_| bad())?,
                "predictions" => out.predictions = v.parse().map_err(|_| bad())?,
                _ => {
                    let (m, s) = k
                        .rsplit_once('_')
                        .ok_or_else(|| Error::Format(format!("unknown report key `{k}`")))?;
                    if !METRIC_NAMES.contains(&m) {
                        return Err(Error::Format(format!("unknown report key `{k}`")));
                    }
                    let s: Strategy = s
                        .parse()
                        .map_err(|_| Error::Format(format!("unknown report key `{k}`")))?;
                    *out.metric_mut(m).get_mut(s) = v.parse().map_err(|_| bad())?;
                    seen += 1;
                }
            }
        }
        if seen != METRIC_NAMES.len() * Strategy::ALL.len() {
            return Err(Error::Format(format!(
                "report has {seen} of 15 metric keys"
            )));
        }
        Ok(out)
    }
}

/// `%g`-style formatting with `sig` significant digits.
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", sig - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= sig as i32 {
        format!(
            "{}e{}{:02}",
            trim(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    }
}

/// Metrics over test windows given a predictor returning `K` futures
/// (`F×3J` each) for the window at the given index.
pub fn evaluate_with<P>(
    samples: &[Sample],
    k: usize,
    tau: f64,
    mut predict: P,
) -> Result<MetricReport>
where
    P: FnMut(usize, &Sample) -> Result<Vec<Tensor>>,
{
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no test windows".into()));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let groups = multimodal_group(samples, tau)?;
    let mut reports = Vec::with_capacity(samples.len());
    for (i, (sample, group)) in samples.iter().zip(groups).enumerate() {
        let preds = predict(i, sample)?;
        if preds.len() != k {
            return Err(Error::Config(format!(
                "predictor returned {} futures, expected {k}",
                preds.len()
            )));
        }
        let set = PredictionSet::new(preds, sample.future.clone(), group.futures)?;
        reports.push(MetricReport::of_set(&set)?);
    }
    MetricReport::mean(&reports)
}

/// Samples `K` futures per test window and computes every metric.
///
/// Window `i` uses chain seeds `opts.seed + i·K + k`, so no two chains in one
/// evaluation share a seed.
pub fn evaluate<M: Denoise + ?Sized>(
    model: &M,
    samples: &[Sample],
    schedule: &NoiseSchedule,
    basis: &DctBasis,
    opts: &SamplerOptions,
    k: usize,
    tau: f64,
) -> Result<MetricReport> {
    evaluate_with(samples, k, tau, |i, sample| {
        let opts_i = SamplerOptions {
            seed: opts.seed.wrapping_add((i * k) as u64),
            ..opts.clone()
        };
        let h = sample.obs_frames();
        let full = sample_chains(
            &sample.observation,
            model,
            schedule,
            basis,
            &opts_i,
            k,
            None,
        )?;
        Ok(full
            .into_iter()
            .map(|x| x.slice_rows(h, x.rows()))
            .collect())
    })
}
