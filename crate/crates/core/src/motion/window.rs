use super::MotionSequence;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One observation/future split cut from a source sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `H×3J` observed frames.
    pub observation: Tensor,
    /// `F×3J` frames immediately following the observation.
    pub future: Tensor,
    pub source: usize,
    pub offset: usize,
}

impl Sample {
    pub fn obs_frames(&self) -> usize {
        self.observation.rows()
    }

    pub fn future_frames(&self) -> usize {
        self.future.rows()
    }

    /// The full `(H+F)×3J` window.
    pub fn full(&self) -> Tensor {
        Tensor::vstack(&[&self.observation, &self.future]).expect("widths agree")
    }

    pub fn last_observed(&self) -> &[f64] {
        self.observation.row(self.observation.rows() - 1)
    }
}

/// Cuts every `H+F` window whose start is a multiple of `stride`.
pub fn window_dataset(
    seqs: &[MotionSequence],
    obs_frames: usize,
    future_frames: usize,
    stride: usize,
) -> Result<Vec<Sample>> {
    if obs_frames == 0 || future_frames == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "windowing needs H, F, stride ≥ 1 (got {obs_frames}, {future_frames}, {stride})"
        )));
    }
    let span = obs_frames + future_frames;
    let mut out = Vec::new();
    for (source, seq) in seqs.iter().enumerate() {
        if seq.len() < span {
            continue;
        }
        for offset in (0..=seq.len() - span).step_by(stride) {
            let f = seq.frames();
            out.push(Sample {
                observation: f.slice_rows(offset, offset + obs_frames),
                future: f.slice_rows(offset + obs_frames, offset + span),
                source,
                offset,
            });
        }
    }
    Ok(out)
}

/// Extends `obs` by repeating its last frame `future_frames` times.
pub fn pad_observation(obs: &Tensor, future_frames: usize) -> Result<Tensor> {
    if obs.shape().len() != 2 || obs.rows() == 0 {
        return Err(Error::dim(format!(
            "observation must be a non-empty matrix, got {:?}",
            obs.shape()
        )));
    }
    let h = obs.rows();
    let last = obs.slice_rows(h - 1, h);
    let mut parts = vec![obs];
    parts.extend(std::iter::repeat_n(&last, future_frames));
    Tensor::vstack(&parts)
}

/// Futures of all samples whose last observed pose lies within `tau` of the
/// anchor's.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalGroup {
    pub anchor: usize,
    /// Sample indices, ascending; always contains `anchor`.
    pub members: Vec<usize>,
    pub futures: Vec<Tensor>,
}

pub fn multimodal_group(samples: &[Sample], tau: f64) -> Result<Vec<MultimodalGroup>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "grouping threshold must be > 0, got {tau}"
        )));
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    Ok((0..samples.len())
        .map(|i| {
            let anchor = samples[i].last_observed();
            let members: Vec<usize> = (0..samples.len())
                .filter(|&j| j == i || dist(anchor, samples[j].last_observed()) < tau)
                .collect();
            let futures = members.iter().map(|&j| samples[j].future.clone()).collect();
            MultimodalGroup {
                anchor: i,
                members,
                futures,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn seq(n: usize, joints: usize) -> MotionSequence {
        let data = (0..n * 3 * joints).map(|i| i as f64 * 0.001).collect();
        MotionSequence::new(joints, 50.0, Tensor::new([n, 3 * joints], data).unwrap()).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_dataset(&[seq(125, 1)], 25, 100, 1).unwrap().len(), 1);
        assert_eq!(window_dataset(&[seq(124, 1)], 25, 100, 1).unwrap().len(), 0);
        let w = window_dataset(&[seq(130, 1)], 25, 100, 5).unwrap();
        let offsets: Vec<usize> = w.iter().map(|s| s.offset).collect();
        assert_eq!(offsets, vec![0, 5]);
    }

    #[test]
    fn windows_are_contiguous() {
        let s = seq(40, 2);
        for w in window_dataset(std::slice::from_ref(&s), 5, 7, 3).unwrap() {
            let expect = s.frames().slice_rows(w.offset, w.offset + 12);
            assert_eq!(w.full(), expect);
        }
    }

    #[test]
    fn padding_repeats_last_frame() {
        let obs = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let p = pad_observation(&obs, 3).unwrap();
        let b = vec![3.0, 4.0];
        let expect =
            Tensor::from_rows(&[vec![1.0, 2.0], b.clone(), b.clone(), b.clone(), b]).unwrap();
        assert_eq!(p, expect);
        assert_eq!(pad_observation(&obs, 0).unwrap(), obs);
    }

    fn random_samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|i| Sample {
                observation: Tensor::new([2, 3], rng::uniform_vec(&mut r, 6, 0.0, 1.0)).unwrap(),
                future: Tensor::new([2, 3], rng::normal_vec(&mut r, 6)).unwrap(),
                source: i,
                offset: 0,
            })
            .collect()
    }

    #[test]
    fn degenerate_thresholds() {
        let s = random_samples(6, 1);
        for g in multimodal_group(&s, 1e-12).unwrap() {
            assert_eq!(g.members, vec![g.anchor]);
        }
        for g in multimodal_group(&s, f64::INFINITY).unwrap() {
            assert_eq!(g.members, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn grouping_matches_pairwise_scan() {
        let s = random_samples(10, 2);
        let groups = multimodal_group(&s, 0.5).unwrap();
        for i in 0..10 {
            let mut expect = Vec::new();
            for j in 0..10 {
                let a = s[i].observation.row(1);
                let b = s[j].observation.row(1);
                let mut d2 = 0.0;
                for k in 0..3 {
                    d2 += (a[k] - b[k]) * (a[k] - b[k]);
                }
                if d2.sqrt() < 0.5 {
                    expect.push(j);
                }
            }
            assert_eq!(groups[i].members, expect);
            assert!(groups[i].members.contains(&i));
            for &j in &groups[i].members {
                assert!(groups[j].members.contains(&i));
            }
        }
    }

    #[test]
    fn bad_arguments() {
        assert!(window_dataset(&[], 0, 1, 1).is_err());
        assert!(multimodal_group(&[], 0.0).is_err());
    }
}
