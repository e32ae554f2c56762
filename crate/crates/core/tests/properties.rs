//! Randomized invariants across modules.

use motion_diffusion::dct::dct_basis;
use motion_diffusion::diffusion::{cfg_mix, cosine_schedule, observation_guidance, GuidanceMask};
use motion_diffusion::metrics::{ade, apd, fde, mmade, mmfde, PredictionSet, Strategy as Reduce};
use motion_diffusion::motion::{
    multimodal_group, read_motion, window_dataset, write_motion, MotionSequence, Sample,
};
use motion_diffusion::tensor::Tensor;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lim: f64) -> impl prop::strategy::Strategy<Value = Tensor> {
    prop::collection::vec(-lim..lim, rows * cols)
        .prop_map(move |d| Tensor::new([rows, cols], d).unwrap())
}

fn sized_matrix(
    max_r: usize,
    max_c: usize,
    lim: f64,
) -> impl prop::strategy::Strategy<Value = Tensor> {
    (1..=max_r, 1..=max_c).prop_flat_map(move |(r, c)| matrix(r, c, lim))
}

/// `K` samples, ground truth and `M` multimodal futures sharing one `F×3J` shape.
fn prediction_set() -> impl prop::strategy::Strategy<Value = PredictionSet> {
    (1usize..=8, 1usize..=10, 1usize..=4, 1usize..=4).prop_flat_map(|(k, f, j, m)| {
        let w = 3 * j;
        (
            prop::collection::vec(matrix(f, w, 2.0), k),
            matrix(f, w, 2.0),
            prop::collection::vec(matrix(f, w, 2.0), m),
        )
            .prop_map(|(s, g, mm)| PredictionSet::new(s, g, mm).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(x in sized_matrix(16, 16, 50.0)) {
        let s = x.softmax(1).unwrap();
        for r in 0..s.rows() {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn dct_parseval_at_full_rank(nf in 1usize..40, w in 1usize..6, seed in any::<u64>()) {
        let basis = dct_basis(nf, nf).unwrap();
        let mut r = motion_diffusion::rng::seeded(seed);
        let x = Tensor::new([nf, w], motion_diffusion::rng::normal_vec(&mut r, nf * w)).unwrap();
        let y = basis.forward(&x).unwrap();
        prop_assert!((x.frobenius_norm() - y.frobenius_norm()).abs() <= 1e-9);
        prop_assert!(basis.inverse(&y).unwrap().max_abs_diff(&x) <= 1e-9);
    }

    #[test]
    fn dct_forward_of_inverse_is_identity(nf in 2usize..40, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let l = 1 + ((nf - 1) as f64 * frac) as usize;
        let basis = dct_basis(nf, l).unwrap();
        let mut r = motion_diffusion::rng::seeded(seed);
        let y = Tensor::new([l, 3], motion_diffusion::rng::normal_vec(&mut r, l * 3)).unwrap();
        let back = basis.forward(&basis.inverse(&y).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&y) <= 1e-10);
    }

    #[test]
    fn truncation_error_is_monotone(x in sized_matrix(30, 4, 1.0)) {
        let nf = x.rows();
        let mut prev = f64::INFINITY;
        for l in 1..=nf {
            let b = dct_basis(nf, l).unwrap();
            let err = b.inverse(&b.forward(&x).unwrap()).unwrap().sub(&x).unwrap().frobenius_norm();
            prop_assert!(err <= prev + 1e-12);
            prev = err;
        }
    }

    #[test]
    fn motn_round_trip_is_bit_exact(j in 1usize..6, n in 1usize..20, seed in any::<u64>(), fps in 1.0f32..240.0) {
        let mut r = motion_diffusion::rng::seeded(seed);
        let data: Vec<f64> = motion_diffusion::rng::normal_vec(&mut r, n * 3 * j)
            .into_iter()
            .map(|v| f64::from(v as f32))
            .collect();
        let seq = MotionSequence::new(j, fps, Tensor::new([n, 3 * j], data).unwrap()).unwrap();
        let bytes = write_motion(&seq);
        let back = read_motion(&bytes).unwrap();
        prop_assert_eq!(&back, &seq);
        prop_assert_eq!(write_motion(&back), bytes);
    }

    #[test]
    fn windows_reproduce_their_source(n in 1usize..60, h in 1usize..8, f in 1usize..8, stride in 1usize..5) {
        let seq = MotionSequence::new(
            2,
            50.0,
            Tensor::new([n, 6], (0..n * 6).map(|i| i as f64).collect()).unwrap(),
        )
        .unwrap();
        let samples = window_dataset(std::slice::from_ref(&seq), h, f, stride).unwrap();
        let expected = if n >= h + f { (n - h - f) / stride + 1 } else { 0 };
        prop_assert_eq!(samples.len(), expected);
        for s in &samples {
            let src = seq.frames().slice_rows(s.offset, s.offset + h + f);
            prop_assert_eq!(s.full(), src);
        }
    }

    #[test]
    fn grouping_is_reflexive_and_symmetric(
        lasts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..12),
        tau in 0.01f64..2.0,
    ) {
        let samples: Vec<Sample> = lasts
            .iter()
            .enumerate()
            .map(|(i, v)| Sample {
                observation: Tensor::new([1, 3], v.clone()).unwrap(),
                future: Tensor::full([2, 3], i as f64),
                source: i,
                offset: 0,
            })
            .collect();
        let groups = multimodal_group(&samples, tau).unwrap();
        for (i, g) in groups.iter().enumerate() {
            prop_assert!(g.members.contains(&i));
            prop_assert_eq!(g.members.len(), g.futures.len());
            for &j in &g.members {
                prop_assert!(groups[j].members.contains(&i));
            }
        }
    }

    #[test]
    fn schedule_product_identity(t in 1usize..400, s in 0.001f64..0.05) {
        let sch = cosine_schedule(t, s).unwrap();
        let mut prod = 1.0;
        prop_assert_eq!(sch.alpha_bar(0), 1.0);
        for step in 1..=t {
            prod *= 1.0 - sch.beta(step);
            prop_assert!((prod - sch.alpha_bar(step)).abs() <= 1e-12);
            prop_assert!(sch.beta(step) > 0.0 && sch.beta(step) <= 0.999);
            prop_assert!(sch.alpha_bar(step) < sch.alpha_bar(step - 1));
        }
    }

    #[test]
    fn cfg_mix_cancels_on_equal_predictions(e in sized_matrix(6, 6, 3.0), w in 0.0f64..10.0) {
        let mixed = cfg_mix(&e, &e, w).unwrap();
        prop_assert!(mixed.max_abs_diff(&e) <= 1e-12 * (1.0 + 2.0 * w) * 3.0);
    }

    #[test]
    fn all_observed_mask_is_identity(nf in 2usize..30, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let l = 1 + ((nf - 1) as f64 * frac) as usize;
        let basis = dct_basis(nf, l).unwrap();
        let mut r = motion_diffusion::rng::seeded(seed);
        let y_obs = Tensor::new([l, 3], motion_diffusion::rng::normal_vec(&mut r, l * 3)).unwrap();
        let y_den = Tensor::new([l, 3], motion_diffusion::rng::normal_vec(&mut r, l * 3)).unwrap();
        let ones = observation_guidance(&y_obs, &y_den, &GuidanceMask::new(nf, 0), &basis).unwrap();
        prop_assert!(ones.max_abs_diff(&y_obs) <= 1e-10);
        let zeros = observation_guidance(&y_obs, &y_den, &GuidanceMask::new(0, nf), &basis).unwrap();
        prop_assert!(zeros.max_abs_diff(&y_den) <= 1e-10);
    }

    #[test]
    fn strategies_are_ordered(set in prediction_set()) {
        let checks: [fn(&PredictionSet, Reduce) -> f64; 4] = [
            ade,
            fde,
            |s, st| mmade(s, st).unwrap(),
            |s, st| mmfde(s, st).unwrap(),
        ];
        for m in checks {
            let (b, md, w) = (m(&set, Reduce::Best), m(&set, Reduce::Median), m(&set, Reduce::Worst));
            prop_assert!(b <= md && md <= w);
        }
    }

    #[test]
    fn metrics_ignore_sample_order(set in prediction_set(), rot in 0usize..8) {
        let mut shuffled = set.samples().to_vec();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let other = PredictionSet::new(shuffled, set.ground_truth().clone(), set.multimodal().to_vec()).unwrap();
        prop_assert!((apd(set.samples()) - apd(other.samples())).abs() <= 1e-12);
        for st in Reduce::ALL {
            prop_assert_eq!(ade(&set, st), ade(&other, st));
            prop_assert_eq!(fde(&set, st), fde(&other, st));
            prop_assert_eq!(mmade(&set, st).unwrap(), mmade(&other, st).unwrap());
        }
    }

    #[test]
    fn metrics_are_translation_covariant(set in prediction_set(), shift in -5.0f64..5.0) {
        let mv = |t: &Tensor| t.map(|v| v + shift);
        let moved = PredictionSet::new(
            set.samples().iter().map(mv).collect(),
            mv(set.ground_truth()),
            set.multimodal().iter().map(mv).collect(),
        )
        .unwrap();
        prop_assert!((apd(set.samples()) - apd(moved.samples())).abs() <= 1e-9);
        for st in Reduce::ALL {
            prop_assert!((ade(&set, st) - ade(&moved, st)).abs() <= 1e-9);
            prop_assert!((fde(&set, st) - fde(&moved, st)).abs() <= 1e-9);
        }
    }
}
