use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use annealed_langevin::metrics::{histogram_kl, marginal_kl, theory_bound, HistogramSpec};
use annealed_langevin::paths::{
    AnnealingPath, Convolution, Dilation, GeometricTempering, Identity, LinearGaussianLikelihood, MoreauPath, Posterior,
};
use annealed_langevin::sampler::StepRecord;
use annealed_langevin::{GaussianMixture, Samples};

fn all_paths(target: &GaussianMixture) -> Vec<Box<dyn AnnealingPath>> {
    let t = Arc::new(target.clone());
    let d = target.dim();
    let lik = LinearGaussianLikelihood::new(DMatrix::zeros(1, d), DVector::zeros(1), 1.0).unwrap();
    vec![
        Box::new(Identity::new(t.clone())),
        Box::new(GeometricTempering::with_default_reference(t.clone()).unwrap()),
        Box::new(Dilation::new(t.clone(), 0.99).unwrap()),
        Box::new(Convolution::new(t.clone())),
        Box::new(MoreauPath::with_defaults(t.clone()).unwrap()),
        // a zero forward operator leaves the prior untouched
        Box::new(Posterior::new(Box::new(Convolution::new(t)), lik).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_path_starts_at_the_target(x in -4.0f64..4.0, y in -4.0f64..4.0) {
        for (target, point) in [(GaussianMixture::reference_1d(), vec![x]), (GaussianMixture::reference_2d(), vec![x, y])] {
            let score = target.score(&point).unwrap();
            for path in all_paths(&target) {
                let g = path.grad_potential(&point, 0.0).unwrap();
                let err = (g + &score).amax();
                prop_assert!(err <= 1e-8 * (1.0 + score.amax()), "{} off by {err}", path.variant());
            }
        }
    }

    #[test]
    fn histogram_kl_is_never_negative(data in prop::collection::vec(-5.0f64..5.0, 1..300)) {
        let target = GaussianMixture::reference_1d();
        let samples = Samples::new(data, 1).unwrap();
        let e = histogram_kl(&samples, &target, &HistogramSpec::default_for(&target).unwrap()).unwrap();
        prop_assert!(e.kl >= 0.0 && e.kl.is_finite());
        prop_assert!(e.raw >= -1e-6);
    }

    #[test]
    fn larger_lsi_constant_never_lowers_the_bound(
        steps in prop::collection::vec((1e-4f64..0.1, 0.0f64..0.05), 1..60),
        base in 0.05f64..2.0,
        extra in 0.0f64..3.0,
        kl0 in 0.0f64..4.0,
    ) {
        let mut tau = 1.0;
        let history: Vec<StepRecord> = steps
            .iter()
            .enumerate()
            .map(|(k, &(h, drop))| {
                tau *= 1.0 - drop;
                StepRecord { k: k as u64, h, tau, t: 0.0 }
            })
            .collect();
        let small = theory_bound(|t| base + t, &history, kl0, 1.0).unwrap();
        let large = theory_bound(|t| base + extra + t, &history, kl0, 1.0).unwrap();
        prop_assert!(small >= 0.0);
        prop_assert!(large >= small * (1.0 - 1e-12));
    }
}

#[test]
fn nonpositive_lsi_constant_is_rejected() {
    let history = [StepRecord { k: 0, h: 0.1, tau: 0.5, t: 0.0 }];
    assert!(theory_bound(|_| 0.0, &history, 1.0, 1.0).is_err());
    assert!(theory_bound(|_| 1.0, &[], 1.0, 1.0).is_err());
}

#[test]
fn histogram_kl_concentrates_with_more_samples() {
    let target = GaussianMixture::reference_1d();
    let spec = HistogramSpec::default_for(&target).unwrap();
    let median = |n: usize| {
        let mut v: Vec<f64> = (0..10)
            .map(|seed| {
                let s = target.sample(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                histogram_kl(&s, &target, &spec).unwrap().kl
            })
            .collect();
        v.sort_by(f64::total_cmp);
        0.5 * (v[4] + v[5])
    };
    let (small, large) = (median(2500), median(10_000));
    assert!(large <= small, "median KL {large} at N=10000 above {small} at N=2500");
}

#[test]
fn marginal_kl_follows_axis_permutation() {
    let target = GaussianMixture::reference_2d();
    let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let n = target.n_components();
    let swapped = GaussianMixture::new(
        target.weights(),
        (0..n).map(|i| &swap * target.mean(i)).collect(),
        (0..n).map(|i| &swap * target.covariance(i) * &swap).collect(),
    )
    .unwrap();
    let samples = target.sample(3000, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let flipped: Vec<f64> = samples.rows().flat_map(|r| [r[1], r[0]]).collect();
    let flipped = Samples::new(flipped, 2).unwrap();
    for axis in 0..2 {
        let spec = HistogramSpec::default_marginal(&target, axis).unwrap();
        let a = marginal_kl(&samples, &target, axis, &spec).unwrap().kl;
        let b = marginal_kl(&flipped, &swapped, 1 - axis, &spec).unwrap().kl;
        assert_eq!(a, b, "axis {axis}");
    }
}

#[test]
fn exact_samples_sit_near_the_estimator_floor() {
    let target = GaussianMixture::reference_2d();
    let spec = HistogramSpec::default_for(&target).unwrap();
    let exact = target.sample(20_000, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let shifted: Vec<f64> = exact.as_slice().iter().map(|v| v + 0.5).collect();
    let shifted = Samples::new(shifted, 2).unwrap();
    let floor = histogram_kl(&exact, &target, &spec).unwrap().kl;
    let off = histogram_kl(&shifted, &target, &spec).unwrap().kl;
    assert!(floor > 0.0 && floor < off, "floor {floor}, shifted {off}");
}
