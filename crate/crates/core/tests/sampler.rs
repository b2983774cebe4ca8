use std::sync::Arc;

use annealed_langevin::metrics::moment_report;
use annealed_langevin::paths::{Convolution, Identity, MoreauPath};
use annealed_langevin::sampler::{run, Init, RunPlan};
use annealed_langevin::schedules::{CompensatedSum, Schedule, StepPolicy};
use annealed_langevin::GaussianMixture;

fn plan(n_chains: usize, n_steps: u64, snapshots: Vec<u64>, init: Init) -> RunPlan {
    RunPlan { n_chains, n_steps: Some(n_steps), max_sim_time: None, snapshot_iterations: snapshots, init }
}

#[test]
fn snapshot_time_is_the_sum_of_steps() {
    let target = Arc::new(GaussianMixture::reference_1d());
    let path = Convolution::new(target);
    let out = run(
        &path,
        &Schedule::exponential(0.5).unwrap(),
        &StepPolicy::TheoryMax { h_max: 0.5 },
        &plan(8, 3000, vec![1, 700, 3000], Init::Point { point: vec![-3.0] }),
        5,
    )
    .unwrap();
    for snap in &out.snapshots {
        let naive: f64 = out.trace[..snap.iteration as usize].iter().map(|r| r.h).sum();
        assert!((snap.time - naive).abs() <= 1e-9 * naive, "k={}: {} vs {naive}", snap.iteration, snap.time);
        let mut compensated = CompensatedSum::default();
        out.trace[..snap.iteration as usize].iter().for_each(|r| compensated.add(r.h));
        assert_eq!(snap.time, compensated.value());
    }
    // τ_k in the trace follows the schedule at t_k
    let schedule = Schedule::exponential(0.5).unwrap();
    for r in out.trace.iter().step_by(97) {
        assert_eq!(r.tau, schedule.tau_clamped(r.t, 1.0).unwrap());
    }
}

#[test]
fn ensemble_mean_contracts_on_a_gaussian() {
    let n = 4000;
    let path = Identity::new(Arc::new(GaussianMixture::standard_normal(2).unwrap()));
    let out = run(
        &path,
        &Schedule::Frozen { tau: 0.0 },
        &StepPolicy::TheoryMax { h_max: 0.05 },
        &plan(n, 400, vec![0, 20, 100, 400], Init::Point { point: vec![3.0, -3.0] }),
        21,
    )
    .unwrap();
    let norms: Vec<f64> = out
        .snapshots
        .iter()
        .map(|s| moment_report(&s.samples).unwrap().0.norm())
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0] || w[1] < 3.0 / (n as f64).sqrt()), "{norms:?}");
    assert!(norms[3] < 3.0 / (n as f64).sqrt(), "final mean norm {}", norms[3]);
}

#[test]
fn runs_reproduce_across_thread_counts() {
    let target = Arc::new(GaussianMixture::reference_2d());
    let path = MoreauPath::with_defaults(target).unwrap();
    let go = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            run(
                &path,
                &Schedule::exponential(0.1).unwrap(),
                &StepPolicy::TheoryMax { h_max: 0.5 },
                &plan(300, 200, vec![50, 200], Init::Gaussian { mean: vec![-1.0, -1.0], scale: 0.3 }),
                77,
            )
            .unwrap()
        })
    };
    let (a, b) = (go(1), go(8));
    assert_eq!(a, b);
    let bytes = |o: &annealed_langevin::RunOutput| -> Vec<u8> {
        o.snapshots.iter().flat_map(|s| s.samples.as_slice().iter().flat_map(|v| v.to_le_bytes())).collect()
    };
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn fewer_chains_keep_the_surviving_trajectories() {
    let path = Identity::new(Arc::new(GaussianMixture::reference_1d()));
    let go = |n| {
        run(
            &path,
            &Schedule::Frozen { tau: 0.0 },
            &StepPolicy::TheoryMax { h_max: 0.5 },
            &plan(n, 500, vec![500], Init::Gaussian { mean: vec![0.0], scale: 1.0 }),
            3,
        )
        .unwrap()
    };
    let (small, large) = (go(10), go(25));
    assert_eq!(small.snapshots[0].samples.as_slice(), &large.snapshots[0].samples.as_slice()[..10]);
}

#[test]
fn convolution_path_reaches_every_mode() {
    let target = GaussianMixture::reference_1d();
    let out = run(
        &Convolution::new(Arc::new(target.clone())),
        &Schedule::exponential(2.0).unwrap(),
        &StepPolicy::TheoryMax { h_max: 0.5 },
        &plan(2000, 20_000, vec![1000, 5000, 20_000], Init::Point { point: vec![-3.0] }),
        2024,
    )
    .unwrap();
    let last = &out.snapshot_at(20_000).unwrap().samples;
    for i in 0..target.n_components() {
        let (m, s) = (target.mean(i)[0], target.covariance(i)[(0, 0)].sqrt());
        let share = last.column(0).filter(|x| (x - m).abs() <= 2.0 * s).count() as f64 / last.len() as f64;
        assert!(share >= 0.05, "mode {m}: {share}");
    }
}
