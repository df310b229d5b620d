use std::f64::consts::PI;

use beamsweep::array::{steering_vector, ArrayConfig};
use beamsweep::codebook::{RewardProfile, Vertex};
use beamsweep::complexity::{hardness, ideal_contenders, lambert_w0, predicted_level_samples};
use beamsweep::harness::wilson_interval;
use beamsweep::sse::{
    exploration_rate, run_level, select_indices, ArmStats, ConfidenceMode, LevelGame, PruningVector, RadiusParams,
    SseConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(n: usize) -> RadiusParams {
    RadiusParams {
        mode: ConfidenceMode::EmpiricalVariance,
        b: 0.1,
        c: 0.1,
        delta: 0.05,
        n_total: n,
        alpha: 4.0,
        alpha1: 1.25,
    }
}

proptest! {
    #[test]
    fn steering_entries_have_unit_magnitude(theta in 0.0..2.0 * PI, m in 2usize..256) {
        let cfg = ArrayConfig::new(m, 0.5, false).unwrap();
        for z in steering_vector(theta, &cfg) {
            prop_assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_is_mirror_symmetric(theta in 0.0..PI) {
        let cfg = ArrayConfig::default();
        let a = steering_vector(theta, &cfg);
        let b = steering_vector(2.0 * PI - theta, &cfg);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn wilson_contains_estimate(k in 0usize..500, extra in 1usize..500) {
        let l = k + extra;
        let p = k as f64 / l as f64;
        let (lo, hi) = wilson_interval(p, l, 0.95).unwrap();
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
    }

    #[test]
    fn wilson_narrows_with_more_trials(p in 0.0..=1.0f64, l in 1usize..10_000) {
        let (a, b) = wilson_interval(p, l, 0.95).unwrap();
        let (c, d) = wilson_interval(p, l + 1, 0.95).unwrap();
        prop_assert!(d - c < b - a);
    }

    #[test]
    fn lambert_identity(x in -0.36787944117144233f64..1e6) {
        let w = lambert_w0(x).unwrap();
        prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1.0));
        prop_assert!(w >= -1.0);
    }

    #[test]
    fn predictor_round_trips(h in 1e-3..500.0f64, s in 2usize..256, delta in 0.001..0.5f64, n in 2usize..512) {
        let t = predicted_level_samples(h, s, delta, n).unwrap() as f64;
        let rhs = |t: f64| h * exploration_rate(t - 1.0, delta, n) + 2.0 * s as f64;
        prop_assert!(t >= rhs(t) - 1e-9);
        prop_assert!(t - 1.0 < rhs(t - 1.0) + 1.0);
    }

    #[test]
    fn hardness_never_grows_with_epsilon(values in prop::collection::vec(1.0..50.0f64, 6), e1 in 0.01..10.0f64, de in 0.0..10.0f64) {
        let profile = RewardProfile::from_values(2, values, 1.0).unwrap();
        let mut cfg = SseConfig::new(PruningVector::from_dec(1, 2).unwrap());
        cfg.epsilon = e1;
        let contenders = ideal_contenders(&profile, &cfg.pruning);
        let a = hardness(&profile, &contenders, &cfg).unwrap();
        cfg.epsilon = e1 + de;
        let b = hardness(&profile, &contenders, &cfg).unwrap();
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            for (x, y) in la.arms.iter().zip(&lb.arms) {
                prop_assert!(y.term <= x.term * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn gamma_and_u_match_definition(bounds in prop::collection::vec((0.0..10.0f64, 0.0..5.0f64), 2..12)) {
        let contenders: Vec<Vertex> = (1..=bounds.len() as u32).map(|i| Vertex::new(4, i)).collect();
        let mut g = LevelGame::new(4, contenders, 0.1, params(bounds.len())).unwrap();
        for (s, &(m, d)) in g.stats.iter_mut().zip(&bounds) {
            let mut st = ArmStats::default();
            st.observe(m);
            st.observe(m);
            st.mean = m;
            st.radius = d;
            st.ucb = m + d;
            st.lcb = m - d;
            *s = st;
        }
        let (gamma, u) = select_indices(&mut g).unwrap();
        let k = bounds.len();
        let ucb = |i: usize| bounds[i].0 + bounds[i].1;
        let gap = |i: usize| (0..k).filter(|&j| j != i).map(ucb).fold(f64::MIN, f64::max) - (bounds[i].0 - bounds[i].1);
        for i in 0..k {
            prop_assert!(gap(gamma) <= gap(i));
            if i != gamma {
                prop_assert!(ucb(u) >= ucb(i));
            }
        }
        prop_assert!(u != gamma);
    }

    #[test]
    fn level_games_terminate_with_consistent_counts(seed in 0u64..1000, k in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..20.0)).collect();
        let contenders: Vec<Vertex> = (1..=k as u32).map(|i| Vertex::new(3, i)).collect();
        let mut g = LevelGame::new(3, contenders, 1.0, params(k)).unwrap().with_invariant_checks(true);
        let mut src = |v: Vertex| means[v.index as usize - 1] + rng.random_range(-1.0..1.0);
        let out = run_level(&mut g, &mut src, Some(200_000), None).unwrap();
        prop_assert_eq!(out.arm_counts.iter().map(|&(_, n)| n).sum::<u64>(), out.samples);
        prop_assert!(out.arm_counts.iter().all(|&(_, n)| n >= 2));
        prop_assert_eq!(out.invariant_violations, 0);
    }
}

#[test]
fn total_arms_matches_contender_sum_for_every_vector() {
    for p in PruningVector::all(7) {
        let played = p.played_levels();
        let mut prev = 0;
        let mut n = 0usize;
        for &h in &played {
            n += 1 << (h - prev);
            prev = h;
        }
        assert_eq!(p.total_arms(), n, "p = {p}");
        assert_eq!(PruningVector::from_dec(p.to_dec(), 7).unwrap(), p);
    }
    assert_eq!(PruningVector::all(7).count(), 64);
}
