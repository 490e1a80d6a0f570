use cpbias::conformal::{
    calibrate_threshold, ceil_count, empirical_quantile, eps_alpha_n, evaluate, prediction_set,
    threshold_in_place, threshold_rank, CalibScores,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn exchangeable_coverage_equals_rank_over_n_plus_one() {
    // With continuous exchangeable scores the test score lands below the
    // r-th smallest of n calibration scores with probability r/(n+1).
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(n, alpha) in &[(19usize, 0.1), (7, 0.2), (50, 0.05)] {
        let trials = 40_000;
        let mut hits = 0usize;
        let mut cal = vec![0.0; n];
        for _ in 0..trials {
            cal.iter_mut().for_each(|v| *v = rng.random::<f64>());
            let t = threshold_in_place(&mut cal, alpha);
            hits += usize::from(rng.random::<f64>() <= t);
        }
        let expected = threshold_rank(n, alpha).min(n + 1) as f64 / (n + 1) as f64;
        let rate = hits as f64 / trials as f64;
        let se = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!((rate - expected).abs() < 4.0 * se, "n={n}: {rate} vs {expected}");
        assert!(expected >= 1.0 - alpha && expected <= 1.0 - alpha + 1.0 / (n as f64 + 1.0));
    }
}

#[test]
fn eps_matches_the_threshold_rank() {
    for n in 1..200 {
        for &alpha in &[0.05, 0.1, 0.2, 0.5] {
            let r = ceil_count((n as f64 + 1.0) * (1.0 - alpha));
            assert!((eps_alpha_n(alpha, n) - (r as f64 / n as f64 - (1.0 - alpha))).abs() < 1e-15);
        }
    }
}

proptest! {
    #[test]
    fn threshold_is_the_ranked_score(mut s in prop::collection::vec(-10.0f64..10.0, 1..80), alpha in 0.01f64..0.99) {
        let n = s.len();
        let via_calib = calibrate_threshold(&CalibScores::new(s.clone()).unwrap(), alpha).unwrap();
        let t = threshold_in_place(&mut s, alpha);
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        let r = threshold_rank(n, alpha);
        if r > n {
            prop_assert_eq!(t, f64::INFINITY);
        } else {
            prop_assert_eq!(t, sorted[r - 1]);
        }
        prop_assert_eq!(t, via_calib);
    }

    #[test]
    fn quantile_count_rule(s in prop::collection::vec(-10.0f64..10.0, 1..60), p in 0.001f64..=1.0) {
        let q = empirical_quantile(&CalibScores::new(s.clone()).unwrap(), p).unwrap();
        let n = s.len() as f64;
        let below = s.iter().filter(|&&v| v <= q).count() as f64;
        let strictly = s.iter().filter(|&&v| v < q).count() as f64;
        prop_assert!(below >= p * n - 1e-9);
        prop_assert!(strictly < p * n + 1e-9);
    }

    #[test]
    fn sets_are_sublevel_sets(scores in prop::collection::vec(0.0f64..1.0, 1..12), t in 0.0f64..1.0) {
        let set = prediction_set(&scores, t).unwrap();
        for (y, &s) in scores.iter().enumerate() {
            prop_assert_eq!(set.contains(y), s <= t);
        }
        let rep = evaluate(std::slice::from_ref(&set), &[0], 0.1).unwrap();
        prop_assert_eq!(rep.avg_size, set.size() as f64);
    }
}
