use cpbias::harness::dkw::uniform_ks;
use cpbias::scores::{aps_score, score_with_transform, softmax, ScoreSpec, UPolicy};
use cpbias::synth::{gen_classification, Distortion, GaussMixSpec};
use cpbias::transform::Transform;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn binary_temperature_keeps_the_thr_order() {
    // Binary THR is 1 - sigmoid(margin), so comparing two samples reduces to
    // comparing their label margins.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let thr = ScoreSpec::thr();
    let u = UPolicy::Fixed(0.0);
    for _ in 0..1000 {
        let a = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let b = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let (ya, yb) = (rng.random_range(0..2), rng.random_range(0..2));
        let lambda = rng.random_range(-2.0f64..2.0).exp();
        let ts = Transform::TempScale { lambda };
        let margin = |f: &[f64; 2], y: usize| f[y] - f[1 - y];
        let sa = score_with_transform(&thr, &ts, &a, ya, &u, 0).unwrap();
        let sb = score_with_transform(&thr, &ts, &b, yb, &u, 1).unwrap();
        let (ma, mb) = (margin(&a, ya), margin(&b, yb));
        if (ma - mb).abs() > 1e-9 {
            assert_eq!(sa < sb, ma > mb, "λ={lambda}, a={a:?}, b={b:?}");
        }
    }
}

#[test]
fn randomized_aps_on_the_true_posterior_is_uniform() {
    let mix = GaussMixSpec::random_means(5, 3, 1.0, 1.0, 8).unwrap();
    let batch = gen_classification(&mix, &Distortion::identity(5), 5000, 21).unwrap();
    let u = UPolicy::<f64>::Seeded { seed: 99 };
    let mut s: Vec<f64> = (0..batch.len())
        .map(|i| {
            let p = softmax(batch.oracle_row(i)).unwrap();
            let y = batch.labels[i];
            aps_score(&p, y, u.draw(batch.ids[i], y)).unwrap()
        })
        .collect();
    s.sort_unstable_by(f64::total_cmp);
    // One-sample KS critical value at level 0.01.
    let crit = 1.628 / (s.len() as f64).sqrt();
    assert!(uniform_ks(&s) < crit, "KS {} vs {crit}", uniform_ks(&s));
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(a in -20.0f64..20.0, b in -20.0f64..20.0, c in -50.0f64..50.0) {
        let p = softmax(&[a, b]).unwrap();
        let q = softmax(&[a + c, b + c]).unwrap();
        prop_assert!((p.as_slice()[0] - q.as_slice()[0]).abs() < 1e-12);
    }

    #[test]
    fn raps_without_penalty_is_aps(
        logits in prop::collection::vec(-5.0f64..5.0, 2..8),
        u in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let p = softmax(&logits).unwrap();
        let y = (seed % logits.len() as u64) as usize;
        let raps = ScoreSpec::raps(0.0, 1, true).score(&p, y, u).unwrap();
        prop_assert_eq!(raps, aps_score(&p, y, u).unwrap());
    }

    #[test]
    fn fixed_u_makes_scores_pure(logits in prop::collection::vec(-5.0f64..5.0, 2..8), u in 0.0f64..=1.0) {
        let spec = ScoreSpec::saps(0.2, true);
        let t = Transform::TempScale { lambda: 1.3 };
        let pol = UPolicy::Fixed(u);
        let a = score_with_transform(&spec, &t, &logits, 1, &pol, 5).unwrap();
        let b = score_with_transform(&spec, &t, &logits, 1, &pol, 6).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }
}
