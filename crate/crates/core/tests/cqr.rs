use cpbias::cqr::{
    candidate_grid, candidate_intervals, conformal_correction, cqr_score, fit_knn_quantile, mean_width,
    run_cqr_experiment, select_model_by_width, Candidate, CqrSpec, Interval, QuantileModel,
};
use cpbias::synth::{gen_regression, MeanFn, NoiseFn, RegressionSpec};

fn reg(noise_level: f64) -> RegressionSpec {
    RegressionSpec { mean_fn: MeanFn::Sinusoid, noise_fn: NoiseFn::LinearAbs, feature_dim: 2, noise_level }
}

#[test]
fn full_neighbourhood_gives_global_quantiles() {
    let train = gen_regression(&reg(1.0), 60, 1).unwrap();
    let mut sorted = train.targets.clone();
    sorted.sort_by(f64::total_cmp);
    let m = fit_knn_quantile(&train, 60, (0.05, 0.95)).unwrap();
    // ceil(0.05 · 60) = 3 and ceil(0.95 · 60) = 57.
    for x in [[0.0, 0.0], [0.9, -0.3], [-1.0, 1.0]] {
        assert_eq!(m.predict(&x), Interval { lo: sorted[2], hi: sorted[56] });
    }
}

#[test]
fn one_neighbour_reproduces_noiseless_targets() {
    let train = gen_regression(&reg(0.0), 50, 2).unwrap();
    let m = fit_knn_quantile(&train, 1, (0.05, 0.95)).unwrap();
    for i in 0..train.len() {
        let iv = m.predict(train.row(i));
        assert_eq!((iv.lo, iv.hi), (train.targets[i], train.targets[i]));
    }
}

#[test]
fn shared_search_matches_single_predictions() {
    let train = gen_regression(&reg(1.0), 120, 3).unwrap();
    let batch = gen_regression(&reg(1.0), 40, 4).unwrap();
    let grid = candidate_grid(200).unwrap();
    let cands: Vec<Candidate> = grid.into_iter().filter(|c| c.k <= 100).step_by(7).collect();
    let fast = candidate_intervals(&train, &cands, (0.05, 0.95), &batch).unwrap();
    for (c, ivs) in cands.iter().zip(&fast) {
        let m = QuantileModel::new(&train, *c, (0.05, 0.95)).unwrap();
        for i in 0..batch.len() {
            assert_eq!(ivs[i], m.predict(batch.row(i)), "{c:?} row {i}");
        }
    }
}

#[test]
fn candidate_grid_layout() {
    let g = candidate_grid(200).unwrap();
    assert_eq!(g[0], Candidate { k: 5, nuisance_scale: 0.1 });
    assert_eq!(g[9], Candidate { k: 5, nuisance_scale: 1.0 });
    assert_eq!(g[10], Candidate { k: 10, nuisance_scale: 0.1 });
    assert_eq!(g[199].k, 100);
    assert!(candidate_grid(0).is_err() && candidate_grid(201).is_err());
}

#[test]
fn selection_matches_an_exhaustive_scan() {
    let train = gen_regression(&reg(1.0), 200, 5).unwrap();
    let cal = gen_regression(&reg(1.0), 80, 6).unwrap();
    let cands = candidate_grid(40).unwrap();
    let ivs = candidate_intervals(&train, &cands, (0.05, 0.95), &cal).unwrap();
    let (best, widths) = select_model_by_width(&ivs, &cal.targets, 0.1).unwrap();
    let brute: Vec<f64> = ivs
        .iter()
        .map(|iv| {
            let mut s: Vec<f64> = iv.iter().zip(&cal.targets).map(|(i, &y)| (i.lo - y).max(y - i.hi)).collect();
            s.sort_by(f64::total_cmp);
            // ceil(81 · 0.9) = 73.
            let q = s[72];
            iv.iter().map(|i| (i.hi - i.lo + 2.0 * q).max(0.0)).sum::<f64>() / iv.len() as f64
        })
        .collect();
    for (a, b) in widths.iter().zip(&brute) {
        assert!((a - b).abs() < 1e-12);
    }
    let min = brute.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(best, brute.iter().position(|&w| w == min).unwrap());
    assert_eq!(select_model_by_width(&ivs[..1], &cal.targets, 0.1).unwrap().0, 0);

    // Too few points for a finite correction: every width is infinite and
    // the first candidate is kept.
    let (i, w) = select_model_by_width(&[ivs[3][..5].to_vec(), ivs[1][..5].to_vec()], &cal.targets[..5], 0.1).unwrap();
    assert_eq!(i, 0);
    assert!(w.iter().all(|v| v.is_infinite()));
}

#[test]
fn interval_helpers() {
    let iv = Interval { lo: 1.0, hi: 3.0 };
    assert_eq!(cqr_score(0.0, iv), 1.0);
    assert_eq!(cqr_score(2.0, iv), -1.0);
    assert_eq!(iv.widen(-2.0).width(), 0.0);
    assert!(iv.contains(3.0) && !iv.contains(3.5));
    let ivs = vec![iv; 4];
    assert!(mean_width(&ivs, 0.5) < mean_width(&ivs, 1.0));
    assert_eq!(conformal_correction(&ivs, &[2.0; 4], 0.5).unwrap(), -1.0);
}

#[test]
fn single_candidate_has_no_bias() {
    let spec = CqrSpec {
        id: "one".into(),
        regression: reg(1.0),
        num_models: 1,
        n_train: 100,
        n_cal: 60,
        n_test: 300,
        alpha: 0.1,
        replications: 120,
        seed: 7,
        split_fraction: 0.5,
    };
    let res = run_cqr_experiment(&spec).unwrap();
    for r in &res.reps {
        assert_eq!(r.same, r.holdout);
    }
    assert_eq!(res.summary.tuning_bias.mean, 0.0);
    assert!((res.summary.coverage_same.mean - 0.9).abs() < 3.0 * res.summary.coverage_same.stderr + 1.0 / 61.0);
}

#[test]
fn spec_validation() {
    let good = CqrSpec {
        id: "v".into(),
        regression: reg(1.0),
        num_models: 200,
        n_train: 300,
        n_cal: 100,
        n_test: 100,
        alpha: 0.1,
        replications: 10,
        seed: 0,
        split_fraction: 0.5,
    };
    good.validate().unwrap();
    assert_eq!(good.levels(), (0.05, 0.95));
    assert!(CqrSpec { n_train: 99, ..good.clone() }.validate().is_err());
    assert!(CqrSpec { num_models: 10, n_train: 5, ..good.clone() }.validate().is_ok());
    assert!(CqrSpec { alpha: 0.0, ..good }.validate().is_err());
}
