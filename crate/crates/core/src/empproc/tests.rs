use super::*;

fn bv() -> (ModelFamily, ParamVector) {
    (ModelFamily::MvNormal { d: 2 }, ParamVector(vec![1.0, 2.0, 1.0, 1.0, 0.5]))
}

#[test]
fn zero_weight_gives_zero_paths() {
    let (fam, th) = bv();
    let cfg = ProcessConfig { n: 100, replicates: 5, weight: RawWeight::Zero, quad_nodes: 64, ..Default::default() };
    let run = simulate_zn(&fam, &th, &cfg).unwrap();
    assert!(run.z_paths.iter().flatten().all(|&v| v == 0.0));
    assert!(run.y_paths.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn bounded_centred_weight_is_unchanged() {
    let vals: Vec<f64> = (0..1000).map(|i| ((i as f64 + 0.5) / 1000.0 - 0.5) * 0.8).collect();
    let w = clamp_weight(&vals, 1.0).unwrap();
    for &v in &vals {
        assert!((w.apply(v) - v).abs() <= 1e-10);
    }
}

#[test]
fn symmetric_data_balances_at_the_same_level() {
    let fam = ModelFamily::UnivariateNormal;
    let c = fam.sample(&ParamVector(vec![0.0, 1.0]), 100_000, 1).unwrap();
    let mut vals: Vec<f64> = c.rows().map(|x| x[0]).collect();
    vals.extend(c.rows().map(|x| -x[0]));
    let w = clamp_weight(&vals, 1.0).unwrap();
    // on a finite sample every level between adjacent values is equivalent
    let (a, b) = (w.lower.min(1.0), w.lower.max(1.0));
    assert!(!vals.iter().any(|&v| -v > a && -v < b), "{}", w.lower);
}

#[test]
fn truncated_parts_balance() {
    let fam = ModelFamily::UnivariateNormal;
    let c = fam.sample(&ParamVector(vec![0.0, 1.0]), 100_000, 2).unwrap();
    let vals: Vec<f64> = c.rows().map(|x| x[0].exp() - 0.5f64.exp()).collect();
    let w = clamp_weight(&vals, 2.0).unwrap();
    assert!((w.positive_mass - w.negative_mass).abs() < 1e-8);
    let mean: f64 = vals.iter().map(|&v| w.apply(v)).sum::<f64>() / vals.len() as f64;
    assert!(mean.abs() < 1e-10);
    assert!(vals.iter().all(|&v| w.apply(v).abs() <= w.upper.max(w.lower) + w.centre.abs()));
}

#[test]
fn degenerate_weights_are_rejected() {
    assert!(matches!(clamp_weight(&[1.0; 10], 1.0), Err(GmspError::DegenerateWeight(_))));
    assert!(matches!(clamp_weight(&[1.0, 2.0, 3.0], 5.0), Err(GmspError::DegenerateWeight(_))));
}

#[test]
fn paths_have_expected_shape_and_start_value() {
    let (fam, th) = bv();
    let cfg = ProcessConfig { n: 200, replicates: 20, calibration: 10_000, quad_nodes: 64, ..Default::default() };
    let run = simulate_zn(&fam, &th, &cfg).unwrap();
    assert_eq!(run.z_paths.len(), 20);
    assert_eq!(run.z_paths[0].len(), 6);
    let again = simulate_zn(&fam, &th, &cfg).unwrap();
    assert_eq!(run, again);
    assert_eq!(covariance_table(&run).len(), 21);
}

#[test]
fn start_value_variance_is_tau2() {
    let (fam, th) = bv();
    let cfg = ProcessConfig { n: 200, replicates: 800, calibration: 200_000, quad_nodes: 32, ..Default::default() };
    let run = simulate_zn(&fam, &th, &cfg).unwrap();
    let row = &covariance_table(&run)[0];
    assert_eq!((row.s, row.t), (0.0, 0.0));
    assert!((row.analytic - run.weight.tau2).abs() < 1e-15);
    assert!(row.z_score.abs() < 4.0, "{row:?}");
}

#[test]
fn z_and_y_processes_merge() {
    let (fam, th) = bv();
    let small = simulate_zn(&fam, &th, &ProcessConfig { n: 200, replicates: 300, calibration: 50_000, quad_nodes: 64, ..Default::default() }).unwrap();
    let large = simulate_zn(&fam, &th, &ProcessConfig { n: 2000, replicates: 300, calibration: 50_000, quad_nodes: 64, ..Default::default() }).unwrap();
    // column 3 is t = 1
    assert!(large.mean_abs_diff[3] < small.mean_abs_diff[3], "{} vs {}", large.mean_abs_diff[3], small.mean_abs_diff[3]);
}

#[test]
fn score_check_small_run() {
    let (fam, th) = bv();
    let cfg = ScoreCheckConfig { n: 200, replicates: 50, quad_nodes: 64, ..Default::default() };
    let r = score_covariance_check(&fam, &th, &DivergenceSpec::h1(), &cfg).unwrap();
    assert_eq!(r.empirical.shape(), (5, 5));
    assert!(r.frobenius_relative.is_finite());
    assert!((r.sigma_q2 - 1.8434356).abs() < 1e-6);
}
