mod common;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use regulate::baselines::{
    bias_corrected_ci, compare, long_fit, long_weights, naive_ci, short_fit, short_ridge_fit, trimmed_fit,
    trimmed_weights, BaselineFit,
};
use regulate::bias::{check_unbiased_feasible, maxbias_general, maxbias_ridge, maxbias_trimmed, TrimRule};
use regulate::dataset::Dataset;
use regulate::design::{build_design, cell_propensity, DesignMatrices, Estimand};
use regulate::inference::{
    cv_folded_normal, feasible_ci, initial_estimator, optimize_lambda, variance_robust, z_two_sided, CiConfig,
    InitialMode, LambdaSearch, SeKind,
};
use regulate::ridge::{fit_at, fit_limit_zero, penalized_propensity, ridge_weights_discrete, Lambda};
use regulate::simlab::{
    make_worstcase_delta, parse_dgp_config, simulate, DeltaTarget, DgpSpec, SimEstimator, TauProfile,
};
use regulate::vcate::{estimate_vcate, sensitivity, vcate_corrected, vcate_plugin};
use regulate::{Error, Warning};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Cells with the given sizes and treated counts; outcome `base_c + d·tau_c`.
fn cells(sizes: &[usize], treated: &[usize], tau: &[f64]) -> (Dataset, DesignMatrices) {
    let mut ds = cell_dataset(&mut rng(0), sizes, treated);
    let mut row = 0;
    for c in 0..sizes.len() {
        for i in 0..sizes[c] {
            ds.outcome[row] = 0.5 * c as f64 + if i < treated[c] { tau[c] } else { 0.0 };
            row += 1;
        }
    }
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    (ds, dm)
}

fn sampled_sup(q: &DVector<f64>, vx: &DMatrix<f64>, c: f64, draws: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let lt_inv = vx.clone().cholesky().unwrap().l().transpose().try_inverse().unwrap();
    (0..draws)
        .map(|_| {
            let u = DVector::from_fn(q.len(), |_, _| normal(&mut r));
            q.dot(&(&lt_inv * (&u / u.norm()) * c)).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn penalized_propensity_limits() {
    let ds = overlap_design(&mut rng(1), 6, 150);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let (pi1, pi2) = penalized_propensity(&dm, 1e12).unwrap();
    assert!(pi2.amax() < 1e-8);
    let ols_prop = ols(&dm.x, &dm.d);
    assert!((pi1 - ols_prop).amax() < 1e-8);

    let (pi1, pi2) = penalized_propensity(&dm, 1e-10).unwrap();
    let w = DMatrix::from_fn(dm.n(), dm.x.ncols() + dm.k(), |i, j| {
        if j < dm.x.ncols() {
            dm.x[(i, j)]
        } else {
            dm.dxt[(i, j - dm.x.ncols())]
        }
    });
    let full = ols(&w, &dm.d);
    assert!((pi1 - full.rows(0, dm.x.ncols())).amax() < 1e-6);
    assert!((pi2 - full.rows(dm.x.ncols(), dm.k())).amax() < 1e-6);
}

#[test]
fn limit_zero_drops_the_all_treated_cell() {
    let (ds, dm) = cells(&[10, 12, 8], &[4, 5, 8], &[1.0, 2.0, 3.0]);
    let limit = fit_limit_zero(&dm).unwrap();
    assert!(limit.weights.rows(22, 8).amax() < 1e-12);
    let keep: Vec<usize> = (0..22).collect();
    let sub = dm.subsample(&keep).unwrap();
    let ys = DVector::from_fn(22, |i, _| ds.outcome[i]);
    let long = long_fit(&sub, &ys).unwrap().beta_hat;
    assert!((limit.beta_hat(&ds.outcome) - long).abs() < 1e-10);
}

#[test]
fn limit_zero_with_overlap_is_continuous() {
    let ds = overlap_design(&mut rng(2), 6, 150);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let a = fit_limit_zero(&dm).unwrap().beta_hat(&ds.outcome);
    let b = fit_at(&dm, Lambda::Finite(1e-10)).unwrap().beta_hat(&ds.outcome);
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn limit_zero_without_any_overlap_fails() {
    let (_, dm) = cells(&[5, 5], &[5, 0], &[1.0, 1.0]);
    assert!(matches!(fit_limit_zero(&dm), Err(Error::NoOverlap)));
}

#[test]
fn discrete_weights_match_two_step_fit() {
    let (ds, dm) = cells(&[10, 12, 8, 9], &[4, 5, 8, 2], &[1.0, 2.0, 3.0, 0.0]);
    for lambda in [1e-2, 1.0, 50.0] {
        let closed = ridge_weights_discrete(&dm, lambda).unwrap();
        let fit = fit_at(&dm, Lambda::Finite(lambda)).unwrap();
        assert!((&closed - &fit.weights).amax() < 1e-9, "lambda {lambda}");
        assert!(closed.rows(22, 8).amax() == 0.0);
    }
    let inf = ridge_weights_discrete(&dm, f64::INFINITY).unwrap();
    let r = &dm.d - cell_propensity(&dm).unwrap();
    let scaled = &r / r.dot(&dm.d);
    assert!((inf - scaled).amax() < 1e-12);
    let _ = ds;
}

#[test]
fn short_maxbias_matches_sampled_sup_on_two_cells() {
    let (_, dm) = cells(&[50, 50], &[10, 40], &[0.0, 1.0]);
    let a = short_ridge_fit(&dm).unwrap().weights;
    let closed = maxbias_general(&a, &dm, 1.0).unwrap();
    let sup = sampled_sup(&dm.dxt.tr_mul(&a), &dm.vx, 1.0, 100_000, 3);
    assert!((closed - sup).abs() <= 1e-3 * closed);
    assert_eq!(maxbias_general(&a, &dm, 0.0).unwrap(), 0.0);
}

#[test]
fn ridge_maxbias_endpoints() {
    let ds = overlap_design(&mut rng(4), 6, 150);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let short = maxbias_general(&short_ridge_fit(&dm).unwrap().weights, &dm, 1.0).unwrap();
    let big = maxbias_ridge(&fit_at(&dm, Lambda::Finite(1e12)).unwrap(), &dm, 1.0).unwrap();
    assert!((big - short).abs() <= 1e-4 * short);
    let small = maxbias_ridge(&fit_at(&dm, Lambda::Finite(1e-10)).unwrap(), &dm, 1.0).unwrap();
    assert!(small < 1e-6 * short.max(1.0));
    let mid = fit_at(&dm, Lambda::Finite(1.0)).unwrap();
    let (r, g) = (maxbias_ridge(&mid, &dm, 1.0).unwrap(), maxbias_general(&mid.weights, &dm, 1.0).unwrap());
    assert!((r - g).abs() <= 1e-6 * g);
}

#[test]
fn trimmed_maxbias() {
    let (_, dm) = cells(&[40, 40, 40], &[15, 20, 25], &[0.0; 3]);
    assert!(maxbias_trimmed(&dm, &TrimRule::default(), 1.0).unwrap() < 1e-10);
    let (_, dm) = cells(&[40, 40, 40, 40], &[2, 12, 20, 28], &[0.0; 4]);
    let rule = TrimRule::default();
    let mb = maxbias_trimmed(&dm, &rule, 1.0).unwrap();
    assert!(mb > 0.0);
    let a = trimmed_weights(&dm, &rule).unwrap().weights;
    assert!(a.rows(0, 40).amax() == 0.0);
    let sup = sampled_sup(&dm.dxt.tr_mul(&a), &dm.vx, 1.0, 100_000, 5);
    assert!((mb - sup).abs() <= 1e-3 * mb, "closed {mb} sampled {sup}");
    assert_eq!(maxbias_trimmed(&dm, &rule, 0.0).unwrap(), 0.0);
}

#[test]
fn feasibility_witness_is_long_weights() {
    let ds = overlap_design(&mut rng(6), 6, 150);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let f = check_unbiased_feasible(&dm);
    assert!(f.feasible);
    let wit = f.witness.unwrap();
    // With full rank the constraint set pins the long weights as the minimum-norm solution.
    assert!((wit - long_weights(&dm).unwrap()).amax() < 1e-8);
}

#[test]
fn cv_at_three() {
    assert!((cv_folded_normal(3.0, 0.05) - 4.6449).abs() < 1e-3);
}

#[test]
fn zero_bound_gives_short_regression() {
    let ds = overlap_design(&mut rng(7), 6, 150);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let ch = optimize_lambda(&dm, 0.0, 1.3, 0.05, &LambdaSearch::default()).unwrap();
    assert_eq!(ch.lambda, Lambda::Infinite);
    let a = short_ridge_fit(&dm).unwrap().weights;
    assert!((ch.half_length - z_two_sided(0.05) * 1.3 * a.norm()).abs() < 1e-12);
}

#[test]
fn large_bound_approaches_long_regression() {
    let ds = overlap_design(&mut rng(8), 6, 200);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let ch = optimize_lambda(&dm, 1e4, 1.0, 0.05, &LambdaSearch::default()).unwrap();
    let long = z_two_sided(0.05) * long_weights(&dm).unwrap().norm();
    assert!((ch.half_length - long).abs() <= 0.01 * long);
}

#[test]
fn small_bound_beats_long_regression() {
    let props = [0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9];
    let treated: Vec<usize> = props.iter().map(|p| (p * 50.0) as usize).collect();
    let (_, dm) = cells(&[50; 8], &treated, &[1.0; 8]);
    let ch = optimize_lambda(&dm, 0.1, 1.0, 0.05, &LambdaSearch::default()).unwrap();
    let long = z_two_sided(0.05) * long_weights(&dm).unwrap().norm();
    assert!(ch.half_length < long);
}

#[test]
fn initial_estimator_fits_noiseless_long_model() {
    let ds = overlap_design(&mut rng(9), 6, 150);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let theta = DVector::from_fn(dm.long_matrix().ncols(), |i, _| 0.3 * i as f64 - 1.0);
    let y = dm.long_matrix() * theta;
    let fit = initial_estimator(&dm, &y, InitialMode::Long).unwrap();
    let var_y = y.variance();
    assert!(fit.sigma_hat.powi(2) <= 1e-16 * var_y.max(1.0));
}

#[test]
fn initial_estimator_falls_back_without_overlap() {
    let (ds, dm) = cells(&[10, 12, 8], &[4, 5, 8], &[1.0, 2.0, 3.0]);
    assert!(matches!(initial_estimator(&dm, &ds.outcome, InitialMode::Long), Err(Error::LongInfeasible)));
    let fit = initial_estimator(&dm, &ds.outcome, InitialMode::Auto).unwrap();
    assert_eq!(fit.mode, InitialMode::CvRidge);
    assert!(fit.warnings.contains(&Warning::InitialFallback));
}

#[test]
fn sigma_and_robust_variance_are_accurate() {
    let mut r = rng(10);
    let ds = continuous_design(&mut r, 500, 2);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let a = short_ridge_fit(&dm).unwrap().weights;
    let mu = dm.long_matrix() * DVector::from_fn(1 + dm.x.ncols() + dm.k(), |i, _| 0.5 + 0.1 * i as f64);
    let (mut sigma_ok, mut var_ok) = (0, 0);
    for _ in 0..500 {
        let y = &mu + DVector::from_fn(dm.n(), |_, _| normal(&mut r));
        let init = initial_estimator(&dm, &y, InitialMode::Long).unwrap();
        if (init.sigma_hat.powi(2) - 1.0).abs() <= 0.15 {
            sigma_ok += 1;
        }
        let v = variance_robust(&a, &init.residuals, SeKind::Robust, 0.0, None).unwrap();
        let ratio = v / a.norm_squared();
        if (0.8..=1.25).contains(&ratio) {
            var_ok += 1;
        }
    }
    assert!(sigma_ok as f64 >= 0.9 * 500.0, "{sigma_ok}");
    assert!(var_ok as f64 >= 0.95 * 500.0, "{var_ok}");
}

#[test]
fn variance_reductions() {
    let a = DVector::from_vec(vec![0.5, -0.25, 0.75, -1.0]);
    let e = DVector::repeat(4, 0.7);
    let robust = variance_robust(&a, &e, SeKind::Robust, 0.0, None).unwrap();
    assert!((robust - 0.49 * a.norm_squared()).abs() < 1e-15);
    let ids = [1, 2, 3, 4];
    let cluster = variance_robust(&a, &e, SeKind::Cluster, 0.0, Some(&ids)).unwrap();
    assert_eq!(cluster, robust);
    assert!(matches!(
        variance_robust(&a, &e, SeKind::Cluster, 0.0, Some(&[1, 1, 1, 1])),
        Err(Error::SingleCluster)
    ));
}

#[test]
fn zero_bound_interval_is_classic_short_interval() {
    let ds = overlap_design(&mut rng(11), 6, 150);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    for kind in [SeKind::Homoskedastic, SeKind::Robust] {
        let cfg = CiConfig::default().with_se(kind);
        let rep = feasible_ci(&dm, &ds.outcome, &cfg).unwrap();
        let init = initial_estimator(&dm, &ds.outcome, InitialMode::Auto).unwrap();
        let short = short_fit(&dm, &ds.outcome).unwrap();
        let v = variance_robust(&short.weights, &init.residuals, kind, init.sigma_hat, None).unwrap();
        let ci = naive_ci(&short, &dm, 0.0, 0.05, v).unwrap();
        assert!((rep.beta_hat - short.beta_hat).abs() < 1e-12);
        assert!((rep.ci_lo - ci.lo).abs() < 1e-10 && (rep.ci_hi - ci.hi).abs() < 1e-10);
    }
}

#[test]
fn dominant_weight_triggers_lindeberg_warning() {
    let (mut ds, _) = cells(&[30, 40, 40], &[1, 20, 20], &[1.0, 1.0, 1.0]);
    let mut r = rng(12);
    for v in ds.outcome.iter_mut() {
        *v += normal(&mut r);
    }
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let rep = feasible_ci(&dm, &ds.outcome, &CiConfig::default().with_c(50.0)).unwrap();
    assert!(rep.lindeberg > 0.05);
    assert!(rep.warnings.iter().any(|w| matches!(w, Warning::LindebergWeight { .. })));
}

#[test]
fn short_estimand_weights_cells_by_conditional_variance() {
    let (ds, dm) = cells(&[50, 50], &[10, 40], &[1.0, 3.0]);
    let est = short_fit(&dm, &ds.outcome).unwrap().beta_hat;
    // Both cells have p(1−p) = 0.16 and equal size, so the weights are equal.
    assert!((est - 2.0).abs() < 1e-12);
    let (ds, dm) = cells(&[50, 50], &[25, 10], &[1.0, 3.0]);
    let est = short_fit(&dm, &ds.outcome).unwrap().beta_hat;
    let (w1, w2) = (0.25, 0.16);
    assert!((est - (w1 * 1.0 + w2 * 3.0) / (w1 + w2)).abs() < 1e-12);
    let (ds, dm) = cells(&[40, 60], &[10, 15], &[1.0, 3.0]);
    let est = short_fit(&dm, &ds.outcome).unwrap().beta_hat;
    assert!((est - (40.0 * 1.0 + 60.0 * 3.0) / 100.0).abs() < 1e-12);
    let (ds, dm) = cells(&[40, 60], &[5, 45], &[2.0, 2.0]);
    assert!((short_fit(&dm, &ds.outcome).unwrap().beta_hat - 2.0).abs() < 1e-12);
}

#[test]
fn long_regression_rejects_all_treated_cell() {
    let (ds, dm) = cells(&[10, 12, 8], &[4, 5, 8], &[1.0, 2.0, 3.0]);
    assert!(matches!(long_fit(&dm, &ds.outcome), Err(Error::LongInfeasible)));
}

#[test]
fn trimming_rules() {
    let (ds, dm) = cells(&[40, 40, 40], &[15, 20, 25], &[1.0, 2.0, 3.0]);
    let t = trimmed_fit(&dm, &ds.outcome, &TrimRule::default()).unwrap();
    assert!((t.beta_hat - long_fit(&dm, &ds.outcome).unwrap().beta_hat).abs() < 1e-12);
    let (ds, dm) = cells(&[40, 40, 40], &[2, 20, 25], &[1.0, 2.0, 3.0]);
    let t = trimmed_fit(&dm, &ds.outcome, &TrimRule::default()).unwrap();
    assert!((t.beta_hat - 2.5).abs() < 1e-12);
}

#[test]
fn bias_corrected_intervals() {
    let mut r = rng(13);
    let (mut ds, _) = cells(&[40, 40, 40, 40], &[4, 12, 20, 34], &[0.0, 1.0, 2.0, 3.0]);
    for v in ds.outcome.iter_mut() {
        *v += normal(&mut r);
    }
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let short = short_fit(&dm, &ds.outcome).unwrap();
    let v = short.weights.norm_squared();
    let classic = naive_ci(&short, &dm, 0.0, 0.05, v).unwrap();
    let bc0 = bias_corrected_ci(&short, &dm, 0.0, 0.05, v).unwrap();
    assert!((classic.half_length - bc0.half_length).abs() < 1e-12);

    let cfg = CiConfig::default().with_c(0.5).with_se(SeKind::Homoskedastic);
    let table = compare(&dm, &ds.outcome, &cfg, &TrimRule::default()).unwrap();
    let half = |name: &str| table.row(name).unwrap().values.as_ref().unwrap().1.half_length;
    assert!(half("short_bc") >= half("regulaTE") - 1e-9);
    assert!(half("trimmed_bc") >= half("regulaTE") - 1e-9);
}

#[test]
fn vcate_exact_cases() {
    let ds = continuous_design(&mut rng(14), 80, 1);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let delta = DVector::from_vec(vec![0.7]);
    let w = dm.long_matrix();
    let theta = DVector::from_fn(w.ncols(), |i, _| if i == w.ncols() - 1 { 0.7 } else { 1.0 + i as f64 });
    let y = &w * theta;
    let plug = vcate_plugin(&dm, &y).unwrap();
    let truth = delta.dot(&(&dm.vx * &delta));
    assert!((plug - truth).abs() < 1e-10);
    let x = ds.covariates.column(0);
    let mean = x.mean();
    let var_n = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    assert!((plug - 0.49 * var_n).abs() < 1e-10);
    let corr = vcate_corrected(&dm, &y).unwrap();
    assert!((corr.corrected - truth).abs() < 1e-10);
}

#[test]
fn vcate_plugin_bias_matches_trace() {
    let mut r = rng(15);
    let ds = continuous_design(&mut r, 200, 2);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let w = dm.long_matrix();
    let mu = &w * DVector::from_fn(w.ncols(), |i, _| if i > dm.x.ncols() { 0.0 } else { 1.0 });
    let pinv = regulate::linalg::Projector::new(&w).pseudo_inverse();
    let b = pinv.rows(1 + dm.x.ncols(), dm.k());
    let trace = (&dm.vx * (b * b.transpose())).trace();
    let reps = 2000;
    let vals: Vec<f64> = (0..reps)
        .map(|_| vcate_plugin(&dm, &(&mu + DVector::from_fn(dm.n(), |_, _| normal(&mut r)))).unwrap())
        .collect();
    let m = vals.iter().sum::<f64>() / reps as f64;
    let se = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps - 1) as f64 / reps as f64).sqrt();
    assert!(trace > 0.0);
    assert!((m - trace).abs() < 3.0 * se, "mean {m} trace {trace} se {se}");
}

#[test]
fn vcate_rejects_singleton_cell() {
    let (ds, dm) = cells(&[1, 20, 20], &[0, 10, 10], &[0.0; 3]);
    let _ = ds;
    let mut y = DVector::from_fn(dm.n(), |i, _| i as f64 * 0.1);
    y[0] = 3.0;
    let err = vcate_corrected(&dm, &y);
    assert!(matches!(err, Err(Error::SelfLeveraged { .. }) | Err(Error::LongInfeasible)), "{err:?}");
}

#[test]
fn vcate_uses_overlap_subsample_when_needed() {
    let mut r = rng(16);
    let (mut ds, _) = cells(&[30, 30, 30, 20], &[10, 15, 20, 20], &[1.0, 2.0, 3.0, 4.0]);
    for v in ds.outcome.iter_mut() {
        *v += normal(&mut r);
    }
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let rep = estimate_vcate(&dm, &ds.outcome, 0.05).unwrap();
    assert_eq!(rep.rows_used, 90);
    assert!(rep.warnings.contains(&Warning::OverlapSubsample { dropped_rows: 20 }));
}

#[test]
fn sensitivity_curve_cases() {
    let mut r = rng(17);
    let (mut ds, _) = cells(&[60, 60, 60], &[20, 30, 40], &[1.0, 1.0, 1.0]);
    for v in ds.outcome.iter_mut() {
        *v += 0.01 * normal(&mut r);
    }
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let grid = regulate::vcate::parse_c_grid("0:0.03:0.0025").unwrap();
    let cfg = CiConfig::default();
    let curve = sensitivity(&dm, &ds.outcome, &grid, &cfg).unwrap();
    assert_eq!(curve.rows.len(), 13);
    assert_eq!(curve.breakdown_c, None);
    let first = curve.rows[0].regulate.as_ref().unwrap();
    let (b, ci) = curve.rows[0].short_bc.as_ref().unwrap();
    assert!((first.beta_hat - b).abs() < 1e-12 && (first.ci_lo - ci.lo).abs() < 1e-10);

    // Treated and untreated outcomes coincide within cells: the estimate is 0.
    let (mut ds0, _) = cells(&[20, 20, 20], &[10, 10, 10], &[0.0; 3]);
    for c in 0..3 {
        for i in 0..10 {
            let v = normal(&mut r);
            ds0.outcome[20 * c + i] = v;
            ds0.outcome[20 * c + 10 + i] = v;
        }
    }
    let dm0 = build_design(&ds0, Estimand::Ate).unwrap();
    let curve = sensitivity(&dm0, &ds0.outcome, &grid, &cfg).unwrap();
    assert_eq!(curve.breakdown_c, Some(0.0));
}

#[test]
fn worst_case_delta_normalization() {
    let ds = continuous_design(&mut rng(18), 100, 3);
    let dm = build_design(&ds, Estimand::Ate).unwrap();
    let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    assert_eq!(make_worstcase_delta(&dm, 0.0, DeltaTarget::Direction(&e1)).unwrap(), DVector::zeros(3));
    let d = make_worstcase_delta(&dm, 0.8, DeltaTarget::Direction(&e1)).unwrap();
    assert!((d[0] - 0.8 / dm.vx[(0, 0)].sqrt()).abs() < 1e-12 && d[1] == 0.0 && d[2] == 0.0);
}

#[test]
fn constant_effects_simulation() {
    let spec = DgpSpec::cells(vec![50; 4], vec![0.2, 0.4, 0.6, 0.8], TauProfile::PerCell(vec![1.5; 4]));
    let res = simulate(&spec, 1000, 5, &[SimEstimator::Regulate, SimEstimator::Short]).unwrap();
    let (reg, short) = (res.get(SimEstimator::Regulate).unwrap(), res.get(SimEstimator::Short).unwrap());
    assert!(short.coverage >= 0.94);
    assert_eq!(reg.coverage, short.coverage);
    assert_eq!(reg.mean_estimate, short.mean_estimate);
}

#[test]
fn no_overlap_simulation_pattern() {
    let cfg = parse_dgp_config(include_str!("../dgp/dgp3.cfg")).unwrap();
    let res = simulate(&cfg.spec, 2000, cfg.seed, &SimEstimator::ALL).unwrap();
    assert!(res.get(SimEstimator::Long).unwrap().status.is_err());
    assert!(res.get(SimEstimator::Trim).unwrap().coverage < 0.90);
    assert!(res.get(SimEstimator::Regulate).unwrap().coverage >= 0.94);
    let mut buf = Vec::new();
    res.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.contains("coverage,") && text.contains("infeasible"));
}

#[test]
fn bias_corrected_short_interval_requires_constraints() {
    let (ds, dm) = cells(&[10, 10], &[5, 5], &[1.0, 1.0]);
    let bad = BaselineFit { kind: regulate::baselines::BaselineKind::Short, weights: DVector::repeat(20, 0.05), beta_hat: 0.0 };
    assert!(matches!(bias_corrected_ci(&bad, &dm, 1.0, 0.05, 1.0), Err(Error::WeightsNotUnbiased)));
    let _ = ds;
}
