mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use regulate::baselines::{short_fit, short_ridge_fit, trimmed_weights};
use regulate::bias::{maxbias_general, maxbias_ridge, maxbias_trimmed, TrimRule};
use regulate::dataset::{read_csv, Dataset};
use regulate::design::{build_design, cell_propensity, propensity_fit, DesignMatrices, Estimand};
use regulate::inference::{
    cv_folded_normal, feasible_ci, flci_half_length, optimize_lambda, z_two_sided, CiConfig, LambdaSearch, SeKind,
};
use regulate::ridge::{self, fit_at, Lambda};
use regulate::simlab::{simulate, DgpSpec, SimEstimator, TauProfile};
use regulate::vcate::{sensitivity, vcate_corrected};

const ESTIMANDS: [Estimand; 3] = [Estimand::Ate, Estimand::Att, Estimand::Atu];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_design(r: &mut ChaCha8Rng) -> Dataset {
    if r.gen_bool(0.5) {
        let n = r.gen_range(40..=150);
        let p = r.gen_range(1..=3);
        continuous_design(r, n, p)
    } else {
        overlap_design(r, 8, 150)
    }
}

fn sorted_grid(dm: &DesignMatrices) -> Vec<f64> {
    LambdaSearch { grid_points: 25, lo: 1e-4, hi: 1e6, ..LambdaSearch::default() }.grid(dm)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn saturated_indicators_partition_rows(seed in any::<u64>()) {
        let ds = overlap_design(&mut rng(seed), 8, 150);
        for i in 0..ds.n() {
            let s: f64 = ds.covariates.row(i).iter().sum();
            prop_assert!(s == 0.0 || s == 1.0);
            prop_assert!(ds.covariates.row(i).iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn dataset_csv_round_trip(seed in any::<u64>()) {
        let ds = random_design(&mut rng(seed));
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &ds.dump_schema()).unwrap();
        prop_assert_eq!(&back.outcome, &ds.outcome);
        prop_assert_eq!(&back.treatment, &ds.treatment);
        prop_assert_eq!(&back.covariates, &ds.covariates);
    }

    #[test]
    fn design_is_idempotent_through_csv(seed in any::<u64>(), e in 0usize..3) {
        let ds = random_design(&mut rng(seed));
        let dm = build_design(&ds, ESTIMANDS[e]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &ds.dump_schema()).unwrap();
        let dm2 = build_design(&back, ESTIMANDS[e]).unwrap();
        prop_assert_eq!(&dm.xt, &dm2.xt);
        prop_assert_eq!(&dm.vx, &dm2.vx);
    }

    #[test]
    fn design_demeaning_and_vx(seed in any::<u64>(), e in 0usize..3) {
        let ds = random_design(&mut rng(seed));
        let est = ESTIMANDS[e];
        let dm = build_design(&ds, est).unwrap();
        let w = est.population_weights(&dm.d);
        let tot: f64 = w.iter().sum();
        for j in 0..dm.k() {
            let m: f64 = dm.xt.column(j).iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / tot;
            prop_assert!(m.abs() <= 1e-10);
        }
        let vx = dm.xt.tr_mul(&dm.xt) / dm.n() as f64;
        prop_assert!((&vx - &dm.vx).amax() <= 1e-10);
        prop_assert!((&dm.vx - dm.vx.transpose()).amax() == 0.0);
        for i in 0..dm.n() {
            for j in 0..dm.k() {
                prop_assert_eq!(dm.dxt[(i, j)], dm.d[i] * dm.xt[(i, j)]);
            }
        }
    }

    #[test]
    fn propensity_is_cell_fraction_and_orthogonal(seed in any::<u64>()) {
        let ds = overlap_design(&mut rng(seed), 8, 150);
        let dm = build_design(&ds, Estimand::Ate).unwrap();
        let p = propensity_fit(&dm);
        let pc = cell_propensity(&dm).unwrap();
        prop_assert!((&p - &pc).amax() <= 1e-12);
        let ortho = dm.x.tr_mul(&(&dm.d - &p)).amax();
        prop_assert!(ortho <= 1e-8 * dm.n() as f64);
    }

    #[test]
    fn frontier_constraints_and_monotonicity(seed in any::<u64>(), e in 0usize..3) {
        let mut r = rng(seed);
        let ds = random_design(&mut r);
        let dm = build_design(&ds, ESTIMANDS[e]).unwrap();
        let c = log_uniform(&mut r, 0.05, 2.0);
        let mut prev: Option<(f64, f64)> = None;
        for l in sorted_grid(&dm) {
            let fit = fit_at(&dm, Lambda::Finite(l)).unwrap();
            prop_assert!((fit.weights.dot(&dm.d) - 1.0).abs() <= 1e-8);
            prop_assert!(dm.x.tr_mul(&fit.weights).amax() <= 1e-8);
            let var = fit.weight_norm_sq();
            let mb = maxbias_ridge(&fit, &dm, c).unwrap();
            if let Some((v0, b0)) = prev {
                prop_assert!(v0 >= var - 1e-12 * (1.0 + var), "variance rose: {} -> {}", v0, var);
                prop_assert!(b0 <= mb + 1e-12 * (1.0 + mb), "maxbias fell: {} -> {}", b0, mb);
            }
            prev = Some((var, mb));
        }
    }

    #[test]
    fn ridge_estimand_is_weighted_average(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ds = overlap_design(&mut r, 8, 150);
        let dm = build_design(&ds, Estimand::Ate).unwrap();
        let lambda = log_uniform(&mut r, 1e-3, 1e3) * ridge::lambda_scale(&dm);
        let fit = fit_at(&dm, Lambda::Finite(lambda)).unwrap();
        let beta = normal(&mut r);
        let gamma = DVector::from_fn(dm.x.ncols(), |_, _| normal(&mut r));
        let delta = DVector::from_fn(dm.k(), |_, _| normal(&mut r));
        let mean_y = &dm.d * beta + &dm.x * &gamma + &dm.dxt * &delta;
        let expected = fit.weights.dot(&mean_y);
        let p = cell_propensity(&dm).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..dm.n() {
            let w = p[i] * (1.0 - p[i]) * (1.0 - dm.xt.row(i).dot(&fit.pi2.transpose()));
            num += w * (beta + dm.xt.row(i).dot(&delta.transpose()));
            den += w;
        }
        prop_assert!((expected - num / den).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn maxbias_is_homogeneous_in_c(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ds = overlap_design(&mut r, 8, 150);
        let dm = build_design(&ds, Estimand::Ate).unwrap();
        let c = log_uniform(&mut r, 0.01, 3.0);
        let fit = fit_at(&dm, Lambda::Finite(ridge::lambda_scale(&dm))).unwrap();
        let g = |c| maxbias_general(&fit.weights, &dm, c).unwrap();
        let rr = |c| maxbias_ridge(&fit, &dm, c).unwrap();
        prop_assert!((g(2.5 * c) - 2.5 * g(c)).abs() <= 1e-12 * (1.0 + g(c)));
        prop_assert!((rr(2.5 * c) - 2.5 * rr(c)).abs() <= 1e-12 * (1.0 + rr(c)));
        let rule = TrimRule::new(0.2).unwrap();
        if let (Ok(t1), Ok(t2)) = (maxbias_trimmed(&dm, &rule, c), maxbias_trimmed(&dm, &rule, 2.5 * c)) {
            prop_assert!((t2 - 2.5 * t1).abs() <= 1e-12 * (1.0 + t1));
        }
    }

    #[test]
    fn maxbias_matches_sampled_sup(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(50..=150);
        let p = r.gen_range(1..=2);
        let ds = continuous_design(&mut r, n, p);
        let dm = build_design(&ds, Estimand::Ate).unwrap();
        let c = log_uniform(&mut r, 0.1, 2.0);
        let a = short_ridge_fit(&dm).unwrap().weights;
        let closed = maxbias_general(&a, &dm, c).unwrap();
        let q = dm.dxt.tr_mul(&a);
        let l = dm.vx.clone().cholesky().unwrap().l();
        let lt_inv = l.transpose().try_inverse().unwrap();
        let mut best: f64 = 0.0;
        for _ in 0..100_000 {
            let u = DVector::from_fn(dm.k(), |_, _| normal(&mut r));
            let u = &u / u.norm();
            let delta = &lt_inv * u * c;
            best = best.max(q.dot(&delta).abs());
        }
        prop_assert!(best <= closed * (1.0 + 1e-9));
        prop_assert!(best >= closed * (1.0 - 2e-3), "sampled {} closed {}", best, closed);
    }

    #[test]
    fn cv_monotone_and_bounded(b in 0.0f64..20.0, db in 0.001f64..2.0, a in 0.01f64..0.3) {
        prop_assert!(cv_folded_normal(b + db, a) > cv_folded_normal(b, a));
        prop_assert!(cv_folded_normal(b, a * 0.9) > cv_folded_normal(b, a));
        if b >= 3.0 {
            let lower = z_two_sided(a).max(b + cv_folded_normal(0.0, 2.0 * a) - 1e-3);
            prop_assert!(cv_folded_normal(b, a) >= lower);
        }
    }

    #[test]
    fn optimum_beats_grid_and_baselines(seed in any::<u64>(), e in 0usize..3) {
        let mut r = rng(seed);
        let ds = overlap_design(&mut r, 8, 200);
        let dm = build_design(&ds, ESTIMANDS[e]).unwrap();
        let c = if r.gen_bool(0.2) { 0.0 } else { log_uniform(&mut r, 0.01, 2.0) };
        let search = LambdaSearch::default();
        let ch = optimize_lambda(&dm, c, 1.0, 0.05, &search).unwrap();
        for (l, h) in &ch.grid {
            prop_assert!(ch.half_length <= h + 1e-9, "grid lambda {} gives {} < {}", l, h, ch.half_length);
        }
        let half = |a: &DVector<f64>| flci_half_length(maxbias_general(a, &dm, c).unwrap(), a.norm(), 0.05);
        prop_assert!(ch.half_length <= half(&short_ridge_fit(&dm).unwrap().weights) + 1e-9);
        if let Ok(t) = trimmed_weights(&dm, &TrimRule::default()) {
            prop_assert!(ch.half_length <= half(&t.weights) + 1e-9);
        }
    }

    #[test]
    fn reported_interval_contains_estimate(seed in any::<u64>(), e in 0usize..3, se in 0usize..2) {
        let mut r = rng(seed);
        let ds = random_design(&mut r);
        let dm = build_design(&ds, ESTIMANDS[e]).unwrap();
        let kind = [SeKind::Homoskedastic, SeKind::Robust][se];
        let cfg = CiConfig::default().with_c(log_uniform(&mut r, 0.01, 1.0)).with_se(kind);
        let rep = feasible_ci(&dm, &ds.outcome, &cfg).unwrap();
        prop_assert!(rep.ci_lo <= rep.beta_hat && rep.beta_hat <= rep.ci_hi);
        prop_assert!(rep.half_length >= z_two_sided(0.05) * rep.sd - 1e-12);
    }

    #[test]
    fn short_fit_is_joint_ols(seed in any::<u64>()) {
        let ds = random_design(&mut rng(seed));
        let dm = build_design(&ds, Estimand::Ate).unwrap();
        let w = DMatrix::from_fn(dm.n(), 1 + dm.x.ncols(), |i, j| if j == 0 { dm.d[i] } else { dm.x[(i, j - 1)] });
        let ols_beta = ols(&w, &ds.outcome)[0];
        let short = short_fit(&dm, &ds.outcome).unwrap().beta_hat;
        prop_assert!((ols_beta - short).abs() <= 1e-10 * (1.0 + short.abs()));
    }

    #[test]
    fn half_length_monotone_in_c(seed in any::<u64>()) {
        let ds = overlap_design(&mut rng(seed), 6, 150);
        let dm = build_design(&ds, Estimand::Ate).unwrap();
        let grid: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let cfg = CiConfig::default().with_se(SeKind::Homoskedastic);
        let curve = sensitivity(&dm, &ds.outcome, &grid, &cfg).unwrap();
        let halves: Vec<f64> = curve.rows.iter().map(|r| r.regulate.as_ref().unwrap().half_length).collect();
        for w in halves.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-9, "{:?}", halves);
        }
    }

    #[test]
    fn corrected_vcate_below_plugin(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(60..=150);
        let p = r.gen_range(1..=3);
        let ds = continuous_design(&mut r, n, p);
        let dm = build_design(&ds, Estimand::Ate).unwrap();
        let v = vcate_corrected(&dm, &ds.outcome).unwrap();
        prop_assert!(v.trace >= 0.0);
        prop_assert!(v.corrected <= v.plugin);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn two_step_equals_generalized_ridge(seed in any::<u64>()) {
        let mut r = rng(seed);
        let ds = if r.gen_bool(0.5) {
            let n = r.gen_range(12..=40);
            let p = r.gen_range(1..=2);
            continuous_design(&mut r, n, p)
        } else {
            overlap_design(&mut r, 4, 30)
        };
        let dm = build_design(&ds, ESTIMANDS[r.gen_range(0..3)]).unwrap();
        let lambda = log_uniform(&mut r, 1e-2, 1e2) * ridge::lambda_scale(&dm);
        let two_step = fit_at(&dm, Lambda::Finite(lambda)).unwrap().beta_hat(&ds.outcome);
        let w = dm.long_matrix();
        let m = w.tr_mul(&w) + dm.long_penalty() * lambda;
        let direct = m.lu().solve(&w.tr_mul(&ds.outcome)).unwrap()[0];
        prop_assert!((two_step - direct).abs() <= 1e-8 * (1.0 + direct.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn short_mean_tracks_its_estimand(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = r.gen_range(2..=5);
        let props: Vec<f64> = (0..m).map(|_| r.gen_range(0.15..0.85)).collect();
        let tau: Vec<f64> = (0..m).map(|_| 1.0 + normal(&mut r)).collect();
        let spec = DgpSpec::cells(vec![40; m], props, TauProfile::PerCell(tau));
        let res = simulate(&spec, 400, seed, &[SimEstimator::Short]).unwrap();
        let s = res.get(SimEstimator::Short).unwrap();
        let t = (s.mean_estimate - (res.truth + s.actual_bias)) / (s.mc_sd / (res.reps as f64).sqrt());
        prop_assert!(t.abs() < 3.0, "t = {}", t);
    }
}
