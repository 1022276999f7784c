mod common;

use common::{bits_equal, grid, linear_pair, random_system, rel_err, ridge_by_elimination, rng};
use mloz::climatology::ClimatologyKind;
use mloz::dataset::build_training_pairs;
use mloz::field::{FieldSeries, Variable};
use mloz::trainer::{
    cross_validate, default_alpha_grid, feature_moments, fold_ranges, ridge_objective, ridge_solve, train_all,
    train_grid_point, SolveMethod, TrainerConfig,
};
use proptest::prelude::*;

fn annual_config() -> TrainerConfig {
    TrainerConfig {
        cap_clim_kind: ClimatologyKind::Annual,
        ..TrainerConfig::default()
    }
}

#[test]
fn single_feature_matches_closed_form() {
    let xs = [1.0, -2.0, 0.5, 3.0];
    let ys = [2.0, -3.5, 1.0, 6.5];
    for alpha in [0.0, 0.3, 10.0] {
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let c = ridge_solve(&xs, 1, &ys, alpha).unwrap().coeffs[0];
        assert!((c - sxy / (sxx + alpha)).abs() < 1e-14);
    }
}

#[test]
fn matches_elimination_oracle_on_random_systems() {
    let mut r = rng(11);
    for alpha in default_alpha_grid() {
        let (xs, ys) = random_system(&mut r, 120, 30, 0.3);
        let got = ridge_solve(&xs, 30, &ys, alpha).unwrap();
        assert_eq!(got.method, SolveMethod::Cholesky);
        assert!(rel_err(&got.coeffs, &ridge_by_elimination(&xs, &ys, 30, alpha)) < 1e-10);
    }
}

#[test]
fn duplicated_column_without_penalty_gives_minimum_norm() {
    let x = [1.0, 2.0, -1.0, 0.5, 3.0];
    let xs: Vec<f64> = x.iter().flat_map(|v| [*v, *v]).collect();
    let ys: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let sol = ridge_solve(&xs, 2, &ys, 0.0).unwrap();
    assert_eq!(sol.method, SolveMethod::MinimumNorm);
    assert!((sol.coeffs[0] - 1.0).abs() < 1e-10 && (sol.coeffs[1] - 1.0).abs() < 1e-10);
}

#[test]
fn rejects_bad_inputs() {
    assert!(ridge_solve(&[1.0, 2.0], 2, &[1.0, 2.0], 1.0).is_err());
    assert!(ridge_solve(&[1.0, 2.0], 1, &[1.0, 2.0], -1.0).is_err());
    assert!(ridge_solve(&[1.0, f64::NAN], 1, &[1.0, 2.0], 1.0).is_err());
}

#[test]
fn cv_scores_match_explicit_fold_loop() {
    let mut r = rng(5);
    let grid = default_alpha_grid();
    for (n, nfeat) in [(40, 3), (91, 12), (150, 25)] {
        let (xs, ys) = random_system(&mut r, n, nfeat, 1.0);
        let cv = cross_validate(&xs, nfeat, &ys, &grid, 3).unwrap();
        let want = common::fold_loop_scores(&xs, &ys, nfeat, &grid, 3);
        for (g, w) in cv.cv_scores.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9 * w.abs(), "{g} vs {w}");
        }
        assert_eq!(cv.best_alpha, grid[cv.best_index]);
    }
}

#[test]
fn pure_noise_target_prefers_heavy_penalty() {
    let mut r = rng(8);
    let (xs, _) = random_system(&mut r, 120, 10, 0.0);
    let ys: Vec<f64> = (0..120).map(|_| common::normal(&mut r)).collect();
    let cv = cross_validate(&xs, 10, &ys, &default_alpha_grid(), 3).unwrap();
    assert!(cv.best_alpha >= 10.0, "{}", cv.best_alpha);
}

#[test]
fn feature_moments_are_population_statistics() {
    let x = [1.0, 10.0, 3.0, 10.0, 5.0, 10.0];
    let (m, s) = feature_moments(&x, 2, 1e-12);
    assert_eq!(m, vec![3.0, 10.0]);
    assert!((s[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(s[1], 1e-12);
}

#[test]
fn train_all_agrees_with_per_point_training() {
    let g = grid(3, 2, 20);
    let (t, o) = linear_pair(&g, 200, 3);
    let cfg = annual_config();
    let set = train_all(&t, &o, &cfg).unwrap();
    for lat in 0..3 {
        for lon in 0..2 {
            let pairs = build_training_pairs(&t, &o, lat, lon).unwrap();
            for lev in [0, 5, g.cap_level_index() - 1] {
                let m = train_grid_point(&pairs, lev, &cfg).unwrap();
                let s = set.model(lat, lon, lev);
                assert!(bits_equal(&m.coeffs, &s.coeffs));
                assert_eq!(m.alpha.to_bits(), s.alpha.to_bits());
                assert_eq!(m.scaling, s.scaling);
            }
        }
    }
    assert_eq!(set.meta().nfolds, 3);
    assert_eq!(set.meta().nsamples, 199);
}

#[test]
fn recovers_linear_dependence() {
    let g = grid(1, 1, 20);
    let (t, o) = linear_pair(&g, 800, 4);
    let set = train_all(&t, &o, &annual_config()).unwrap();
    let m = set.model(0, 0, 3);
    // Effective weight on the raw temperature of level 3.
    let w3 = m.coeffs[3] * m.scaling.y_std / m.scaling.x_std[3];
    assert!((w3 + 2e-8).abs() < 1e-9, "{w3}");
}

#[test]
fn too_few_samples_is_reported() {
    let g = grid(1, 1, 20);
    let (t, o) = linear_pair(&g, 3, 4);
    assert!(matches!(
        train_all(&t, &o, &annual_config()),
        Err(mloz::MlozError::InsufficientData(_))
    ));
}

#[test]
fn mismatched_series_are_rejected() {
    let g = grid(1, 1, 20);
    let (t, _) = linear_pair(&g, 30, 4);
    let t2 = FieldSeries::new(g.clone(), Variable::Temperature, t.data().to_vec()).unwrap();
    assert!(train_all(&t, &t2, &annual_config()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solution_is_a_minimum(seed in 0u64..10_000, nfeat in 1usize..12, extra in 0usize..40, ai in 0usize..13) {
        let mut r = rng(seed);
        let n = nfeat + extra + 1;
        let alpha = default_alpha_grid()[ai];
        let (xs, ys) = random_system(&mut r, n, nfeat, 0.5);
        let c = ridge_solve(&xs, nfeat, &ys, alpha).unwrap().coeffs;
        let f0 = ridge_objective(&xs, nfeat, &ys, alpha, &c);
        for j in 0..nfeat {
            for eps in [1e-3, -1e-3] {
                let mut p = c.clone();
                p[j] += eps;
                prop_assert!(ridge_objective(&xs, nfeat, &ys, alpha, &p) >= f0 - 1e-9 * f0.abs());
            }
        }
    }

    #[test]
    fn folds_partition_samples(n in 3usize..500, k in 2usize..6) {
        prop_assume!(n >= k);
        let f = fold_ranges(n, k);
        prop_assert_eq!(f.len(), k);
        prop_assert_eq!(f[0].start, 0);
        prop_assert_eq!(f[k - 1].end, n);
        for w in f.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(w[0].len() >= w[1].len());
            prop_assert!(w[0].len() - w[1].len() <= 1);
        }
    }

    #[test]
    fn cv_choice_is_on_the_grid(seed in 0u64..1000) {
        let mut r = rng(seed);
        let (xs, ys) = random_system(&mut r, 60, 6, 2.0);
        let grid = default_alpha_grid();
        let cv = cross_validate(&xs, 6, &ys, &grid, 3).unwrap();
        let min = cv.cv_scores.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(grid.contains(&cv.best_alpha));
        prop_assert!(cv.cv_scores[cv.best_index] <= min * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn predictions_ignore_affine_units(scale in 0.5f64..2.0, shift in -30.0f64..30.0, seed in 0u64..100) {
        let g = grid(1, 1, 16);
        let (t, o) = linear_pair(&g, 300, seed);
        let t2 = FieldSeries::new(
            g.clone(),
            Variable::Temperature,
            t.data().iter().map(|v| scale * v + shift).collect(),
        )
        .unwrap();
        let cfg = annual_config();
        let a = train_all(&t, &o, &cfg).unwrap();
        let b = train_all(&t2, &o, &cfg).unwrap();
        prop_assert!(rel_err(b.coeffs(), a.coeffs()) < 1e-6);
    }
}
