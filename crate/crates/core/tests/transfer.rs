mod common;

use common::{bits_equal, grid, linear_pair, normal, rng};
use mloz::bench::synthetic_coefficients;
use mloz::climatology::{Climatology, ClimatologyKind};
use mloz::engine::{predict_field, InferenceContext};
use mloz::field::{FieldSeries, Variable};
use mloz::grid::GridSpec;
use mloz::toysim::{world_a_levels, world_b_levels};
use mloz::trainer::{train_all, TrainerConfig};
use mloz::transfer::{
    build_vertical_map, interp_ozone_down, interp_temperature_up, not_a_knot_weights, recalibrate_scaling,
    regrid_temperature, transfer_predict, RecalibrationParams, DEFAULT_FILL_THRESHOLD_M,
};
use mloz::MlozError;
use proptest::prelude::*;

fn column_grid(levels: Vec<f64>) -> GridSpec {
    GridSpec::regular(1, 1, levels).unwrap()
}

fn lagrange(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..knots.len() {
        let mut l = 1.0;
        for j in 0..knots.len() {
            if i != j {
                l *= (x - knots[j]) / (knots[i] - knots[j]);
            }
        }
        s += values[i] * l;
    }
    s
}

#[test]
fn four_knot_spline_is_the_interpolating_cubic() {
    let knots = [0.0, 1.3, 2.1, 4.0];
    let values = [1.0, -2.0, 0.5, 3.0];
    let targets: Vec<f64> = (0..=40).map(|i| 0.1 * i as f64).collect();
    let w = not_a_knot_weights(&knots, &targets).unwrap();
    for (t, row) in targets.iter().zip(w.chunks_exact(4)) {
        let got: f64 = row.iter().zip(&values).map(|(a, b)| a * b).sum();
        assert!((got - lagrange(&knots, &values, *t)).abs() < 1e-12);
    }
}

#[test]
fn three_knots_are_rejected() {
    assert!(matches!(
        not_a_knot_weights(&[0.0, 1.0, 2.0], &[0.5]),
        Err(MlozError::SplineInfeasible(3))
    ));
}

#[test]
fn host_world_fills_six_levels() {
    let a = column_grid(world_a_levels());
    let b = column_grid(world_b_levels());
    let map = build_vertical_map(&a, &b, DEFAULT_FILL_THRESHOLD_M).unwrap();
    assert_eq!(map.fill_levels(), &[0, 1, 2, 3, 4, 5]);
    let src = vec![2e-6; 76];
    let fill: Vec<f64> = (0..71).map(|k| 1e-8 * k as f64).collect();
    let down = interp_ozone_down(&src, &map, &fill).unwrap();
    for k in 0..6 {
        assert_eq!(down[k].to_bits(), fill[k].to_bits());
    }
    for v in &down[6..] {
        assert!((v - 2e-6).abs() < 1e-20);
    }
}

#[test]
fn ozone_down_never_negative() {
    let a = column_grid(world_a_levels());
    let b = column_grid(world_b_levels());
    let map = build_vertical_map(&a, &b, DEFAULT_FILL_THRESHOLD_M).unwrap();
    let mut r = rng(4);
    let src: Vec<f64> = (0..76).map(|_| normal(&mut r).abs() * 1e-6).collect();
    let down = interp_ozone_down(&src, &map, &vec![0.0; 71]).unwrap();
    assert!(down.iter().all(|v| *v >= 0.0));
}

#[test]
fn self_transfer_reproduces_engine() {
    let g = grid(3, 2, 30);
    let set = synthetic_coefficients(&g, 5).unwrap();
    let map = build_vertical_map(&g, &g, 0.0).unwrap();
    assert!(map.fill_levels().is_empty());
    let recal = RecalibrationParams::from_coefficients(&set);
    let mut r = rng(6);
    for day in [0, 100, 364] {
        let t: Vec<f64> = (0..g.npoints()).map(|_| 240.0 + 10.0 * normal(&mut r)).collect();
        let ctx = InferenceContext::new(&set, 2, day).unwrap();
        let a = predict_field(&t, &ctx).unwrap();
        let b = transfer_predict(&t, &map, &recal, &ctx, set.cap_climatology()).unwrap();
        assert!(bits_equal(&a, &b));
    }
}

#[test]
fn self_recalibration_returns_trained_statistics() {
    let g = grid(2, 1, 20);
    let (t, o) = linear_pair(&g, 400, 1);
    let cfg = TrainerConfig {
        cap_clim_kind: ClimatologyKind::Annual,
        ..TrainerConfig::default()
    };
    let set = train_all(&t, &o, &cfg).unwrap();
    let map = build_vertical_map(&g, &g, 0.0).unwrap();
    let recal = recalibrate_scaling(&t, &map, &set, cfg.std_floor).unwrap();
    assert!(bits_equal(&recal.x_mean_target, set.x_mean()));
    assert!(bits_equal(&recal.x_std_target, set.x_std()));

    let shifted = FieldSeries::new(
        g.clone(),
        Variable::Temperature,
        t.data().iter().map(|v| v + 3.0).collect(),
    )
    .unwrap();
    let r2 = recalibrate_scaling(&shifted, &map, &set, cfg.std_floor).unwrap();
    for (a, b) in r2.x_mean_target.iter().zip(set.x_mean()) {
        assert!((a - b - 3.0).abs() < 1e-9);
    }
    for (a, b) in r2.x_std_target.iter().zip(set.x_std()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn recalibration_needs_a_year() {
    let g = grid(1, 1, 20);
    let (t, o) = linear_pair(&g, 400, 1);
    let cfg = TrainerConfig {
        cap_clim_kind: ClimatologyKind::Annual,
        ..TrainerConfig::default()
    };
    let set = train_all(&t, &o, &cfg).unwrap();
    let map = build_vertical_map(&g, &g, 0.0).unwrap();
    let short = t.slice_days(0..100).unwrap();
    assert!(matches!(
        recalibrate_scaling(&short, &map, &set, 1e-12),
        Err(MlozError::InsufficientData(_))
    ));
}

#[test]
fn regridding_a_linear_field_is_exact() {
    let a = GridSpec::regular(2, 1, world_a_levels()).unwrap();
    let b = GridSpec::regular(2, 1, world_b_levels()).unwrap();
    let map = build_vertical_map(&a, &b, DEFAULT_FILL_THRESHOLD_M).unwrap();
    let zb = b.level_height_m();
    let data: Vec<f64> = (0..3)
        .flat_map(|d| (0..2).flat_map(move |_| zb.iter().map(move |z| 280.0 - 1e-3 * z + d as f64)))
        .collect();
    let series = FieldSeries::new(b.clone(), Variable::Temperature, data).unwrap();
    let up = regrid_temperature(&series, &map, &a).unwrap();
    let top = zb[zb.len() - 1];
    for d in 0..3 {
        for (k, z) in a.level_height_m().iter().enumerate() {
            let want = 280.0 - 1e-3 * z.min(top).max(zb[0]) + d as f64;
            assert!((up.value(d, 1, 0, k) - want).abs() < 1e-9);
        }
    }
}

#[test]
fn transfer_fill_uses_the_climatology_day() {
    let src = grid(2, 1, 30);
    let dst = GridSpec::regular(2, 1, (0..25).map(|k| 50.0 + 2_600.0 * k as f64).collect()).unwrap();
    let set = synthetic_coefficients(&src, 1).unwrap();
    let map = build_vertical_map(&src, &dst, DEFAULT_FILL_THRESHOLD_M).unwrap();
    let fill = Climatology::from_fn(dst.clone(), ClimatologyKind::DayOfYear, Variable::Ozone, |d, p| {
        1e-7 * (d + p) as f64
    })
    .unwrap();
    let t: Vec<f64> = vec![240.0; dst.npoints()];
    let ctx = InferenceContext::new(&set, 1, 42).unwrap();
    let out = transfer_predict(&t, &map, &RecalibrationParams::from_coefficients(&set), &ctx, &fill).unwrap();
    for col in 0..2 {
        for &k in map.fill_levels() {
            let p = col * 25 + k;
            assert_eq!(out[p], fill.field(42)[p]);
        }
    }
}

fn sorted_levels(raw: Vec<f64>) -> Vec<f64> {
    let mut z = raw;
    z.sort_by(f64::total_cmp);
    z.dedup_by(|a, b| (*a - *b).abs() < 10.0);
    z
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spline_reproduces_polynomials(
        src in prop::collection::vec(100.0f64..60_000.0, 8..40),
        dst in prop::collection::vec(0.0f64..62_000.0, 8..40),
        c in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let src = sorted_levels(src);
        let dst = sorted_levels(dst);
        prop_assume!(src.len() >= 4 && dst.len() >= 4);
        let map = build_vertical_map(&column_grid(src.clone()), &column_grid(dst.clone()), 0.0).unwrap();
        let s = 1e-4;
        let lin = |z: f64| c[0] + c[1] * z * s;
        let cub = |z: f64| lin(z) + c[2] * (z * s).powi(2) + c[3] * (z * s).powi(3);
        let (lo, hi) = (dst[0], dst[dst.len() - 1]);
        for (f, tol) in [(&lin as &dyn Fn(f64) -> f64, 1e-10), (&cub, 1e-8)] {
            let col: Vec<f64> = dst.iter().map(|&z| f(z)).collect();
            let up = interp_temperature_up(&col, &map).unwrap();
            let scale = col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (z, v) in src.iter().zip(&up) {
                if *z >= lo && *z <= hi {
                    prop_assert!((v - f(*z)).abs() <= tol * scale, "z {} got {} want {}", z, v, f(*z));
                }
            }
        }
        for w in map.linear_weights() {
            prop_assert!((w.w_lo + w.w_hi - 1.0).abs() < 1e-15);
            prop_assert!(w.w_lo >= 0.0 && w.w_hi >= 0.0 && w.lo <= w.hi);
        }
    }
}
