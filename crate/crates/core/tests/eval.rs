mod common;

use std::f64::consts::PI;

use common::{grid, normal, rng};
use mloz::climatology::{Climatology, ClimatologyKind, DAYS_PER_YEAR};
use mloz::eval::{
    column_ozone, drift_of_series, drift_test, export_plot_data, global_mean, kde_pdf, max_abs_bias, percent_bias,
    read_plot_data, std_map, STRATOSPHERE, TROPICAL_LOWER_STRATOSPHERE,
};
use mloz::field::{FieldSeries, Variable};
use mloz::grid::GridSpec;
use proptest::prelude::*;

#[test]
fn single_sample_density_is_a_gaussian() {
    let pdf = kde_pdf(&[3e-6], 5e-6).unwrap();
    let h = 1e-7;
    assert_eq!(pdf.bandwidth, 0.02 * 5e-6);
    for (x, d) in pdf.support.iter().zip(&pdf.density) {
        let u = (x - 3e-6) / h;
        let want = (-0.5 * u * u).exp() / (h * (2.0 * PI).sqrt());
        assert!((d - want).abs() <= 1e-12 * want.max(1.0));
    }
    assert_eq!(pdf.support.len(), 512);
    assert!((pdf.support[0] - (3e-6 - 6.0 * h)).abs() < 1e-20);
}

#[test]
fn kde_rejects_bad_input() {
    assert!(kde_pdf(&[], 1.0).is_err());
    assert!(kde_pdf(&[1.0], 0.0).is_err());
    assert!(kde_pdf(&[f64::NAN], 1.0).is_err());
}

#[test]
fn sinusoid_std_is_amplitude_over_root_two() {
    let g = grid(1, 1, 3);
    let years = 4;
    let n = years * DAYS_PER_YEAR;
    let amp = [1.0, 2.5, 0.0];
    let data: Vec<f64> = (0..n)
        .flat_map(|t| amp.map(|a| 5.0 + a * (2.0 * PI * t as f64 / DAYS_PER_YEAR as f64).sin()))
        .collect();
    let s = FieldSeries::new(g, Variable::Ozone, data).unwrap();
    let sd = std_map(&s, 1).unwrap();
    for (v, a) in sd.iter().zip(amp) {
        assert!((v - a / 2f64.sqrt()).abs() < 1e-10, "{v}");
    }
    assert!(std_map(&s, 3).is_err());
}

#[test]
fn drift_of_a_ramp_is_its_slope() {
    // 5 % of the mean per decade.
    let mean = 2.0;
    let slope = 0.05 * mean / (10.0 * DAYS_PER_YEAR as f64);
    let n = 6 * DAYS_PER_YEAR;
    let spin = DAYS_PER_YEAR;
    let centre = spin as f64 + (n - spin - 1) as f64 / 2.0;
    let y: Vec<f64> = (0..n).map(|t| mean + slope * (t as f64 - centre)).collect();
    let r = drift_of_series(&y, spin, 1.0).unwrap();
    assert!(
        (r.trend_per_decade_pct - 5.0).abs() < 1e-9,
        "{}",
        r.trend_per_decade_pct
    );
    assert!(!r.pass);
    let flat = drift_of_series(&vec![mean; n], spin, 1.0).unwrap();
    assert_eq!(flat.trend_per_decade_pct, 0.0);
    assert!(flat.pass);
    assert!(drift_of_series(&y[..4 * DAYS_PER_YEAR], spin, 1.0).is_err());
}

#[test]
fn drift_test_uses_area_weighted_mean() {
    let g = grid(4, 1, 2);
    let n = 5 * DAYS_PER_YEAR;
    let data: Vec<f64> = (0..n).flat_map(|_| vec![1.0; 8]).collect();
    let s = FieldSeries::new(g, Variable::Ozone, data).unwrap();
    assert_eq!(drift_test(&s, 1, 1.0).unwrap().trend_per_decade_pct, 0.0);
}

#[test]
fn uniform_profile_column_is_analytic() {
    // A constant mixing ratio over the whole atmosphere gives c·p_s/(m·g).
    let z: Vec<f64> = (0..200).map(|k| 500.0 * k as f64).collect();
    let c = 1e-6;
    let got = column_ozone(&vec![c; z.len()], &z).unwrap();
    let m = 28.9647e-3 / 6.022_140_76e23;
    let want = c * 101_325.0 / (m * 9.80665) / 2.687e20;
    assert!((got - want).abs() < 1e-12 * want, "{got} {want}");
    assert!(column_ozone(&[-1.0], &[0.0]).is_err());
    assert!(column_ozone(&[1.0, 2.0], &[0.0]).is_err());
}

#[test]
fn global_mean_of_constant_is_constant() {
    let g = GridSpec::regular(9, 4, vec![100.0, 1000.0]).unwrap();
    let w = g.area_weights();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    let v = global_mean(&vec![7.5; g.npoints()], &g, &w);
    assert!((v - 7.5).abs() < 1e-13);
}

#[test]
fn percent_bias_masks_and_measures() {
    let g = grid(2, 1, 40);
    let r = Climatology::from_fn(g.clone(), ClimatologyKind::Annual, Variable::Ozone, |_, p| {
        if p % 40 == 0 {
            0.0
        } else {
            1e-6 * (1 + p % 40) as f64
        }
    })
    .unwrap();
    let b0 = percent_bias(&r, &r).unwrap();
    assert!(b0.iter().all(|b| b.is_none_or(|v| v == 0.0)));
    assert_eq!(b0[0], None);
    let t = Climatology::from_fn(g.clone(), ClimatologyKind::Annual, Variable::Ozone, |_, p| {
        1.03 * r.values()[p]
    })
    .unwrap();
    let b = percent_bias(&t, &r).unwrap();
    let strat = STRATOSPHERE.points(&g);
    assert!(!strat.is_empty());
    assert!((max_abs_bias(&b, &strat).unwrap() - 3.0).abs() < 1e-9);
    for p in TROPICAL_LOWER_STRATOSPHERE.points(&g) {
        let z = g.level_height_m()[p % 40];
        assert!((16_000.0..=28_000.0).contains(&z));
    }
}

#[test]
fn plot_data_round_trips_bits() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(3);
    let a: Vec<f64> = (0..50).map(|_| normal(&mut r) * 1e-7).collect();
    let b: Vec<f64> = (0..50).map(|i| i as f64 / 3.0).collect();
    let path = dir.path().join("p.csv");
    export_plot_data(
        &path,
        "test",
        &[("a", &a), ("b", &b)],
        &serde_json::json!({"unit": "vmr"}),
    )
    .unwrap();
    let back = read_plot_data(&path).unwrap();
    assert_eq!(back[0].0, "a");
    assert!(common::bits_equal(&back[0].1, &a));
    assert!(common::bits_equal(&back[1].1, &b));
    assert!(dir.path().join("p.csv.json").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn kde_integrates_to_one(seed in 0u64..10_000, n in 1usize..300, spread in 0.01f64..1.0) {
        let mut r = rng(seed);
        let xs: Vec<f64> = (0..n).map(|_| 4e-6 * (1.0 + spread * normal(&mut r))).collect();
        let pdf = kde_pdf(&xs, 4e-6).unwrap();
        prop_assert_eq!(pdf.bandwidth, 0.02 * 4e-6);
        prop_assert!((pdf.integral() - 1.0).abs() < 1e-3);
        prop_assert!(pdf.density.iter().all(|d| *d >= 0.0));
    }
}
