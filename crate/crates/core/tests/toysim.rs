mod common;

use std::f64::consts::PI;

use common::bits_equal;
use mloz::climatology::DAYS_PER_YEAR;
use mloz::eval::drift_of_series;
use mloz::grid::GridSpec;
use mloz::toysim::{
    make_world_pair, run_experiment, substream, world_a_levels, world_b_offset, OzoneMode, OzoneSource, Stream, World,
    WorldConfig,
};
use rand::Rng;

fn small_world(nlat: usize, seed: u64, mode: OzoneMode) -> World {
    let g = GridSpec::regular(nlat, 1, world_a_levels()).unwrap();
    World::new(WorldConfig::on_grid(g, seed).with_mode(mode)).unwrap()
}

fn nearest_level(g: &GridSpec, z: f64) -> usize {
    let h = g.level_height_m();
    (0..h.len())
        .min_by(|&a, &b| (h[a] - z).abs().total_cmp(&(h[b] - z).abs()))
        .unwrap()
}

#[test]
fn same_seed_same_run() {
    let w = small_world(2, 9, OzoneMode::Truth);
    let a = run_experiment(&w, 1, &OzoneSource::Truth, true).unwrap();
    let b = run_experiment(&w, 1, &OzoneSource::Truth, true).unwrap();
    assert_eq!(a.ozone.as_ref().unwrap().ntime(), DAYS_PER_YEAR);
    assert!(bits_equal(a.ozone.unwrap().data(), b.ozone.unwrap().data()));
    assert!(bits_equal(a.temperature.unwrap().data(), b.temperature.unwrap().data()));

    let w2 = small_world(2, 10, OzoneMode::Truth);
    let c = run_experiment(&w2, 1, &OzoneSource::Truth, true).unwrap();
    let a = run_experiment(&w, 1, &OzoneSource::Truth, true).unwrap();
    assert!(!bits_equal(
        a.temperature.unwrap().data(),
        c.temperature.unwrap().data()
    ));
}

#[test]
fn substreams_are_keyed_by_all_inputs() {
    let draw = |s, st, d| substream(s, st, d).random::<u64>();
    assert_eq!(draw(1, Stream::Chemistry, 5), draw(1, Stream::Chemistry, 5));
    assert_ne!(draw(1, Stream::Chemistry, 5), draw(1, Stream::Temperature, 5));
    assert_ne!(draw(1, Stream::Chemistry, 5), draw(1, Stream::Chemistry, 6));
    assert_ne!(draw(1, Stream::Chemistry, 5), draw(2, Stream::Chemistry, 5));
}

#[test]
fn fixed_mode_repeats_reference_climatology() {
    let w = small_world(3, 2, OzoneMode::FixedClimatology);
    let run = run_experiment(&w, 2, &OzoneSource::FixedClimatology, true).unwrap();
    let clim = w.reference_climatology().unwrap();
    let ozone = run.ozone.unwrap();
    assert!(bits_equal(ozone.data(), clim.tile(2 * DAYS_PER_YEAR).data()));
}

#[test]
fn mode_mismatch_is_a_config_error() {
    let w = small_world(2, 2, OzoneMode::Truth);
    let e = run_experiment(&w, 1, &OzoneSource::FixedClimatology, false).unwrap_err();
    assert_eq!(e.class(), mloz::ErrorClass::Config);
}

#[test]
fn host_world_is_offset_from_training_world() {
    let base = WorldConfig::desk(4);
    let (a, b) = make_world_pair(&base).unwrap();
    assert_eq!((a.grid.nlev(), b.grid.nlev()), (76, 71));
    assert_eq!(a.grid.lat_deg(), b.grid.lat_deg());
    let mut unshifted = b.clone();
    unshifted.temp_offset_k = vec![0.0; 71];
    let tb = World::new(b.clone()).unwrap().annual_temperature();
    let t0 = World::new(unshifted).unwrap().annual_temperature();
    for (p, (x, y)) in tb.iter().zip(&t0).enumerate() {
        let z = b.grid.level_height_m()[p % 71];
        assert!((x - y - world_b_offset(z)).abs() < 1e-9);
    }
    let ta = World::new(a).unwrap().annual_temperature();
    let tr = World::new(WorldConfig::desk(4)).unwrap().annual_temperature();
    assert!(bits_equal(&ta, &tr));
}

#[test]
fn chemistry_responds_with_height_dependent_sign() {
    let w = small_world(8, 3, OzoneMode::Truth);
    let g = &w.config().grid;
    let nlev = g.nlev();
    let day = 100;
    let phase = w.qbo_phase(day);
    let t0 = w.background_temperature(day, phase);
    let t1: Vec<f64> = t0.iter().map(|t| t + 1.0).collect();
    let o0 = w.truth_ozone(&t0, day, phase);
    let o1 = w.truth_ozone(&t1, day, phase);
    let k40 = nearest_level(g, 40_000.0);
    let k20 = nearest_level(g, 20_000.0);
    for lat in 0..g.nlat() {
        let p = lat * nlev;
        assert!(o1[p + k40] < o0[p + k40], "lat {lat}");
        if g.lat_deg()[lat].abs() <= 30.0 {
            assert!(o1[p + k20] > o0[p + k20], "lat {lat}");
        }
    }
}

#[test]
fn control_run_has_qbo_and_no_drift() {
    let years = 8;
    let w = small_world(8, 20240917, OzoneMode::Truth);
    let run = run_experiment(&w, years, &OzoneSource::Truth, true).unwrap();
    let d = &run.diagnostics;
    assert_eq!(d.negative_ozone_count + d.nonfinite_count, 0);
    let drift = drift_of_series(&d.global_mean_ozone, DAYS_PER_YEAR, 1.0).unwrap();
    assert!(drift.pass, "{}", drift.trend_per_decade_pct);

    // Deseasonalized tropical temperature at 25 km.
    let temp = run.temperature.unwrap();
    let g = temp.grid().clone();
    let k = nearest_level(&g, 25_000.0);
    let lat = g.nlat() / 2;
    let series = temp.time_series(lat, 0, k);
    let n = series.len();
    let mut clim = vec![0.0; DAYS_PER_YEAR];
    for (t, v) in series.iter().enumerate() {
        clim[t % DAYS_PER_YEAR] += v / years as f64;
    }
    let anom: Vec<f64> = series
        .iter()
        .enumerate()
        .map(|(t, v)| v - clim[t % DAYS_PER_YEAR])
        .collect();
    let power = |period: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for (t, a) in anom.iter().enumerate() {
            let ph = 2.0 * PI * t as f64 / period;
            c += a * ph.cos();
            s += a * ph.sin();
        }
        (c * c + s * s) / n as f64
    };
    let periods: Vec<f64> = (40..=200).map(|p| 10.0 * p as f64).collect();
    let peak = periods
        .iter()
        .copied()
        .max_by(|a, b| power(*a).total_cmp(&power(*b)))
        .unwrap();
    assert!((peak - 800.0).abs() <= 120.0, "peak period {peak}");
}
