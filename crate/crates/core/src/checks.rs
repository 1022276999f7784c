//! Property checks behind the acceptance table that do not need coupled
//! runs: solver and cross-validation oracles, clamping and cap, KDE,
//! interpolation exactness, file round-trips, determinism and throughput.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bench::{bench_grid, run_bench, synthetic_coefficients, BenchOptions};
use crate::climatology::ClimatologyKind;
use crate::engine::{predict_field, InferenceContext};
use crate::error::{ErrorClass, MlozError, Result};
use crate::eval::kde_pdf;
use crate::field::{FieldSeries, Variable};
use crate::grid::GridSpec;
use crate::store::{
    coefficient_file_len, field_file_len, read_coefficients, read_fields, write_coefficients, write_fields,
};
use crate::suite::CriterionResult;
use crate::trainer::{cross_validate, default_alpha_grid, ridge_solve, train_all, TrainerConfig, CV_TIE_RTOL};
use crate::transfer::{
    build_vertical_map, interp_ozone_down, interp_temperature_up, transfer_predict, RecalibrationParams,
};

fn result(id: u32, name: &str, pass: bool, detail: String) -> CriterionResult {
    CriterionResult {
        id,
        name: name.into(),
        pass,
        detail,
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gaussian elimination with partial pivoting on a dense square system.
fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))
            .unwrap_or(k);
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    x
}

fn ridge_oracle(xs: &[f64], ys: &[f64], nfeat: usize, alpha: f64) -> Vec<f64> {
    let n = ys.len();
    let mut a = vec![0.0; nfeat * nfeat];
    let mut b = vec![0.0; nfeat];
    for i in 0..n {
        for j in 0..nfeat {
            b[j] += xs[i * nfeat + j] * ys[i];
            for k in 0..nfeat {
                a[j * nfeat + k] += xs[i * nfeat + j] * xs[i * nfeat + k];
            }
        }
    }
    for j in 0..nfeat {
        a[j * nfeat + j] += alpha;
    }
    gauss_solve(a, b, nfeat)
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

fn random_system(rng: &mut ChaCha8Rng, n: usize, nfeat: usize, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..n * nfeat).map(|_| normal(rng)).collect();
    let beta: Vec<f64> = (0..nfeat).map(|_| normal(rng)).collect();
    let ys = xs
        .chunks_exact(nfeat)
        .map(|r| r.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() + noise * normal(rng))
        .collect();
    (xs, ys)
}

pub fn check_ridge_oracle(seed: u64) -> Result<CriterionResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = default_alpha_grid();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let nfeat = rng.random_range(1..=76);
        let n = rng.random_range(nfeat + 10..=200);
        let alpha = grid[rng.random_range(0..grid.len())];
        let (xs, ys) = random_system(&mut rng, n, nfeat, 0.5);
        let got = ridge_solve(&xs, nfeat, &ys, alpha)?;
        worst = worst.max(rel_diff(&got.coeffs, &ridge_oracle(&xs, &ys, nfeat, alpha)));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(result(
        1,
        "ridge solver oracle",
        worst <= 1e-10 && secs < 10.0,
        format!("100 systems, worst relative difference {worst:.3e} (limit 1e-10), {secs:.2} s"),
    ))
}

/// Best alpha from a direct loop over folds and alphas.
fn cv_oracle(xs: &[f64], ys: &[f64], nfeat: usize, grid: &[f64], k: usize) -> f64 {
    let n = ys.len();
    let mut bounds = vec![0usize];
    for f in 0..k {
        bounds.push(bounds[f] + n / k + usize::from(f < n % k));
    }
    let scores: Vec<f64> = grid
        .iter()
        .map(|&alpha| {
            let mut total = 0.0;
            for f in 0..k {
                let (lo, hi) = (bounds[f], bounds[f + 1]);
                let train: Vec<usize> = (0..n).filter(|i| *i < lo || *i >= hi).collect();
                let tx: Vec<f64> = train
                    .iter()
                    .flat_map(|&i| xs[i * nfeat..(i + 1) * nfeat].to_vec())
                    .collect();
                let ty: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
                let c = ridge_oracle(&tx, &ty, nfeat, alpha);
                let sse: f64 = (lo..hi)
                    .map(|i| {
                        let p: f64 = (0..nfeat).map(|j| xs[i * nfeat + j] * c[j]).sum();
                        (ys[i] - p) * (ys[i] - p)
                    })
                    .sum();
                total += sse / (hi - lo) as f64;
            }
            total / k as f64
        })
        .collect();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best = grid[0];
    for (a, s) in grid.iter().zip(&scores) {
        if *s <= min + CV_TIE_RTOL * min.abs() {
            best = *a;
        }
    }
    best
}

pub fn check_cv_oracle(seed: u64) -> Result<CriterionResult> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = default_alpha_grid();
    let mut agree = 0;
    let mut chosen = Vec::new();
    for _ in 0..20 {
        let nfeat = rng.random_range(3..=20);
        let n = rng.random_range(3 * nfeat..=150);
        let noise = 10f64.powf(rng.random_range(-1.0..1.5));
        let (xs, ys) = random_system(&mut rng, n, nfeat, noise);
        let got = cross_validate(&xs, nfeat, &ys, &grid, 3)?;
        let want = cv_oracle(&xs, &ys, nfeat, &grid, 3);
        agree += usize::from(got.best_alpha == want);
        chosen.push(got.best_alpha);
    }
    let secs = start.elapsed().as_secs_f64();
    let distinct = {
        let mut c = chosen.clone();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c.len()
    };
    Ok(result(
        2,
        "cross-validation oracle",
        agree == 20 && secs < 30.0,
        format!("{agree}/20 agree ({distinct} distinct alphas selected), {secs:.2} s"),
    ))
}

fn temperature_day(rng: &mut ChaCha8Rng, grid: &GridSpec, spread: f64) -> Vec<f64> {
    (0..grid.npoints()).map(|_| 240.0 + spread * normal(rng)).collect()
}

pub fn check_self_transfer(seed: u64) -> Result<CriterionResult> {
    let grid = bench_grid(6, 4, 40)?;
    let coeffs = synthetic_coefficients(&grid, seed)?;
    let map = build_vertical_map(&grid, &grid, 0.0)?;
    let recal = RecalibrationParams::from_coefficients(&coeffs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for day in 0..20 {
        let t = temperature_day(&mut rng, &grid, 10.0);
        let ctx = InferenceContext::new(&coeffs, 5, day * 17 % 365)?;
        let direct = predict_field(&t, &ctx)?;
        let via = transfer_predict(&t, &map, &recal, &ctx, coeffs.cap_climatology())?;
        mismatches += direct
            .iter()
            .zip(&via)
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count();
    }
    Ok(result(
        8,
        "self-transfer identity",
        mismatches == 0,
        format!("20 fields, {mismatches} values differ bitwise"),
    ))
}

pub fn check_clamp_and_cap(seed: u64) -> Result<CriterionResult> {
    let grid = bench_grid(10, 10, 30)?;
    let coeffs = synthetic_coefficients(&grid, seed)?;
    let cap = grid.cap_level_index();
    let nlev = grid.nlev();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9);
    let (mut negative, mut cap_mismatch, mut clamped, mut columns) = (0usize, 0usize, 0usize, 0usize);
    for field in 0..1000 {
        let t = temperature_day(&mut rng, &grid, 60.0);
        let doy = field % 365;
        let out = predict_field(&t, &InferenceContext::new(&coeffs, 7, doy)?)?;
        let clim = coeffs.cap_climatology().field(doy);
        for (p, v) in out.iter().enumerate() {
            negative += usize::from(!(*v >= 0.0));
            clamped += usize::from(*v == 0.0 && p % nlev < cap);
            if p % nlev >= cap && v.to_bits() != clim[p].to_bits() {
                cap_mismatch += 1;
            }
        }
        columns += grid.ncols();
    }
    Ok(result(
        9,
        "clamping and cap",
        negative == 0 && cap_mismatch == 0 && columns >= 100_000,
        format!(
            "{columns} random columns, {clamped} clamped values, {negative} negative, {cap_mismatch} cap mismatches"
        ),
    ))
}

pub fn check_kde(seed: u64) -> Result<CriterionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut bandwidth_ok) = (0f64, true);
    for _ in 0..50 {
        let n = rng.random_range(1..=500);
        let centre = 10f64.powf(rng.random_range(-7.0..2.0));
        let samples: Vec<f64> = (0..n).map(|_| centre * (1.0 + 0.2 * normal(&mut rng))).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let reference = if mean > 0.0 { mean } else { centre };
        let pdf = kde_pdf(&samples, reference)?;
        bandwidth_ok &= pdf.bandwidth == 0.02 * reference;
        worst = worst.max((pdf.integral() - 1.0).abs());
    }
    Ok(result(
        10,
        "kde contract",
        bandwidth_ok && worst <= 1e-3,
        format!("50 sample sets, bandwidth rule exact: {bandwidth_ok}, worst |integral - 1| {worst:.2e}"),
    ))
}

pub fn check_interpolation(seed: u64) -> Result<CriterionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lin, mut cub, mut wsum) = (0f64, 0f64, 0f64);
    for _ in 0..20 {
        let mut levels = |n: usize, lo: f64, hi: f64| -> Result<GridSpec> {
            let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
            z.sort_by(f64::total_cmp);
            z.dedup_by(|a, b| (*a - *b).abs() < 1.0);
            GridSpec::regular(1, 1, z)
        };
        let src = levels(40, 100.0, 60_000.0)?;
        let dst = levels(35, 50.0, 62_000.0)?;
        let map = build_vertical_map(&src, &dst, 0.0)?;
        let zd = dst.level_height_m();
        let zs = src.level_height_m();
        let inside = |z: f64| z >= zd[0] && z <= zd[zd.len() - 1];
        let s = 1e-4;
        let linear = |z: f64| 250.0 - 6.5e-3 * z;
        let cubic = |z: f64| 200.0 + 3.0 * (z * s) - 0.2 * (z * s).powi(2) + 0.01 * (z * s).powi(3);
        for (f, err) in [(&linear as &dyn Fn(f64) -> f64, &mut lin), (&cubic, &mut cub)] {
            let col: Vec<f64> = zd.iter().map(|&z| f(z)).collect();
            let up = interp_temperature_up(&col, &map)?;
            for (z, v) in zs.iter().zip(&up) {
                if inside(*z) {
                    *err = err.max((v - f(*z)).abs() / f(*z).abs());
                }
            }
        }
        for w in map.linear_weights() {
            wsum = wsum.max((w.w_lo + w.w_hi - 1.0).abs());
        }
        let ones = vec![1.0; zs.len()];
        let down = interp_ozone_down(&ones, &map, &vec![0.0; zd.len()])?;
        for (i, v) in down.iter().enumerate() {
            if map.fill_levels().contains(&i) {
                continue;
            }
            wsum = wsum.max((v - 1.0).abs());
        }
    }
    Ok(result(
        11,
        "spline exactness",
        lin <= 1e-10 && cub <= 1e-8 && wsum <= 1e-14,
        format!("linear {lin:.2e} (limit 1e-10), cubic {cub:.2e} (limit 1e-8), weight-sum error {wsum:.1e}"),
    ))
}

struct ScratchDir(PathBuf);

impl ScratchDir {
    fn new() -> Result<Self> {
        let p = std::env::temp_dir().join(format!("mloz-check-{}", std::process::id()));
        std::fs::create_dir_all(&p).map_err(|e| MlozError::io(&p, e))?;
        Ok(ScratchDir(p))
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn flip_byte(path: &std::path::Path, offset_from_end: usize) -> Result<()> {
    let mut bytes = std::fs::read(path).map_err(|e| MlozError::io(path, e))?;
    let i = bytes.len() - offset_from_end;
    bytes[i] ^= 0x40;
    std::fs::write(path, bytes).map_err(|e| MlozError::io(path, e))
}

pub fn check_containers(seed: u64) -> Result<CriterionResult> {
    let dir = ScratchDir::new()?;
    let grid = bench_grid(4, 3, 20)?;
    let coeffs = synthetic_coefficients(&grid, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..grid.npoints() * 7)
        .map(|_| 250.0 + 20.0 * normal(&mut rng))
        .collect();
    let series = FieldSeries::new(grid.clone(), Variable::Temperature, data)?.with_spinup_days(2);

    let cpath = dir.0.join("c.mlozc");
    let fpath = dir.0.join("f.mlozf");
    write_coefficients(&coeffs, &cpath)?;
    write_fields(&series, &fpath)?;
    let len = |p: &std::path::Path| {
        std::fs::metadata(p)
            .map(|m| m.len() as usize)
            .map_err(|e| MlozError::io(p, e))
    };
    let sizes_ok = len(&cpath)? == coefficient_file_len(&grid, coeffs.cap_climatology().kind())
        && len(&fpath)? == field_file_len(&grid, 7);
    let back_c = read_coefficients(&cpath)?;
    let back_f = read_fields(&fpath)?;
    let bits = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    let round_trip = bits(back_c.coeffs(), coeffs.coeffs())
        && bits(back_c.x_std(), coeffs.x_std())
        && bits(back_c.y_mean(), coeffs.y_mean())
        && bits(back_c.cap_climatology().values(), coeffs.cap_climatology().values())
        && bits(back_f.data(), series.data())
        && back_f.spinup_days() == 2
        && back_c.meta() == coeffs.meta();

    let mut rejected = 0;
    for path in [&cpath, &fpath] {
        flip_byte(path, 40)?;
        let err = if path == &cpath {
            read_coefficients(path).err()
        } else {
            read_fields(path).err()
        };
        rejected += usize::from(matches!(err, Some(MlozError::Checksum { .. })));
    }
    let trunc = dir.0.join("t.mlozf");
    let bytes = std::fs::read(&fpath).map_err(|e| MlozError::io(&fpath, e))?;
    std::fs::write(&trunc, &bytes[..bytes.len() - 9]).map_err(|e| MlozError::io(&trunc, e))?;
    let truncated = read_fields(&trunc).err().map(|e| e.class()) == Some(ErrorClass::Data);
    let pass = sizes_ok && round_trip && rejected == 2 && truncated;
    Ok(result(
        12,
        "container round-trips",
        pass,
        format!("sizes match: {sizes_ok}, bit-identical: {round_trip}, corrupted rejected: {rejected}/2, truncated rejected: {truncated}"),
    ))
}

pub fn thread_counts() -> Vec<usize> {
    let max = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut t = vec![1, 4, max];
    t.sort_unstable();
    t.dedup();
    t
}

pub fn check_determinism(seed: u64) -> Result<CriterionResult> {
    let grid = bench_grid(6, 5, 24)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ntime = 120;
    let temp: Vec<f64> = (0..grid.npoints() * ntime)
        .map(|_| 240.0 + 5.0 * normal(&mut rng))
        .collect();
    let ozone: Vec<f64> = temp
        .iter()
        .map(|t| 1e-6 * (1.0 + 0.01 * (t - 240.0)) + 1e-8 * normal(&mut rng))
        .collect();
    let temp = FieldSeries::new(grid.clone(), Variable::Temperature, temp)?;
    let ozone = FieldSeries::new(grid.clone(), Variable::Ozone, ozone)?;
    let config = TrainerConfig {
        cap_clim_kind: ClimatologyKind::Annual,
        ..TrainerConfig::default()
    };
    let counts = thread_counts();
    let mut outputs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for &k in &counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| MlozError::Numeric(format!("cannot build thread pool: {e}")))?;
        let out = pool.install(|| -> Result<_> {
            let c = train_all(&temp, &ozone, &config)?;
            let p = predict_field(temp.day(5), &InferenceContext::new(&c, 4, 5)?)?;
            Ok((c.coeffs().to_vec(), p))
        })?;
        outputs.push(out);
    }
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    let pass = outputs
        .windows(2)
        .all(|w| same(&w[0].0, &w[1].0) && same(&w[0].1, &w[1].1));
    Ok(result(
        13,
        "determinism across thread counts",
        pass,
        format!("thread counts {counts:?}, train_all and predict_field bit-identical: {pass}"),
    ))
}

pub fn check_throughput(seed: u64) -> Result<CriterionResult> {
    let opts = BenchOptions {
        threads: thread_counts(),
        seed,
        ..BenchOptions::default()
    };
    let r = run_bench(&opts, None)?;
    let single = r.threads[0].seconds_per_field;
    let eff = r
        .threads
        .iter()
        .map(|t| format!("{}:{:.2}", t.threads, t.efficiency))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(result(
        14,
        "throughput report",
        single < 1.0,
        format!(
            "{}x{}x{} field {:.3} s single-threaded (limit 1 s), efficiency {eff}, prediction share {:.3}",
            r.nlat,
            r.nlon,
            r.nlev,
            single,
            r.coupled_prediction_share.unwrap_or(f64::NAN)
        ),
    ))
}

/// Runs every property check, in criterion order.
pub fn run_property_checks(seed: u64) -> Result<Vec<CriterionResult>> {
    Ok(vec![
        check_ridge_oracle(seed)?,
        check_cv_oracle(seed)?,
        check_self_transfer(seed)?,
        check_clamp_and_cap(seed)?,
        check_kde(seed)?,
        check_interpolation(seed)?,
        check_containers(seed)?,
        check_determinism(seed)?,
        check_throughput(seed)?,
    ])
}
