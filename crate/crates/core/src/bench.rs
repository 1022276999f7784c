//! Inference throughput measurements.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::climatology::{Climatology, ClimatologyKind};
use crate::engine::{predict_field, InferenceContext};
use crate::error::{MlozError, Result};
use crate::field::Variable;
use crate::grid::GridSpec;
use crate::toysim::{run_experiment, OzoneMode, OzoneSource, World, WorldConfig};
use crate::trainer::{train_all, CoefficientParts, CoefficientSet, TrainerConfig, TrainingMeta};

/// Grid of `nlev` levels evenly spaced from 100 m to 64 km.
pub fn bench_grid(nlat: usize, nlon: usize, nlev: usize) -> Result<GridSpec> {
    if nlev < 2 {
        return Err(MlozError::config("grid", "need at least 2 levels"));
    }
    let levels = (0..nlev)
        .map(|k| 100.0 + 63_900.0 * k as f64 / (nlev - 1) as f64)
        .collect();
    GridSpec::regular(nlat, nlon, levels)
}

/// Random but well-formed coefficients for timing purposes.
pub fn synthetic_coefficients(grid: &GridSpec, seed: u64) -> Result<CoefficientSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.cap_level_index();
    let c = grid.ncols();
    let mut draw = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.random_range(lo..hi)).collect() };
    let parts = CoefficientParts {
        coeffs: draw(c * n * n, -0.1, 0.1),
        alpha: vec![1.0; c * n],
        x_mean: draw(c * n, 200.0, 280.0),
        x_std: draw(c * n, 1.0, 5.0),
        y_mean: draw(c * n, 1e-7, 8e-6),
        y_std: draw(c * n, 1e-8, 1e-6),
    };
    let clim = Climatology::from_fn(grid.clone(), ClimatologyKind::Annual, Variable::Ozone, |_, p| {
        1e-6 * (1.0 + 1e-3 * (p % 97) as f64)
    })?;
    CoefficientSet::from_parts(grid.clone(), parts, clim, TrainingMeta::default())
}

#[derive(Debug, Clone, Serialize)]
pub struct ThreadTiming {
    pub threads: usize,
    pub seconds_per_field: f64,
    pub days_per_second: f64,
    pub points_per_second: f64,
    pub multiply_adds_per_second: f64,
    pub speedup: f64,
    pub efficiency: f64,
    /// Output bit-identical to the first thread count.
    pub identical: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridTiming {
    pub nlat: usize,
    pub nlon: usize,
    pub nlev: usize,
    pub seconds_per_field: f64,
    /// Time per grid point relative to the first grid size.
    pub per_point_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub nlat: usize,
    pub nlon: usize,
    pub nlev: usize,
    pub nfeat: usize,
    pub days: usize,
    pub block_size: usize,
    pub threads: Vec<ThreadTiming>,
    pub grid_scaling: Vec<GridTiming>,
    /// Share of coupled-step time spent in ozone prediction in a short
    /// desk-scale coupled run.
    pub coupled_prediction_share: Option<f64>,
}

fn temperature_field(grid: &GridSpec, day: usize) -> Vec<f64> {
    (0..grid.npoints())
        .map(|p| 220.0 + 20.0 * (((p * 31 + day * 17) % 1000) as f64 / 1000.0))
        .collect()
}

/// Mean seconds per predicted field and the last output.
fn time_fields(coeffs: &CoefficientSet, days: usize, block_size: usize) -> Result<(f64, Vec<f64>)> {
    let grid = coeffs.grid();
    let inputs: Vec<Vec<f64>> = (0..days).map(|d| temperature_field(grid, d)).collect();
    let mut last = Vec::new();
    let start = Instant::now();
    for (d, t) in inputs.iter().enumerate() {
        last = predict_field(t, &InferenceContext::new(coeffs, block_size, d % 365)?)?;
    }
    Ok((start.elapsed().as_secs_f64() / days as f64, last))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MlozError::Numeric(format!("cannot build thread pool: {e}")))
}

/// Times `predict_field` for each thread count on `coeffs`.
pub fn bench_threads(
    coeffs: &CoefficientSet,
    days: usize,
    block_size: usize,
    threads: &[usize],
) -> Result<Vec<ThreadTiming>> {
    if days == 0 || threads.is_empty() || threads.contains(&0) {
        return Err(MlozError::config("bench", "days and thread counts must be positive"));
    }
    let grid = coeffs.grid();
    let n = coeffs.nfeat();
    let macs = (grid.ncols() * n * n) as f64;
    let mut out: Vec<ThreadTiming> = Vec::new();
    let mut reference: Option<Vec<f64>> = None;
    let mut base = 0.0;
    for &k in threads {
        let (secs, field) = pool(k)?.install(|| time_fields(coeffs, days, block_size))?;
        let identical = match &reference {
            Some(r) => *r == field,
            None => {
                reference = Some(field);
                base = secs * threads[0] as f64;
                true
            }
        };
        let speedup = base / secs;
        out.push(ThreadTiming {
            threads: k,
            seconds_per_field: secs,
            days_per_second: 1.0 / secs,
            points_per_second: grid.npoints() as f64 / secs,
            multiply_adds_per_second: macs / secs,
            speedup,
            efficiency: speedup / k as f64,
            identical,
        });
    }
    Ok(out)
}

/// Share of coupled-step time spent in ozone prediction for a short
/// desk-scale run with briefly trained coefficients.
pub fn coupled_prediction_share(seed: u64, years: usize) -> Result<f64> {
    let cfg = WorldConfig::desk(seed);
    let truth = run_experiment(&World::new(cfg.clone())?, 2, &OzoneSource::Truth, true)?;
    let t = truth.temperature.as_ref().expect("archived");
    let o = truth.ozone.as_ref().expect("archived");
    let coeffs = train_all(t, o, &TrainerConfig::default())?;
    let world = World::new(cfg.with_mode(OzoneMode::Mloz))?;
    let run = run_experiment(&world, years, &OzoneSource::Mloz(&coeffs), false)?;
    Ok(run.diagnostics.provider_share())
}

pub struct BenchOptions {
    pub nlat: usize,
    pub nlon: usize,
    pub nlev: usize,
    pub days: usize,
    pub block_size: usize,
    pub threads: Vec<usize>,
    pub coupled_years: Option<usize>,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            nlat: 96,
            nlon: 144,
            nlev: 60,
            days: 3,
            block_size: 64,
            threads: vec![1],
            coupled_years: Some(1),
            seed: 1,
        }
    }
}

/// Full benchmark: thread curve on the requested grid (or `coeffs`), a
/// point-count scaling check and the coupled prediction share.
pub fn run_bench(opts: &BenchOptions, coeffs: Option<&CoefficientSet>) -> Result<BenchReport> {
    let owned;
    let coeffs = match coeffs {
        Some(c) => c,
        None => {
            owned = synthetic_coefficients(&bench_grid(opts.nlat, opts.nlon, opts.nlev)?, opts.seed)?;
            &owned
        }
    };
    let grid = coeffs.grid().clone();
    let threads = bench_threads(coeffs, opts.days, opts.block_size, &opts.threads)?;

    let mut grid_scaling = Vec::new();
    let mut first_per_point = 0.0;
    for factor in [1usize, 2] {
        let g = bench_grid(grid.nlat() * factor, grid.nlon(), grid.nlev())?;
        let c = synthetic_coefficients(&g, opts.seed)?;
        let (secs, _) = pool(1)?.install(|| time_fields(&c, opts.days, opts.block_size))?;
        let per_point = secs / g.npoints() as f64;
        if factor == 1 {
            first_per_point = per_point;
        }
        grid_scaling.push(GridTiming {
            nlat: g.nlat(),
            nlon: g.nlon(),
            nlev: g.nlev(),
            seconds_per_field: secs,
            per_point_ratio: per_point / first_per_point,
        });
    }
    let coupled_prediction_share = opts
        .coupled_years
        .map(|y| coupled_prediction_share(opts.seed, y))
        .transpose()?;
    Ok(BenchReport {
        nlat: grid.nlat(),
        nlon: grid.nlon(),
        nlev: grid.nlev(),
        nfeat: coeffs.nfeat(),
        days: opts.days,
        block_size: opts.block_size,
        threads,
        grid_scaling,
        coupled_prediction_share,
    })
}
