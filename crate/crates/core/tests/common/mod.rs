#![allow(dead_code)]

use mloz::field::{FieldSeries, Variable};
use mloz::grid::GridSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `nlev` levels from 100 m to 64 km, evenly spaced.
pub fn grid(nlat: usize, nlon: usize, nlev: usize) -> GridSpec {
    mloz::bench::bench_grid(nlat, nlon, nlev).unwrap()
}

/// Temperature series with per-point red noise and an ozone series that
/// depends linearly on the previous day's temperature column.
pub fn linear_pair(grid: &GridSpec, ntime: usize, seed: u64) -> (FieldSeries, FieldSeries) {
    let mut r = rng(seed);
    let np = grid.npoints();
    let nlev = grid.nlev();
    let mut temp = Vec::with_capacity(ntime * np);
    let mut state = vec![0.0; np];
    for _ in 0..ntime {
        for (p, s) in state.iter_mut().enumerate() {
            *s = 0.7 * *s + 3.0 * normal(&mut r);
            temp.push(230.0 + 20.0 * (p % nlev) as f64 / nlev as f64 + *s);
        }
    }
    let mut ozone = vec![1e-6; ntime * np];
    for t in 1..ntime {
        for col in 0..grid.ncols() {
            let prev = &temp[(t - 1) * np + col * nlev..(t - 1) * np + (col + 1) * nlev];
            for k in 0..nlev {
                let j = (k + 1) % nlev;
                let v = 4e-6 - 2e-8 * (prev[k] - 240.0) + 5e-9 * (prev[j] - 240.0) + 1e-9 * normal(&mut r);
                ozone[t * np + col * nlev + k] = v.max(0.0);
            }
        }
    }
    (
        FieldSeries::new(grid.clone(), Variable::Temperature, temp).unwrap(),
        FieldSeries::new(grid.clone(), Variable::Ozone, ozone).unwrap(),
    )
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[p * n + k].abs() {
                p = i;
            }
        }
        for j in 0..n {
            a.swap(k * n + j, p * n + j);
        }
        b.swap(k, p);
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
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * x[j];
        }
        x[i] = s / a[i * n + i];
    }
    x
}

/// Ridge solution from explicitly formed normal equations.
pub fn ridge_by_elimination(xs: &[f64], ys: &[f64], nfeat: usize, alpha: f64) -> Vec<f64> {
    let mut a = vec![0.0; nfeat * nfeat];
    let mut b = vec![0.0; nfeat];
    for (row, y) in xs.chunks_exact(nfeat).zip(ys) {
        for j in 0..nfeat {
            b[j] += row[j] * y;
            for k in 0..nfeat {
                a[j * nfeat + k] += row[j] * row[k];
            }
        }
    }
    for j in 0..nfeat {
        a[j * nfeat + j] += alpha;
    }
    gauss_solve(a, b, nfeat)
}

pub fn random_system(r: &mut ChaCha8Rng, n: usize, nfeat: usize, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (0..n * nfeat).map(|_| normal(r)).collect();
    let beta: Vec<f64> = (0..nfeat).map(|_| normal(r)).collect();
    let ys = xs
        .chunks_exact(nfeat)
        .map(|row| row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() + noise * normal(r))
        .collect();
    (xs, ys)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Contiguous folds; the first `n % k` folds hold one extra sample.
pub fn fold_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(k);
    let mut lo = 0;
    for f in 0..k {
        let hi = lo + n / k + usize::from(f < n % k);
        out.push((lo, hi));
        lo = hi;
    }
    out
}

/// Mean held-out MSE per alpha from an explicit loop over folds.
pub fn fold_loop_scores(xs: &[f64], ys: &[f64], nfeat: usize, grid: &[f64], k: usize) -> Vec<f64> {
    let n = ys.len();
    let folds = fold_bounds(n, k);
    grid.iter()
        .map(|&a| {
            folds
                .iter()
                .map(|&(lo, hi)| {
                    let train: Vec<usize> = (0..n).filter(|i| *i < lo || *i >= hi).collect();
                    let tx: Vec<f64> = train
                        .iter()
                        .flat_map(|&i| xs[i * nfeat..(i + 1) * nfeat].to_vec())
                        .collect();
                    let ty: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
                    let c = ridge_by_elimination(&tx, &ty, nfeat, a);
                    (lo..hi)
                        .map(|i| {
                            let p: f64 = (0..nfeat).map(|j| xs[i * nfeat + j] * c[j]).sum();
                            (ys[i] - p).powi(2)
                        })
                        .sum::<f64>()
                        / (hi - lo) as f64
                })
                .sum::<f64>()
                / k as f64
        })
        .collect()
}

/// Largest alpha whose score is within a relative 1e-12 of the minimum.
pub fn fold_loop_best(xs: &[f64], ys: &[f64], nfeat: usize, grid: &[f64], k: usize) -> f64 {
    let scores = fold_loop_scores(xs, ys, nfeat, grid, k);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best = grid[0];
    for (a, s) in grid.iter().zip(&scores) {
        if *s <= min + 1e-12 * min.abs() {
            best = *a;
        }
    }
    best
}
