use serde::{Deserialize, Serialize};

use crate::error::{MlozError, Result};

/// Default lower bound for standard deviations, in native units.
pub const DEFAULT_STD_FLOOR: f64 = 1e-12;

/// Per-location standardization statistics for inputs and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

/// Column-wise mean and population standard deviation (two-pass), with
/// standard deviations floored at `std_floor`.
pub fn feature_moments(x: &[f64], nfeat: usize, std_floor: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / nfeat.max(1);
    let mut mean = vec![0.0; nfeat];
    for row in x.chunks_exact(nfeat) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; nfeat];
    for row in x.chunks_exact(nfeat) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt().max(std_floor)).collect();
    (mean, std)
}

/// Mean and floored population standard deviation of one series.
pub fn target_moments(y: &[f64], std_floor: f64) -> (f64, f64) {
    let (m, s) = feature_moments(y, 1, std_floor);
    (m[0], s[0])
}

/// Standardization statistics for inputs `x[n][nfeat]` and target `y[n]`.
pub fn fit_scaling(x: &[f64], nfeat: usize, y: &[f64], std_floor: f64) -> Result<ScalingParams> {
    let n = y.len();
    if nfeat == 0 || x.len() != n * nfeat {
        return Err(MlozError::Structural(format!(
            "input matrix has {} values, expected {n} x {nfeat}",
            x.len()
        )));
    }
    if n < 2 {
        return Err(MlozError::InsufficientData(format!(
            "scaling needs at least 2 samples, got {n}"
        )));
    }
    if !(std_floor > 0.0) {
        return Err(MlozError::config("std_floor", "must be positive"));
    }
    let (x_mean, x_std) = feature_moments(x, nfeat, std_floor);
    let (y_mean, y_std) = target_moments(y, std_floor);
    Ok(ScalingParams {
        x_mean,
        x_std,
        y_mean,
        y_std,
    })
}

impl ScalingParams {
    pub fn nfeat(&self) -> usize {
        self.x_mean.len()
    }

    /// `(x - mean) / std` for one input row.
    pub fn standardize_row(&self, row: &[f64], out: &mut [f64]) {
        standardize_into(row, &self.x_mean, &self.x_std, out);
    }

    /// Standardizes a whole row-major input matrix.
    pub fn standardize_matrix(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.chunks_exact(self.nfeat()).zip(out.chunks_exact_mut(self.nfeat())) {
            self.standardize_row(src, dst);
        }
        out
    }

    pub fn destandardize_row(&self, z: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(z).zip(&self.x_mean).zip(&self.x_std) {
            *o = v * s + m;
        }
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn destandardize_target(&self, z: f64) -> f64 {
        z * self.y_std + self.y_mean
    }
}

#[inline]
pub(crate) fn standardize_into(row: &[f64], mean: &[f64], std: &[f64], out: &mut [f64]) {
    for (((o, v), m), s) in out.iter_mut().zip(row).zip(mean).zip(std) {
        *o = (v - m) / s;
    }
}
