//! Online inference: yesterday's daily-mean temperature field to today's
//! ozone field.

use rayon::prelude::*;

use crate::error::{MlozError, Result};
use crate::linalg::dot;
use crate::trainer::{CoefficientSet, RidgeModel};

/// Everything needed to predict one model day.
#[derive(Debug, Clone, Copy)]
pub struct InferenceContext<'a> {
    pub coeffs: &'a CoefficientSet,
    /// Grid columns per parallel work unit.
    pub block_size: usize,
    /// 0-based day of year used for the climatological cap.
    pub day_of_year: usize,
}

impl<'a> InferenceContext<'a> {
    pub fn new(coeffs: &'a CoefficientSet, block_size: usize, day_of_year: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(MlozError::config("block_size", "must be at least 1"));
        }
        Ok(InferenceContext {
            coeffs,
            block_size,
            day_of_year,
        })
    }
}

/// Predicts one output point: standardize, dot with the coefficients,
/// descale and clamp at zero.
pub fn predict_point(temp_column: &[f64], model: &RidgeModel) -> Result<f64> {
    let n = model.coeffs.len();
    if temp_column.len() != n || model.scaling.x_mean.len() != n || model.scaling.x_std.len() != n {
        return Err(MlozError::Structural(format!(
            "temperature column has {} values, model expects {n}",
            temp_column.len()
        )));
    }
    if let Some(v) = temp_column.iter().find(|v| !v.is_finite()) {
        return Err(MlozError::Input(format!("non-finite temperature {v}")));
    }
    let mut z = vec![0.0; n];
    model.scaling.standardize_row(temp_column, &mut z);
    Ok(descale_clamp(
        dot(&model.coeffs, &z),
        model.scaling.y_std,
        model.scaling.y_mean,
    ))
}

#[inline]
fn descale_clamp(ystar: f64, y_std: f64, y_mean: f64) -> f64 {
    (ystar * y_std + y_mean).max(0.0)
}

/// Predicts the `N` lowest levels of column `col` from its first `N`
/// temperatures, standardized with the given input statistics.
///
/// `z` is scratch space of length `N`.
#[inline]
pub(crate) fn predict_column_into(
    coeffs: &CoefficientSet,
    col: usize,
    temp: &[f64],
    x_mean: &[f64],
    x_std: &[f64],
    z: &mut [f64],
    out: &mut [f64],
) {
    let n = coeffs.nfeat();
    crate::trainer::standardize_into(&temp[..n], x_mean, x_std, z);
    let c = coeffs.column_coeffs(col);
    let p0 = col * n;
    let y_mean = &coeffs.y_mean()[p0..p0 + n];
    let y_std = &coeffs.y_std()[p0..p0 + n];
    for (lev, o) in out[..n].iter_mut().enumerate() {
        *o = descale_clamp(dot(&c[lev * n..(lev + 1) * n], z), y_std[lev], y_mean[lev]);
    }
}

pub(crate) fn check_finite_day(field: &[f64], nlev: usize, nlon: usize) -> Result<()> {
    if let Some(i) = field.iter().position(|v| !v.is_finite()) {
        let col = i / nlev;
        return Err(MlozError::Input(format!(
            "non-finite temperature {} at lat {}, lon {}, level {}",
            field[i],
            col / nlon,
            col % nlon,
            i % nlev
        )));
    }
    Ok(())
}

/// Predicts a full ozone field on the coefficient grid.
///
/// Levels below the cap come from the ridge models; levels at and above it
/// are copied from the cap climatology at `ctx.day_of_year`. The output is
/// bit-identical for any block size or thread count.
pub fn predict_field(temp_prev_day: &[f64], ctx: &InferenceContext<'_>) -> Result<Vec<f64>> {
    let grid = ctx.coeffs.grid();
    if temp_prev_day.len() != grid.npoints() {
        return Err(MlozError::Structural(format!(
            "temperature field has {} values, coefficient grid has {}",
            temp_prev_day.len(),
            grid.npoints()
        )));
    }
    if ctx.block_size == 0 {
        return Err(MlozError::config("block_size", "must be at least 1"));
    }
    check_finite_day(temp_prev_day, grid.nlev(), grid.nlon())?;
    let mut out = vec![0.0; grid.npoints()];
    predict_field_into(temp_prev_day, ctx, &mut out);
    Ok(out)
}

fn predict_field_into(temp: &[f64], ctx: &InferenceContext<'_>, out: &mut [f64]) {
    let coeffs = ctx.coeffs;
    let grid = coeffs.grid();
    let nlev = grid.nlev();
    let n = coeffs.nfeat();
    let cap = coeffs.cap_climatology().field(ctx.day_of_year);
    let chunk = ctx.block_size * nlev;
    out.par_chunks_mut(chunk)
        .zip(temp.par_chunks(chunk))
        .enumerate()
        .for_each(|(b, (out_block, temp_block))| {
            let mut z = vec![0.0; n];
            for (i, (o, t)) in out_block
                .chunks_exact_mut(nlev)
                .zip(temp_block.chunks_exact(nlev))
                .enumerate()
            {
                let col = b * ctx.block_size + i;
                let xm = &coeffs.x_mean()[col * n..(col + 1) * n];
                let xs = &coeffs.x_std()[col * n..(col + 1) * n];
                predict_column_into(coeffs, col, t, xm, xs, &mut z, o);
                o[n..].copy_from_slice(&cap[col * nlev + n..(col + 1) * nlev]);
            }
        });
}

/// Running arithmetic mean of instantaneous fields within one day.
#[derive(Debug, Clone)]
pub struct DailyMeanAccumulator {
    sum: Vec<f64>,
    count: usize,
}

impl DailyMeanAccumulator {
    pub fn new(npoints: usize) -> Self {
        DailyMeanAccumulator {
            sum: vec![0.0; npoints],
            count: 0,
        }
    }

    pub fn add(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.sum.len() {
            return Err(MlozError::Structural(format!(
                "sample has {} values, expected {}",
                sample.len(),
                self.sum.len()
            )));
        }
        self.sum.iter_mut().zip(sample).for_each(|(s, v)| *s += v);
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Returns the mean and resets the accumulator.
    pub fn finish(&mut self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(MlozError::InsufficientData("no samples in day".into()));
        }
        let n = self.count as f64;
        let mean = self.sum.iter().map(|s| s / n).collect();
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.count = 0;
        Ok(mean)
    }
}

/// Mean of the instantaneous samples of one day.
pub fn daily_mean_accumulate(samples: &[&[f64]]) -> Result<Vec<f64>> {
    let first = samples
        .first()
        .ok_or_else(|| MlozError::InsufficientData("no samples in day".into()))?;
    let mut acc = DailyMeanAccumulator::new(first.len());
    for s in samples {
        acc.add(s)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::climatology::{Climatology, ClimatologyKind};
    use crate::field::Variable;
    use crate::grid::GridSpec;
    use crate::trainer::{CoefficientParts, ScalingParams, TrainingMeta};

    fn model(c: Vec<f64>, y_mean: f64, y_std: f64) -> RidgeModel {
        let n = c.len();
        RidgeModel {
            coeffs: c,
            alpha: 1.0,
            scaling: ScalingParams {
                x_mean: (0..n).map(|j| 200.0 + j as f64).collect(),
                x_std: vec![2.0; n],
                y_mean,
                y_std,
            },
        }
    }

    #[test]
    fn mean_column_returns_y_mean() {
        let m = model(vec![0.3, -0.7], 4e-6, 1e-6);
        assert_eq!(predict_point(&m.scaling.x_mean.clone(), &m).unwrap(), 4e-6);
    }

    #[test]
    fn zero_coefficients_ignore_temperature() {
        let m = model(vec![0.0; 3], 2e-6, 1e-6);
        assert_eq!(predict_point(&[150.0, 300.0, 250.0], &m).unwrap(), 2e-6);
    }

    #[test]
    fn negative_prediction_is_clamped() {
        // z = [1, 0], c0 = 1: ŷ* = 1 → 1·1e-7 − 2e-7 = −1e-7
        let m = model(vec![1.0, 0.0], -2e-7, 1e-7);
        assert_eq!(predict_point(&[202.0, 201.0], &m).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let m = model(vec![1.0, 0.0], 1e-6, 1e-7);
        assert!(matches!(predict_point(&[f64::NAN, 1.0], &m), Err(MlozError::Input(_))));
    }

    fn small_set() -> CoefficientSet {
        let grid = GridSpec::regular(2, 3, vec![0.0, 10_000.0, 30_000.0, 55_000.0, 60_000.0]).unwrap();
        let n = grid.cap_level_index();
        let ncols = grid.ncols();
        let g = |i: usize| ((i * 7919) % 101) as f64 / 101.0 - 0.5;
        let parts = CoefficientParts {
            coeffs: (0..ncols * n * n).map(g).collect(),
            alpha: vec![1.0; ncols * n],
            x_mean: (0..ncols * n).map(|i| 220.0 + g(i + 5)).collect(),
            x_std: (0..ncols * n).map(|i| 3.0 + g(i + 9)).collect(),
            y_mean: (0..ncols * n).map(|i| 1e-6 * (2.0 + g(i))).collect(),
            y_std: vec![5e-7; ncols * n],
        };
        let clim = Climatology::from_fn(grid.clone(), ClimatologyKind::DayOfYear, Variable::Ozone, |d, p| {
            1e-6 + 1e-9 * (d * 31 + p) as f64
        })
        .unwrap();
        CoefficientSet::from_parts(grid, parts, clim, TrainingMeta::default()).unwrap()
    }

    #[test]
    fn field_matches_points_and_cap() {
        let set = small_set();
        let grid = set.grid().clone();
        let temp: Vec<f64> = (0..grid.npoints()).map(|i| 215.0 + (i % 13) as f64).collect();
        let ctx = InferenceContext::new(&set, 2, 40).unwrap();
        let out = predict_field(&temp, &ctx).unwrap();
        let n = set.nfeat();
        for lat in 0..grid.nlat() {
            for lon in 0..grid.nlon() {
                let col = grid.flat_index(lat, lon, 0);
                for lev in 0..grid.nlev() {
                    let got = out[col + lev];
                    if lev < n {
                        let want = predict_point(&temp[col..col + n], &set.model(lat, lon, lev)).unwrap();
                        assert_eq!(got, want);
                    } else {
                        assert_eq!(got, set.cap_climatology().value(40, lat, lon, lev));
                    }
                }
            }
        }
    }

    #[test]
    fn block_size_does_not_change_output() {
        let set = small_set();
        let temp: Vec<f64> = (0..set.grid().npoints())
            .map(|i| 230.0 + ((i * 3) % 11) as f64)
            .collect();
        let a = predict_field(&temp, &InferenceContext::new(&set, 1, 3).unwrap()).unwrap();
        let b = predict_field(&temp, &InferenceContext::new(&set, 6, 3).unwrap()).unwrap();
        let c = predict_field(&temp, &InferenceContext::new(&set, 4, 3).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn field_errors() {
        let set = small_set();
        let ctx = InferenceContext::new(&set, 1, 0).unwrap();
        assert!(matches!(
            predict_field(&[250.0; 3], &ctx),
            Err(MlozError::Structural(_))
        ));
        let mut temp = vec![250.0; set.grid().npoints()];
        temp[7] = f64::INFINITY;
        assert!(matches!(predict_field(&temp, &ctx), Err(MlozError::Input(_))));
        assert!(InferenceContext::new(&set, 0, 0).is_err());
    }

    #[test]
    fn daily_means() {
        assert_eq!(
            daily_mean_accumulate(&[&[240.0][..], &[260.0][..]]).unwrap(),
            vec![250.0]
        );
        assert_eq!(daily_mean_accumulate(&[&[1.5, 2.5][..]]).unwrap(), vec![1.5, 2.5]);
        assert!(daily_mean_accumulate(&[]).is_err());
        let mut acc = DailyMeanAccumulator::new(1);
        assert!(acc.finish().is_err());
    }

    #[test]
    fn hourly_sinusoid_mean() {
        let samples: Vec<Vec<f64>> = (0..24)
            .map(|h| vec![250.0 + 5.0 * (2.0 * std::f64::consts::PI * (h as f64 + 0.3) / 24.0).sin()])
            .collect();
        let refs: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
        let mean = daily_mean_accumulate(&refs).unwrap()[0];
        let mut reference = 0.0;
        for s in samples.iter().rev() {
            reference += s[0];
        }
        reference /= 24.0;
        assert!((mean - reference).abs() <= 1e-12 * reference);
        assert!((mean - 250.0).abs() < 1e-10);
    }
}
