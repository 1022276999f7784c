//! Running coefficients trained on one model grid inside another model.
//!
//! "Source" is the grid the coefficients were trained on, "destination" the
//! host model's grid. Temperature is regridded up to the source levels with a
//! cubic spline, inputs are re-standardized with destination statistics,
//! and the predicted ozone is interpolated linearly back down. Destination
//! levels near the surface are filled from a climatology.

mod spline;

use rayon::prelude::*;

pub use spline::not_a_knot_weights;

use crate::climatology::{Climatology, DAYS_PER_YEAR};
use crate::engine::{check_finite_day, predict_column_into, InferenceContext};
use crate::error::{MlozError, Result};
use crate::field::{FieldSeries, Variable};
use crate::grid::GridSpec;
use crate::trainer::{feature_moments, CoefficientSet};

/// Height below which destination levels are filled from climatology by
/// default.
pub const DEFAULT_FILL_THRESHOLD_M: f64 = 270.0;

/// Linear interpolation stencil for one destination level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearWeight {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Precomputed vertical interpolation between two level sets.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalMap {
    src_levels: Vec<f64>,
    dst_levels: Vec<f64>,
    /// `[src][dst]` spline weights for temperature.
    spline_weights: Vec<f64>,
    /// One stencil per destination level for ozone.
    linear_weights: Vec<LinearWeight>,
    fill_levels: Vec<usize>,
}

/// Builds the temperature and ozone interpolation operators from `dst` to
/// `src` and back.
///
/// Destination levels below `fill_threshold_m`, and any below the lowest
/// source level, are marked for climatology fill.
pub fn build_vertical_map(src: &GridSpec, dst: &GridSpec, fill_threshold_m: f64) -> Result<VerticalMap> {
    let zs = src.level_height_m();
    let zd = dst.level_height_m();
    if zs.len() < 4 {
        return Err(MlozError::SplineInfeasible(zs.len()));
    }
    if !fill_threshold_m.is_finite() {
        return Err(MlozError::config("fill_threshold_m", "must be finite"));
    }
    let spline_weights = not_a_knot_weights(zd, zs)?;
    let linear_weights = zd.iter().map(|&z| linear_weight(zs, z)).collect();
    let fill_levels = zd
        .iter()
        .enumerate()
        .filter(|(_, &z)| z < fill_threshold_m || z < zs[0])
        .map(|(i, _)| i)
        .collect();
    Ok(VerticalMap {
        src_levels: zs.to_vec(),
        dst_levels: zd.to_vec(),
        spline_weights,
        linear_weights,
        fill_levels,
    })
}

fn linear_weight(knots: &[f64], z: f64) -> LinearWeight {
    let n = knots.len();
    let at = |k: usize| LinearWeight {
        lo: k,
        hi: k,
        w_lo: 1.0,
        w_hi: 0.0,
    };
    if z <= knots[0] {
        return at(0);
    }
    if z >= knots[n - 1] {
        return at(n - 1);
    }
    let k = knots.partition_point(|&x| x <= z) - 1;
    if knots[k] == z {
        return at(k);
    }
    let w = (z - knots[k]) / (knots[k + 1] - knots[k]);
    LinearWeight {
        lo: k,
        hi: k + 1,
        w_lo: 1.0 - w,
        w_hi: w,
    }
}

impl VerticalMap {
    pub fn src_levels(&self) -> &[f64] {
        &self.src_levels
    }

    pub fn dst_levels(&self) -> &[f64] {
        &self.dst_levels
    }

    pub fn spline_weights(&self) -> &[f64] {
        &self.spline_weights
    }

    pub fn linear_weights(&self) -> &[LinearWeight] {
        &self.linear_weights
    }

    pub fn fill_levels(&self) -> &[usize] {
        &self.fill_levels
    }

    fn temperature_up_into(&self, column: &[f64], out: &mut [f64]) {
        let nd = self.dst_levels.len();
        for (o, w) in out.iter_mut().zip(self.spline_weights.chunks_exact(nd)) {
            *o = crate::linalg::dot(w, column);
        }
    }

    fn ozone_down_into(&self, column: &[f64], fill: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.linear_weights) {
            *o = (w.w_lo * column[w.lo] + w.w_hi * column[w.hi]).max(0.0);
        }
        for &k in &self.fill_levels {
            out[k] = fill[k];
        }
    }
}

/// Spline-interpolates one destination temperature column to the source
/// levels.
pub fn interp_temperature_up(column_dst: &[f64], map: &VerticalMap) -> Result<Vec<f64>> {
    if column_dst.len() != map.dst_levels.len() {
        return Err(MlozError::Structural(format!(
            "column has {} levels, map expects {}",
            column_dst.len(),
            map.dst_levels.len()
        )));
    }
    if column_dst.iter().any(|v| !v.is_finite()) {
        return Err(MlozError::Input("non-finite temperature".into()));
    }
    let mut out = vec![0.0; map.src_levels.len()];
    map.temperature_up_into(column_dst, &mut out);
    Ok(out)
}

/// Interpolates one source ozone column down to the destination levels,
/// taking fill levels from `clim_fill` (a destination column).
pub fn interp_ozone_down(column_src: &[f64], map: &VerticalMap, clim_fill: &[f64]) -> Result<Vec<f64>> {
    if column_src.len() != map.src_levels.len() || clim_fill.len() != map.dst_levels.len() {
        return Err(MlozError::Structural(
            "ozone column does not match the vertical map".into(),
        ));
    }
    if column_src.iter().chain(clim_fill).any(|v| !v.is_finite()) {
        return Err(MlozError::Input("non-finite ozone".into()));
    }
    let mut out = vec![0.0; map.dst_levels.len()];
    map.ozone_down_into(column_src, clim_fill, &mut out);
    Ok(out)
}

/// Regrids a destination temperature series onto the source levels.
pub fn regrid_temperature(series: &FieldSeries, map: &VerticalMap, src_grid: &GridSpec) -> Result<FieldSeries> {
    let g = series.grid();
    if g.level_height_m() != map.dst_levels.as_slice() || src_grid.level_height_m() != map.src_levels.as_slice() {
        return Err(MlozError::Structural("grids do not match the vertical map".into()));
    }
    if !g.same_horizontal(src_grid) {
        return Err(MlozError::Structural("horizontal grids differ".into()));
    }
    let nd = g.nlev();
    let ns = src_grid.nlev();
    let mut data = vec![0.0; series.ntime() * g.ncols() * ns];
    data.par_chunks_mut(ns)
        .zip(series.data().par_chunks(nd))
        .for_each(|(o, c)| map.temperature_up_into(c, o));
    Ok(FieldSeries::new(src_grid.clone(), Variable::Temperature, data)?.with_spinup_days(series.spinup_days()))
}

/// Input standardization statistics of the host model, `[col][feat]` on
/// the source levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RecalibrationParams {
    pub x_mean_target: Vec<f64>,
    pub x_std_target: Vec<f64>,
}

impl RecalibrationParams {
    /// The coefficients' own input statistics (no recalibration).
    pub fn from_coefficients(coeffs: &CoefficientSet) -> Self {
        RecalibrationParams {
            x_mean_target: coeffs.x_mean().to_vec(),
            x_std_target: coeffs.x_std().to_vec(),
        }
    }
}

/// Per-point mean and standard deviation of the host model's temperature,
/// regridded to the source levels.
///
/// Statistics use every day that has a following day, the same samples the
/// trainer standardizes, so recalibrating on the training series reproduces
/// the trained statistics exactly.
pub fn recalibrate_scaling(
    target_temp: &FieldSeries,
    map: &VerticalMap,
    coeffs: &CoefficientSet,
    std_floor: f64,
) -> Result<RecalibrationParams> {
    if target_temp.variable() != Variable::Temperature {
        return Err(MlozError::Input("recalibration needs a temperature series".into()));
    }
    if target_temp.ntime() < DAYS_PER_YEAR {
        return Err(MlozError::InsufficientData(format!(
            "recalibration needs at least {DAYS_PER_YEAR} days, got {}",
            target_temp.ntime()
        )));
    }
    if !(std_floor > 0.0) {
        return Err(MlozError::config("std_floor", "must be positive"));
    }
    let src_grid = coeffs.grid();
    let regridded = regrid_temperature(target_temp, map, src_grid)?;
    let n = coeffs.nfeat();
    let nsamples = regridded.ntime() - 1;
    let stats: Vec<(Vec<f64>, Vec<f64>)> = (0..src_grid.ncols())
        .into_par_iter()
        .map(|col| {
            let (lat, lon) = (col / src_grid.nlon(), col % src_grid.nlon());
            let mut x = Vec::with_capacity(nsamples * n);
            for t in 0..nsamples {
                x.extend_from_slice(&regridded.column(t, lat, lon)[..n]);
            }
            feature_moments(&x, n, std_floor)
        })
        .collect();
    let mut p = RecalibrationParams {
        x_mean_target: Vec::with_capacity(src_grid.ncols() * n),
        x_std_target: Vec::with_capacity(src_grid.ncols() * n),
    };
    for (m, s) in stats {
        p.x_mean_target.extend(m);
        p.x_std_target.extend(s);
    }
    if p.x_mean_target.iter().any(|v| !v.is_finite()) {
        return Err(MlozError::Input(
            "non-finite temperature in recalibration series".into(),
        ));
    }
    Ok(p)
}

/// Predicts one day of destination-grid ozone from destination-grid
/// temperature.
///
/// `clim_fill` is a destination-grid ozone climatology used at the fill
/// levels on `ctx.day_of_year`.
pub fn transfer_predict(
    temp_dst: &[f64],
    map: &VerticalMap,
    recal: &RecalibrationParams,
    ctx: &InferenceContext<'_>,
    clim_fill: &Climatology,
) -> Result<Vec<f64>> {
    let coeffs = ctx.coeffs;
    let src = coeffs.grid();
    let dst = clim_fill.grid();
    if src.level_height_m() != map.src_levels.as_slice() || dst.level_height_m() != map.dst_levels.as_slice() {
        return Err(MlozError::Structural("grids do not match the vertical map".into()));
    }
    if !src.same_horizontal(dst) {
        return Err(MlozError::Structural("horizontal grids differ".into()));
    }
    if temp_dst.len() != dst.npoints() {
        return Err(MlozError::Structural(format!(
            "temperature field has {} values, destination grid has {}",
            temp_dst.len(),
            dst.npoints()
        )));
    }
    let n = coeffs.nfeat();
    if recal.x_mean_target.len() != src.ncols() * n || recal.x_std_target.len() != src.ncols() * n {
        return Err(MlozError::Structural(
            "recalibration statistics have the wrong shape".into(),
        ));
    }
    if recal.x_std_target.iter().any(|s| !(*s > 0.0)) {
        return Err(MlozError::Input(
            "recalibration standard deviations must be positive".into(),
        ));
    }
    if ctx.block_size == 0 {
        return Err(MlozError::config("block_size", "must be at least 1"));
    }
    check_finite_day(temp_dst, dst.nlev(), dst.nlon())?;

    let (nd, ns) = (dst.nlev(), src.nlev());
    let cap = coeffs.cap_climatology().field(ctx.day_of_year);
    let fill = clim_fill.field(ctx.day_of_year);
    let mut out = vec![0.0; dst.npoints()];
    let chunk = ctx.block_size * nd;
    out.par_chunks_mut(chunk)
        .zip(temp_dst.par_chunks(chunk))
        .enumerate()
        .for_each(|(b, (out_block, temp_block))| {
            let mut t_src = vec![0.0; ns];
            let mut o_src = vec![0.0; ns];
            let mut z = vec![0.0; n];
            for (i, (o, t)) in out_block
                .chunks_exact_mut(nd)
                .zip(temp_block.chunks_exact(nd))
                .enumerate()
            {
                let col = b * ctx.block_size + i;
                map.temperature_up_into(t, &mut t_src);
                let xm = &recal.x_mean_target[col * n..(col + 1) * n];
                let xs = &recal.x_std_target[col * n..(col + 1) * n];
                predict_column_into(coeffs, col, &t_src, xm, xs, &mut z, &mut o_src);
                o_src[n..].copy_from_slice(&cap[col * ns + n..(col + 1) * ns]);
                map.ozone_down_into(&o_src, &fill[col * nd..(col + 1) * nd], o);
            }
        });
    Ok(out)
}
