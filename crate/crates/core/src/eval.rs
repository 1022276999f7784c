//! Diagnostics: climatology bias, kernel density estimates, column ozone,
//! drift, response and variability maps, and plot-data export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::climatology::{Climatology, DAYS_PER_YEAR};
use crate::error::{MlozError, Result};
use crate::field::FieldSeries;
use crate::grid::GridSpec;

/// References below this vmr are masked instead of divided by.
pub const BIAS_REFERENCE_FLOOR: f64 = 1e-10;
pub const KDE_BANDWIDTH_FRACTION: f64 = 0.02;
pub const KDE_SUPPORT_POINTS: usize = 512;
pub const KDE_SUPPORT_BANDWIDTHS: f64 = 6.0;
pub const SURFACE_PRESSURE_PA: f64 = 101_325.0;
pub const SCALE_HEIGHT_M: f64 = 7_000.0;
pub const GRAVITY: f64 = 9.80665;
pub const AVOGADRO: f64 = 6.022_140_76e23;
pub const MOLAR_MASS_AIR: f64 = 28.9647e-3;
/// Molecules per m² in one Dobson unit.
pub const DOBSON_UNIT: f64 = 2.687e20;
pub const DEFAULT_DRIFT_THRESHOLD_PCT: f64 = 1.0;

/// Height band, optionally restricted to `|lat| <= max_abs_lat_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub name: &'static str,
    pub lo_m: f64,
    pub hi_m: f64,
    pub max_abs_lat_deg: Option<f64>,
}

pub const STRATOSPHERE: Band = Band {
    name: "stratosphere",
    lo_m: 16_000.0,
    hi_m: 50_000.0,
    max_abs_lat_deg: None,
};
pub const TROPOSPHERE: Band = Band {
    name: "troposphere",
    lo_m: 0.0,
    hi_m: 12_000.0,
    max_abs_lat_deg: None,
};
pub const UPPER_STRATOSPHERE: Band = Band {
    name: "upper_stratosphere",
    lo_m: 35_000.0,
    hi_m: 50_000.0,
    max_abs_lat_deg: None,
};
pub const TROPICAL_LOWER_STRATOSPHERE: Band = Band {
    name: "tropical_lower_stratosphere",
    lo_m: 16_000.0,
    hi_m: 28_000.0,
    max_abs_lat_deg: Some(30.0),
};

impl Band {
    /// Flat `[lat][lon][lev]` indices of the grid points inside the band.
    pub fn points(&self, grid: &GridSpec) -> Vec<usize> {
        let levels = grid.levels_in_band(self.lo_m, self.hi_m);
        let mut out = Vec::new();
        for (i, lat) in grid.lat_deg().iter().enumerate() {
            if self.max_abs_lat_deg.is_some_and(|m| lat.abs() > m) {
                continue;
            }
            for j in 0..grid.nlon() {
                out.extend(levels.iter().map(|&k| grid.flat_index(i, j, k)));
            }
        }
        out
    }
}

/// `100·(test − reference)/reference` per slot and point; `None` where the
/// reference is below [`BIAS_REFERENCE_FLOOR`].
pub fn percent_bias(test: &Climatology, reference: &Climatology) -> Result<Vec<Option<f64>>> {
    test.grid().check_same(reference.grid(), "percent_bias")?;
    if test.kind() != reference.kind() {
        return Err(MlozError::Structural("percent_bias: climatology kinds differ".into()));
    }
    Ok(test
        .values()
        .iter()
        .zip(reference.values())
        .map(|(&t, &r)| (r >= BIAS_REFERENCE_FLOOR).then(|| 100.0 * (t - r) / r))
        .collect())
}

/// Largest |bias| over `points` of the first slot, ignoring masked points.
pub fn max_abs_bias(bias: &[Option<f64>], points: &[usize]) -> Option<f64> {
    points.iter().filter_map(|&p| bias[p]).map(f64::abs).reduce(f64::max)
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdfEstimate {
    pub support: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl PdfEstimate {
    /// Trapezoidal integral of the density over the support.
    pub fn integral(&self) -> f64 {
        self.support
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

/// KDE with bandwidth `0.02·reference_mean` on 512 points spanning the data
/// range extended by six bandwidths on each side.
pub fn kde_pdf(samples: &[f64], reference_mean: f64) -> Result<PdfEstimate> {
    if samples.is_empty() {
        return Err(MlozError::InsufficientData("kde needs at least one sample".into()));
    }
    if !(reference_mean > 0.0 && reference_mean.is_finite()) {
        return Err(MlozError::Input("kde reference mean must be positive".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(MlozError::Input("non-finite kde sample".into()));
    }
    let h = KDE_BANDWIDTH_FRACTION * reference_mean;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - KDE_SUPPORT_BANDWIDTHS * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + KDE_SUPPORT_BANDWIDTHS * h;
    let step = (hi - lo) / (KDE_SUPPORT_POINTS - 1) as f64;
    let support: Vec<f64> = (0..KDE_SUPPORT_POINTS).map(|i| lo + step * i as f64).collect();
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = support
        .iter()
        .map(|&v| {
            norm * samples
                .iter()
                .map(|&s| {
                    let u = (v - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(PdfEstimate {
        support,
        density,
        bandwidth: h,
    })
}

/// Pressure of the isothermal reference atmosphere at height `z_m`.
pub fn pressure_at(z_m: f64) -> f64 {
    SURFACE_PRESSURE_PA * (-z_m / SCALE_HEIGHT_M).exp()
}

/// Column ozone in Dobson units. Layers are bounded by the midpoints between
/// levels, the surface below and the top of the atmosphere above.
pub fn column_ozone(profile: &[f64], level_heights: &[f64]) -> Result<f64> {
    if profile.len() != level_heights.len() || profile.is_empty() {
        return Err(MlozError::Structural("profile and heights differ in length".into()));
    }
    if profile.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(MlozError::Input("column ozone needs finite, non-negative vmr".into()));
    }
    let n = profile.len();
    let molecule_mass = MOLAR_MASS_AIR / AVOGADRO;
    let mut total = 0.0;
    let mut p_below = SURFACE_PRESSURE_PA;
    for k in 0..n {
        let p_above = if k + 1 < n {
            pressure_at(0.5 * (level_heights[k] + level_heights[k + 1]))
        } else {
            0.0
        };
        total += profile[k] * (p_below - p_above) / (molecule_mass * GRAVITY);
        p_below = p_above;
    }
    Ok(total / DOBSON_UNIT)
}

/// Area-weighted mean of one field over all levels. `weights` are the
/// grid's column weights.
pub fn global_mean(field: &[f64], grid: &GridSpec, weights: &[f64]) -> f64 {
    let nlev = grid.nlev();
    field
        .chunks_exact(nlev)
        .zip(weights)
        .map(|(col, w)| w * col.iter().sum::<f64>() / nlev as f64)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    /// Linear trend in percent of the mean per decade.
    pub trend_per_decade_pct: f64,
    pub threshold_pct: f64,
    pub pass: bool,
}

/// Least-squares trend of a daily series after `spinup_days`, in percent of
/// its mean per decade.
pub fn drift_of_series(daily: &[f64], spinup_days: usize, threshold_pct: f64) -> Result<DriftReport> {
    if daily.len() < spinup_days + 4 * DAYS_PER_YEAR {
        return Err(MlozError::InsufficientData(format!(
            "drift test needs at least 4 years after spin-up, got {} days",
            daily.len().saturating_sub(spinup_days)
        )));
    }
    let y = &daily[spinup_days..];
    let n = y.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dt = i as f64 - tm;
        sxy += dt * (v - ym);
        sxx += dt * dt;
    }
    if ym == 0.0 {
        return Err(MlozError::Numeric("drift test on a zero-mean series".into()));
    }
    let trend = 100.0 * (sxy / sxx) * 10.0 * DAYS_PER_YEAR as f64 / ym;
    Ok(DriftReport {
        trend_per_decade_pct: trend,
        threshold_pct,
        pass: trend.abs() < threshold_pct,
    })
}

/// Drift of the area-weighted global mean of `series`.
pub fn drift_test(series: &FieldSeries, spinup_years: usize, threshold_pct: f64) -> Result<DriftReport> {
    let w = series.grid().area_weights();
    let daily: Vec<f64> = (0..series.ntime())
        .map(|t| global_mean(series.day(t), series.grid(), &w))
        .collect();
    drift_of_series(&daily, spinup_years * DAYS_PER_YEAR, threshold_pct)
}

/// `run_4x − run_pi`, element-wise.
pub fn response_field(run_4x: &Climatology, run_pi: &Climatology) -> Result<Vec<f64>> {
    run_4x.grid().check_same(run_pi.grid(), "response_field")?;
    if run_4x.kind() != run_pi.kind() {
        return Err(MlozError::Structural("response_field: climatology kinds differ".into()));
    }
    Ok(run_4x
        .values()
        .iter()
        .zip(run_pi.values())
        .map(|(a, b)| a - b)
        .collect())
}

/// Per-point population standard deviation after the spin-up.
pub fn std_map(series: &FieldSeries, spinup_years: usize) -> Result<Vec<f64>> {
    let start = spinup_years * DAYS_PER_YEAR;
    if series.ntime() < start + 2 * DAYS_PER_YEAR {
        return Err(MlozError::InsufficientData(
            "std map needs two years after spin-up".into(),
        ));
    }
    let np = series.grid().npoints();
    let n = (series.ntime() - start) as f64;
    let mut mean = vec![0.0; np];
    for t in start..series.ntime() {
        mean.iter_mut().zip(series.day(t)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; np];
    for t in start..series.ntime() {
        for ((s, v), m) in var.iter_mut().zip(series.day(t)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    Ok(var.into_iter().map(|s| (s / n).sqrt()).collect())
}

/// One line of a JSON diagnostic report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub band: Option<String>,
    pub value: f64,
    pub threshold: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
struct PlotMeta<'a> {
    name: &'a str,
    columns: Vec<&'a str>,
    rows: usize,
    format: &'static str,
    attributes: &'a serde_json::Value,
}

/// Formats a float so that parsing it back gives the same bits.
pub fn format_lossless(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes equal-length columns as comma-separated text to `path` and a JSON
/// description next to it (`<path>.json`).
pub fn export_plot_data(
    path: &Path,
    name: &str,
    columns: &[(&str, &[f64])],
    attributes: &serde_json::Value,
) -> Result<()> {
    let rows = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != rows) {
        return Err(MlozError::Structural("plot columns differ in length".into()));
    }
    let mut text = columns.iter().map(|c| c.0).collect::<Vec<_>>().join(",");
    text.push('\n');
    for r in 0..rows {
        for (i, c) in columns.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            let _ = write!(text, "{}", format_lossless(c.1[r]));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| MlozError::io(path, e))?;
    let meta = PlotMeta {
        name,
        columns: columns.iter().map(|c| c.0).collect(),
        rows,
        format: "csv, float64 as 17 significant digits",
        attributes,
    };
    let mut meta_path = path.as_os_str().to_os_string();
    meta_path.push(".json");
    crate::store::write_json(Path::new(&meta_path), &meta)
}

/// Reads a file written by [`export_plot_data`] back into named columns.
pub fn read_plot_data(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| MlozError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| MlozError::InvalidFile {
        path: path.to_path_buf(),
        message: "empty plot file".into(),
    })?;
    let mut cols: Vec<(String, Vec<f64>)> = header.split(',').map(|h| (h.to_string(), Vec::new())).collect();
    for line in lines {
        for (c, cell) in cols.iter_mut().zip(line.split(',')) {
            let v = cell.parse::<f64>().map_err(|e| MlozError::InvalidFile {
                path: path.to_path_buf(),
                message: format!("bad number {cell:?}: {e}"),
            })?;
            c.1.push(v);
        }
    }
    Ok(cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::climatology::ClimatologyKind;
    use crate::field::Variable;

    fn clim(values: Vec<f64>) -> Climatology {
        let g = GridSpec::regular(1, 1, vec![10.0, 20.0, 30.0]).unwrap();
        Climatology::from_values(g, ClimatologyKind::Annual, Variable::Ozone, values).unwrap()
    }

    #[test]
    fn bias_basics() {
        let r = clim(vec![1e-6, 2e-6, 0.0]);
        let t = clim(vec![1.1e-6, 2.2e-6, 5e-7]);
        let b = percent_bias(&t, &r).unwrap();
        assert!((b[0].unwrap() - 10.0).abs() < 1e-9);
        assert!((b[1].unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(b[2], None);
        assert!(percent_bias(&r, &r).unwrap()[..2].iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn single_sample_kde_is_gaussian() {
        let p = kde_pdf(&[5e-6], 5e-6).unwrap();
        assert!((p.bandwidth - 1e-7).abs() < 1e-22);
        let h = p.bandwidth;
        for (x, d) in p.support.iter().zip(&p.density) {
            let want = (-0.5 * ((x - 5e-6) / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
            assert!((d - want).abs() <= 1e-12 * want.max(1.0));
        }
        assert!((p.integral() - 1.0).abs() < 1e-3);
        assert!(kde_pdf(&[], 1.0).is_err());
    }

    #[test]
    fn column_ozone_linear() {
        let z = [100.0, 5_000.0, 20_000.0, 40_000.0];
        assert_eq!(column_ozone(&[0.0; 4], &z).unwrap(), 0.0);
        let p = [1e-8, 2e-7, 5e-6, 3e-6];
        let p2: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        let a = column_ozone(&p, &z).unwrap();
        assert!((column_ozone(&p2, &z).unwrap() - 2.0 * a).abs() < 1e-12 * a);
        assert!(column_ozone(&[-1e-9, 0.0, 0.0, 0.0], &z).is_err());
    }

    #[test]
    fn drift_short_series() {
        assert!(drift_of_series(&vec![1.0; 365 * 4], 365, 1.0).is_err());
        let r = drift_of_series(&vec![1.0; 365 * 5], 365, 1.0).unwrap();
        assert_eq!(r.trend_per_decade_pct, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn bands() {
        let g = GridSpec::regular(4, 1, vec![5_000.0, 20_000.0, 40_000.0, 55_000.0]).unwrap();
        assert_eq!(STRATOSPHERE.points(&g).len(), 8);
        // latitudes ±67.5, ±22.5
        assert_eq!(TROPICAL_LOWER_STRATOSPHERE.points(&g), vec![4 + 1, 8 + 1]);
    }
}
