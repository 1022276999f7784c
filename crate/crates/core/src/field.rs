use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{MlozError, Result};
use crate::grid::GridSpec;

/// Physical quantity stored in a [`FieldSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variable {
    /// Kelvin.
    #[serde(rename = "temperature_K")]
    Temperature,
    /// Volume mixing ratio (mole fraction).
    #[serde(rename = "ozone_vmr")]
    Ozone,
}

impl Variable {
    pub fn code(self) -> u32 {
        match self {
            Variable::Temperature => 0,
            Variable::Ozone => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Variable::Temperature),
            1 => Some(Variable::Ozone),
            _ => None,
        }
    }
}

/// Plausible temperature range in Kelvin (exclusive bounds).
pub const TEMPERATURE_RANGE_K: (f64, f64) = (100.0, 400.0);

/// Time-ordered daily 3-D fields, `data[t][lat][lon][lev]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    grid: GridSpec,
    variable: Variable,
    ntime: usize,
    data: Vec<f64>,
    spinup_days: usize,
}

impl FieldSeries {
    /// Wraps raw data after a shape check. Values are not validated here; use
    /// [`validate_field`] or [`FieldSeries::new_checked`].
    pub fn new(grid: GridSpec, variable: Variable, data: Vec<f64>) -> Result<Self> {
        let per_day = grid.npoints();
        if !data.len().is_multiple_of(per_day) {
            return Err(MlozError::Structural(format!(
                "data length {} is not a multiple of the field size {per_day}",
                data.len()
            )));
        }
        Ok(FieldSeries {
            ntime: data.len() / per_day,
            grid,
            variable,
            data,
            spinup_days: 0,
        })
    }

    pub fn new_checked(grid: GridSpec, variable: Variable, data: Vec<f64>) -> Result<Self> {
        let s = FieldSeries::new(grid, variable, data)?;
        let report = validate_field(&s);
        if let Some(v) = report.first() {
            return Err(MlozError::Input(format!("{} invalid values, first: {v}", report.len())));
        }
        Ok(s)
    }

    pub fn empty(grid: GridSpec, variable: Variable) -> Self {
        FieldSeries {
            grid,
            variable,
            ntime: 0,
            data: Vec::new(),
            spinup_days: 0,
        }
    }

    pub fn with_spinup_days(mut self, days: usize) -> Self {
        self.spinup_days = days;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn ntime(&self) -> usize {
        self.ntime
    }

    /// Leading days flagged as spin-up (excluded from diagnostics).
    pub fn spinup_days(&self) -> usize {
        self.spinup_days
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn day(&self, t: usize) -> &[f64] {
        let n = self.grid.npoints();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn column(&self, t: usize, lat: usize, lon: usize) -> &[f64] {
        let nlev = self.grid.nlev();
        let start = t * self.grid.npoints() + self.grid.column_index(lat, lon) * nlev;
        &self.data[start..start + nlev]
    }

    pub fn value(&self, t: usize, lat: usize, lon: usize, lev: usize) -> f64 {
        self.data[t * self.grid.npoints() + self.grid.flat_index(lat, lon, lev)]
    }

    pub fn time_series(&self, lat: usize, lon: usize, lev: usize) -> Vec<f64> {
        (0..self.ntime).map(|t| self.value(t, lat, lon, lev)).collect()
    }

    pub fn push_day(&mut self, field: &[f64]) -> Result<()> {
        if field.len() != self.grid.npoints() {
            return Err(MlozError::Structural(format!(
                "day field has {} values, grid expects {}",
                field.len(),
                self.grid.npoints()
            )));
        }
        self.data.extend_from_slice(field);
        self.ntime += 1;
        Ok(())
    }

    /// Copy of days `range`; the spin-up flag is carried over for the part of
    /// the spin-up that falls inside the range.
    pub fn slice_days(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.ntime {
            return Err(MlozError::Input(format!(
                "day range {range:?} outside 0..{}",
                self.ntime
            )));
        }
        let n = self.grid.npoints();
        Ok(FieldSeries {
            grid: self.grid.clone(),
            variable: self.variable,
            ntime: range.len(),
            data: self.data[range.start * n..range.end * n].to_vec(),
            spinup_days: self.spinup_days.saturating_sub(range.start).min(range.len()),
        })
    }

    /// Days after the spin-up segment.
    pub fn after_spinup(&self) -> Result<Self> {
        self.slice_days(self.spinup_days..self.ntime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    NonFinite,
    NegativeOzone,
    TemperatureOutOfRange,
}

/// One invalid value located by `(time, lat, lon, lev)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub time: usize,
    pub lat: usize,
    pub lon: usize,
    pub lev: usize,
    pub value: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?} value {} at (t={}, lat={}, lon={}, lev={})",
            self.kind, self.value, self.time, self.lat, self.lon, self.lev
        )
    }
}

/// Lists every value breaking the field invariants; empty iff the series is
/// valid.
pub fn validate_field(series: &FieldSeries) -> Vec<Violation> {
    let g = series.grid();
    let (nlon, nlev) = (g.nlon(), g.nlev());
    let per_day = g.npoints();
    let mut out = Vec::new();
    for (i, &v) in series.data().iter().enumerate() {
        let kind = if !v.is_finite() {
            Some(ViolationKind::NonFinite)
        } else {
            match series.variable() {
                Variable::Ozone if v < 0.0 => Some(ViolationKind::NegativeOzone),
                Variable::Temperature if v <= TEMPERATURE_RANGE_K.0 || v >= TEMPERATURE_RANGE_K.1 => {
                    Some(ViolationKind::TemperatureOutOfRange)
                }
                _ => None,
            }
        };
        if let Some(kind) = kind {
            let (t, rem) = (i / per_day, i % per_day);
            out.push(Violation {
                kind,
                time: t,
                lat: rem / (nlon * nlev),
                lon: (rem / nlev) % nlon,
                lev: rem % nlev,
                value: v,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::regular(2, 3, vec![100.0, 20_000.0, 55_000.0]).unwrap()
    }

    fn series(var: Variable, v: f64, ntime: usize) -> FieldSeries {
        let g = grid();
        let n = g.npoints() * ntime;
        FieldSeries::new(g, var, vec![v; n]).unwrap()
    }

    #[test]
    fn valid_field_has_empty_report() {
        assert!(validate_field(&series(Variable::Temperature, 250.0, 3)).is_empty());
        assert!(validate_field(&series(Variable::Ozone, 5e-6, 3)).is_empty());
    }

    #[test]
    fn single_nan_is_located() {
        let g = grid();
        let mut s = series(Variable::Temperature, 250.0, 2);
        let idx = g.npoints() + g.flat_index(1, 2, 1);
        s.data[idx] = f64::NAN;
        let report = validate_field(&s);
        assert_eq!(report.len(), 1);
        let v = report[0];
        assert_eq!(v.kind, ViolationKind::NonFinite);
        assert_eq!((v.time, v.lat, v.lon, v.lev), (1, 1, 2, 1));
    }

    #[test]
    fn negative_ozone_is_reported() {
        let g = grid();
        let mut s = series(Variable::Ozone, 5e-6, 1);
        s.data[g.flat_index(0, 1, 2)] = -1e-9;
        let report = validate_field(&s);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].kind, ViolationKind::NegativeOzone);
        assert_eq!((report[0].lat, report[0].lon, report[0].lev), (0, 1, 2));
    }

    #[test]
    fn temperature_bounds_are_exclusive() {
        let mut s = series(Variable::Temperature, 250.0, 1);
        s.data[0] = 100.0;
        s.data[1] = 400.0;
        s.data[2] = 100.000001;
        let kinds: Vec<_> = validate_field(&s).iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::TemperatureOutOfRange; 2]);
        assert!(FieldSeries::new_checked(grid(), Variable::Temperature, s.data.clone()).is_err());
    }

    #[test]
    fn slicing_keeps_spinup_inside_range() {
        let s = series(Variable::Ozone, 1e-6, 10).with_spinup_days(4);
        assert_eq!(s.slice_days(2..8).unwrap().spinup_days(), 2);
        assert_eq!(s.slice_days(5..8).unwrap().spinup_days(), 0);
        assert_eq!(s.after_spinup().unwrap().ntime(), 6);
        assert!(s.slice_days(5..11).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(FieldSeries::new(grid(), Variable::Ozone, vec![0.0; 7]).is_err());
        let mut s = FieldSeries::empty(grid(), Variable::Ozone);
        assert!(s.push_day(&[0.0; 3]).is_err());
        s.push_day(&vec![0.0; grid().npoints()]).unwrap();
        assert_eq!(s.ntime(), 1);
    }
}
