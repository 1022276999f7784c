use serde::{Deserialize, Serialize};

use crate::error::{MlozError, Result};
use crate::field::{FieldSeries, Variable};
use crate::grid::GridSpec;

/// Fixed calendar length; there are no leap days.
pub const DAYS_PER_YEAR: usize = 365;

/// Slots stored for a day-of-year climatology: 365 days plus a leap
/// placeholder that mirrors day 364.
pub const DOY_SLOTS: usize = 366;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClimatologyKind {
    Annual,
    DayOfYear,
}

impl ClimatologyKind {
    pub fn slots(self) -> usize {
        match self {
            ClimatologyKind::Annual => 1,
            ClimatologyKind::DayOfYear => DOY_SLOTS,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            ClimatologyKind::Annual => 0,
            ClimatologyKind::DayOfYear => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ClimatologyKind::Annual),
            1 => Some(ClimatologyKind::DayOfYear),
            _ => None,
        }
    }
}

/// Long-term mean field, either a single annual mean or one field per
/// day of the year. Values are `[slot][lat][lon][lev]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    grid: GridSpec,
    kind: ClimatologyKind,
    variable: Variable,
    values: Vec<f64>,
}

impl Climatology {
    pub fn from_values(grid: GridSpec, kind: ClimatologyKind, variable: Variable, values: Vec<f64>) -> Result<Self> {
        let expected = kind.slots() * grid.npoints();
        if values.len() != expected {
            return Err(MlozError::Structural(format!(
                "climatology expects {expected} values, got {}",
                values.len()
            )));
        }
        if variable == Variable::Ozone && values.iter().any(|v| !(*v >= 0.0)) {
            return Err(MlozError::Input(
                "ozone climatology must be non-negative and finite".into(),
            ));
        }
        let mut c = Climatology {
            grid,
            kind,
            variable,
            values,
        };
        c.sync_leap_slot();
        Ok(c)
    }

    /// Builds a day-of-year climatology by evaluating `f(day_of_year, flat_point)`.
    pub fn from_fn(
        grid: GridSpec,
        kind: ClimatologyKind,
        variable: Variable,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let n = grid.npoints();
        let mut values = Vec::with_capacity(kind.slots() * n);
        for slot in 0..kind.slots() {
            let doy = slot.min(DAYS_PER_YEAR - 1);
            values.extend((0..n).map(|p| f(doy, p)));
        }
        Climatology::from_values(grid, kind, variable, values)
    }

    fn sync_leap_slot(&mut self) {
        if self.kind == ClimatologyKind::DayOfYear {
            let n = self.grid.npoints();
            let (head, tail) = self.values.split_at_mut(DAYS_PER_YEAR * n);
            tail.copy_from_slice(&head[(DAYS_PER_YEAR - 1) * n..]);
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn kind(&self) -> ClimatologyKind {
        self.kind
    }

    pub fn variable(&self) -> Variable {
        self.variable
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Field for a day of the year (any day for the annual kind). Days
    /// beyond 365 wrap around the fixed calendar.
    pub fn field(&self, day_of_year: usize) -> &[f64] {
        let n = self.grid.npoints();
        let slot = match self.kind {
            ClimatologyKind::Annual => 0,
            ClimatologyKind::DayOfYear => day_of_year % DAYS_PER_YEAR,
        };
        &self.values[slot * n..(slot + 1) * n]
    }

    pub fn value(&self, day_of_year: usize, lat: usize, lon: usize, lev: usize) -> f64 {
        self.field(day_of_year)[self.grid.flat_index(lat, lon, lev)]
    }

    /// Zeroes levels below `level` in every slot.
    pub fn zero_below(&mut self, level: usize) {
        let nlev = self.grid.nlev();
        for col in self.values.chunks_mut(nlev) {
            col[..level.min(nlev)].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Series of `ntime` days repeating the climatology day by day.
    pub fn tile(&self, ntime: usize) -> FieldSeries {
        let mut data = Vec::with_capacity(ntime * self.grid.npoints());
        for t in 0..ntime {
            data.extend_from_slice(self.field(t));
        }
        FieldSeries::new(self.grid.clone(), self.variable, data).expect("tiled climatology has a whole number of days")
    }
}

/// Time mean (annual kind) or mean over all days sharing a day of the year
/// (day-of-year kind, day `t` of the series is day `t % 365`).
pub fn compute_climatology(series: &FieldSeries, kind: ClimatologyKind) -> Result<Climatology> {
    let ntime = series.ntime();
    if ntime == 0 {
        return Err(MlozError::InsufficientData("empty series".into()));
    }
    if kind == ClimatologyKind::DayOfYear && ntime < DAYS_PER_YEAR {
        return Err(MlozError::InsufficientData(format!(
            "day-of-year climatology needs at least {DAYS_PER_YEAR} days, got {ntime}"
        )));
    }
    let n = series.grid().npoints();
    let nslots = kind.slots();
    let mut sums = vec![0.0; nslots * n];
    let mut counts = vec![0usize; nslots];
    for t in 0..ntime {
        let slot = match kind {
            ClimatologyKind::Annual => 0,
            ClimatologyKind::DayOfYear => t % DAYS_PER_YEAR,
        };
        counts[slot] += 1;
        let acc = &mut sums[slot * n..(slot + 1) * n];
        for (a, v) in acc.iter_mut().zip(series.day(t)) {
            *a += v;
        }
    }
    for (slot, &c) in counts.iter().enumerate() {
        if c > 0 {
            let inv = c as f64;
            sums[slot * n..(slot + 1) * n].iter_mut().for_each(|v| *v /= inv);
        }
    }
    Climatology::from_values(series.grid().clone(), kind, series.variable(), sums)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::regular(2, 1, vec![10.0, 30_000.0, 55_000.0]).unwrap()
    }

    fn series(ntime: usize, f: impl Fn(usize, usize) -> f64) -> FieldSeries {
        let g = grid();
        let mut data = Vec::new();
        for t in 0..ntime {
            for p in 0..g.npoints() {
                data.push(f(t, p));
            }
        }
        FieldSeries::new(g, Variable::Temperature, data).unwrap()
    }

    #[test]
    fn constant_field_gives_constant_climatology() {
        let s = series(730, |_, _| 251.5);
        for kind in [ClimatologyKind::Annual, ClimatologyKind::DayOfYear] {
            let c = compute_climatology(&s, kind).unwrap();
            assert!(c.values().iter().all(|&v| v == 251.5));
        }
    }

    #[test]
    fn alternating_series_annual_mean() {
        let s = series(10, |t, _| if t % 2 == 0 { 1.0 } else { 3.0 });
        let c = compute_climatology(&s, ClimatologyKind::Annual).unwrap();
        assert!(c.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn leap_slot_mirrors_last_day() {
        let s = series(365 * 2, |t, p| (t % 365) as f64 + p as f64);
        let c = compute_climatology(&s, ClimatologyKind::DayOfYear).unwrap();
        let n = grid().npoints();
        assert_eq!(&c.values()[365 * n..], &c.values()[364 * n..365 * n]);
        assert_eq!(c.value(364, 1, 0, 2), 364.0 + 5.0);
        assert_eq!(c.field(365 + 3), c.field(3));
    }

    #[test]
    fn errors() {
        let s = series(0, |_, _| 0.0);
        assert!(matches!(
            compute_climatology(&s, ClimatologyKind::Annual),
            Err(MlozError::InsufficientData(_))
        ));
        let s = series(100, |_, _| 1.0);
        assert!(compute_climatology(&s, ClimatologyKind::DayOfYear).is_err());
    }

    #[test]
    fn tiled_climatology_repeats() {
        let s = series(365, |t, _| t as f64);
        let c = compute_climatology(&s, ClimatologyKind::DayOfYear).unwrap();
        let tiled = c.tile(400);
        assert_eq!(tiled.day(370), c.field(5));
    }
}
