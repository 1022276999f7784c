use crate::error::{MlozError, Result};
use crate::field::{FieldSeries, Variable};
use crate::grid::GridSpec;

/// Lagged samples for one column: the temperature column of day `d - 1`
/// paired with the ozone column of day `d`, both truncated to the
/// `cap_level_index` levels below the prediction ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairs {
    grid: GridSpec,
    lat: usize,
    lon: usize,
    nsamples: usize,
    nfeat: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    sample_day_index: Vec<usize>,
}

impl TrainingPairs {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn location(&self) -> (usize, usize) {
        (self.lat, self.lon)
    }

    pub fn nsamples(&self) -> usize {
        self.nsamples
    }

    /// Input features per sample (N).
    pub fn nfeat(&self) -> usize {
        self.nfeat
    }

    /// Predicted levels per sample; equal to `nfeat`.
    pub fn nout(&self) -> usize {
        self.nfeat
    }

    /// Row-major `[nsamples][nfeat]` temperatures.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Row-major `[nsamples][nout]` ozone.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.nfeat..(i + 1) * self.nfeat]
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        &self.y[i * self.nfeat..(i + 1) * self.nfeat]
    }

    /// Target series of one output level.
    pub fn target(&self, level: usize) -> Vec<f64> {
        (0..self.nsamples).map(|i| self.y[i * self.nfeat + level]).collect()
    }

    pub fn sample_day_index(&self) -> &[usize] {
        &self.sample_day_index
    }
}

/// Pairs the previous-day temperature column with current-day ozone at
/// `(lat, lon)`.
pub fn build_training_pairs(temp: &FieldSeries, ozone: &FieldSeries, lat: usize, lon: usize) -> Result<TrainingPairs> {
    if temp.variable() != Variable::Temperature || ozone.variable() != Variable::Ozone {
        return Err(MlozError::Structural(
            "expected a temperature series and an ozone series".into(),
        ));
    }
    temp.grid().check_same(ozone.grid(), "training pairs")?;
    if temp.ntime() != ozone.ntime() {
        return Err(MlozError::Structural(format!(
            "series lengths differ: {} vs {}",
            temp.ntime(),
            ozone.ntime()
        )));
    }
    let grid = temp.grid();
    if lat >= grid.nlat() || lon >= grid.nlon() {
        return Err(MlozError::Input(format!("column ({lat}, {lon}) outside grid")));
    }
    if temp.ntime() < 2 {
        return Err(MlozError::InsufficientData(format!(
            "lagged pairs need at least 2 days, got {}",
            temp.ntime()
        )));
    }
    let nfeat = grid.cap_level_index();
    let nsamples = temp.ntime() - 1;
    let mut x = Vec::with_capacity(nsamples * nfeat);
    let mut y = Vec::with_capacity(nsamples * nfeat);
    for d in 1..temp.ntime() {
        x.extend_from_slice(&temp.column(d - 1, lat, lon)[..nfeat]);
        y.extend_from_slice(&ozone.column(d, lat, lon)[..nfeat]);
    }
    Ok(TrainingPairs {
        grid: grid.clone(),
        lat,
        lon,
        nsamples,
        nfeat,
        x,
        y,
        sample_day_index: (1..temp.ntime()).collect(),
    })
}
