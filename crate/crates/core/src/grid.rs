use serde::{Deserialize, Serialize};

use crate::error::{MlozError, Result};

/// Height above which ozone is taken from climatology instead of predicted.
pub const PREDICTION_CEILING_M: f64 = 50_000.0;

/// Horizontal and vertical grid geometry.
///
/// Arrays living on a grid are dense, row-major `[lat][lon][lev]` with the
/// level index fastest, so every column is a contiguous slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridDoc", into = "GridDoc")]
pub struct GridSpec {
    level_height_m: Vec<f64>,
    lat_deg: Vec<f64>,
    lon_deg: Vec<f64>,
    cap_level_index: usize,
}

#[derive(Serialize, Deserialize)]
struct GridDoc {
    level_height_m: Vec<f64>,
    lat_deg: Vec<f64>,
    lon_deg: Vec<f64>,
}

impl TryFrom<GridDoc> for GridSpec {
    type Error = MlozError;

    fn try_from(doc: GridDoc) -> Result<Self> {
        GridSpec::new(doc.level_height_m, doc.lat_deg, doc.lon_deg)
    }
}

impl From<GridSpec> for GridDoc {
    fn from(g: GridSpec) -> Self {
        GridDoc {
            level_height_m: g.level_height_m,
            lat_deg: g.lat_deg,
            lon_deg: g.lon_deg,
        }
    }
}

impl GridSpec {
    pub fn new(level_height_m: Vec<f64>, lat_deg: Vec<f64>, lon_deg: Vec<f64>) -> Result<Self> {
        if level_height_m.is_empty() || lat_deg.is_empty() || lon_deg.is_empty() {
            return Err(MlozError::Structural(
                "grid needs at least one latitude, longitude and level".into(),
            ));
        }
        if level_height_m.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(MlozError::Structural(
                "level heights must be finite and non-negative".into(),
            ));
        }
        if level_height_m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MlozError::Structural(
                "level heights must be strictly increasing".into(),
            ));
        }
        if lat_deg.iter().chain(&lon_deg).any(|v| !v.is_finite()) {
            return Err(MlozError::Structural("non-finite coordinate".into()));
        }
        let cap_level_index = level_height_m
            .iter()
            .position(|&h| h >= PREDICTION_CEILING_M)
            .unwrap_or(level_height_m.len());
        if cap_level_index == 0 {
            return Err(MlozError::Structural(
                "lowest level already lies above the prediction ceiling".into(),
            ));
        }
        Ok(GridSpec {
            level_height_m,
            lat_deg,
            lon_deg,
            cap_level_index,
        })
    }

    /// Grid with `nlat` equally spaced cell-centre latitudes and `nlon`
    /// equally spaced longitudes starting at 0°.
    pub fn regular(nlat: usize, nlon: usize, level_height_m: Vec<f64>) -> Result<Self> {
        let lat = (0..nlat)
            .map(|i| -90.0 + (i as f64 + 0.5) * 180.0 / nlat as f64)
            .collect();
        let lon = (0..nlon).map(|j| j as f64 * 360.0 / nlon as f64).collect();
        GridSpec::new(level_height_m, lat, lon)
    }

    pub fn nlat(&self) -> usize {
        self.lat_deg.len()
    }

    pub fn nlon(&self) -> usize {
        self.lon_deg.len()
    }

    pub fn nlev(&self) -> usize {
        self.level_height_m.len()
    }

    /// Number of horizontal columns.
    pub fn ncols(&self) -> usize {
        self.nlat() * self.nlon()
    }

    /// Points in one 3-D field.
    pub fn npoints(&self) -> usize {
        self.ncols() * self.nlev()
    }

    /// First level at or above 50 km; also the number of input features and
    /// predicted levels.
    pub fn cap_level_index(&self) -> usize {
        self.cap_level_index
    }

    pub fn level_height_m(&self) -> &[f64] {
        &self.level_height_m
    }

    pub fn lat_deg(&self) -> &[f64] {
        &self.lat_deg
    }

    pub fn lon_deg(&self) -> &[f64] {
        &self.lon_deg
    }

    pub fn column_index(&self, lat: usize, lon: usize) -> usize {
        lat * self.nlon() + lon
    }

    pub fn flat_index(&self, lat: usize, lon: usize, lev: usize) -> usize {
        self.column_index(lat, lon) * self.nlev() + lev
    }

    /// Same horizontal mesh (latitudes and longitudes bit-equal).
    pub fn same_horizontal(&self, other: &GridSpec) -> bool {
        self.lat_deg == other.lat_deg && self.lon_deg == other.lon_deg
    }

    /// Normalized cos(latitude) weights per column, summing to 1.
    pub fn area_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.ncols());
        for lat in &self.lat_deg {
            let c = lat.to_radians().cos().max(0.0);
            w.extend(std::iter::repeat_n(c, self.nlon()));
        }
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|v| *v /= total);
        } else {
            let u = 1.0 / w.len() as f64;
            w.iter_mut().for_each(|v| *v = u);
        }
        w
    }

    /// Indices of levels whose height lies in `[lo_m, hi_m)`.
    pub fn levels_in_band(&self, lo_m: f64, hi_m: f64) -> Vec<usize> {
        self.level_height_m
            .iter()
            .enumerate()
            .filter(|(_, &h)| h >= lo_m && h < hi_m)
            .map(|(k, _)| k)
            .collect()
    }

    pub(crate) fn check_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(MlozError::Structural(format!("{what}: grids differ")));
        }
        Ok(())
    }
}
