use serde::{Deserialize, Serialize};

use crate::error::{MlozError, Result};
use crate::grid::GridSpec;

/// Which ozone the coupled run feeds back into the temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OzoneMode {
    Truth,
    Mloz,
    FixedClimatology,
    TransferredMloz,
}

/// Parameters of the synthetic truth chemistry.
///
/// `O3 = B(z, lat)·[1 + a1·S + a2·Q·sin(qbo) + a3·s(z)·(T − T0)/σ_T]₊·(1 + η·ε)`
/// with `B` a layer peaking at `peak_height_m`, `S` the hemispheric seasonal
/// index and `s(z)` a coupling that is positive in the lower stratosphere and
/// negative above `sign_flip_height_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChemistryParams {
    pub background_vmr: f64,
    pub peak_vmr: f64,
    /// Reduction of the peak towards the poles (∝ sin² lat).
    pub polar_reduction_vmr: f64,
    pub peak_height_m: f64,
    pub width_below_m: f64,
    pub width_above_m: f64,
    pub seasonal_coupling: f64,
    pub qbo_coupling: f64,
    pub temperature_coupling: f64,
    pub sigma_t_k: f64,
    pub sign_flip_height_m: f64,
    pub sign_flip_width_m: f64,
    /// Temperature coupling fades out below this height.
    pub taper_height_m: f64,
    pub taper_width_m: f64,
    /// Relative standard deviation of the multiplicative noise.
    pub noise_rel: f64,
}

impl Default for ChemistryParams {
    fn default() -> Self {
        ChemistryParams {
            background_vmr: 3e-8,
            peak_vmr: 9e-6,
            polar_reduction_vmr: 3e-6,
            peak_height_m: 32_000.0,
            width_below_m: 9_000.0,
            width_above_m: 11_000.0,
            seasonal_coupling: 0.03,
            qbo_coupling: 0.03,
            temperature_coupling: 0.15,
            sigma_t_k: 4.0,
            sign_flip_height_m: 32_500.0,
            sign_flip_width_m: 2_500.0,
            taper_height_m: 12_000.0,
            taper_width_m: 1_500.0,
            noise_rel: 0.01,
        }
    }
}

/// Background climate of the world: a smoothed lapse-rate profile with a
/// seasonal cycle and a downward-propagating QBO-like wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClimateParams {
    pub surface_temp_k: f64,
    /// Surface cooling towards the poles (∝ sin² lat).
    pub polar_surface_drop_k: f64,
    pub lapse_rate_k_per_km: f64,
    pub tropopause_equator_m: f64,
    /// Lowering of the tropopause towards the poles (∝ sin² lat).
    pub tropopause_polar_drop_m: f64,
    pub strat_gradient_k_per_km: f64,
    pub stratopause_m: f64,
    pub meso_lapse_k_per_km: f64,
    pub smoothing_m: f64,
    pub seasonal_amp_surface_k: f64,
    pub seasonal_amp_top_k: f64,
    pub qbo_amplitude_k: f64,
    pub qbo_center_m: f64,
    pub qbo_depth_m: f64,
    pub qbo_wavelength_m: f64,
    pub qbo_lat_width_deg: f64,
}

impl Default for ClimateParams {
    fn default() -> Self {
        ClimateParams {
            surface_temp_k: 300.0,
            polar_surface_drop_k: 45.0,
            lapse_rate_k_per_km: 6.5,
            tropopause_equator_m: 16_000.0,
            tropopause_polar_drop_m: 7_000.0,
            strat_gradient_k_per_km: 2.0,
            stratopause_m: 48_000.0,
            meso_lapse_k_per_km: 2.5,
            smoothing_m: 1_500.0,
            seasonal_amp_surface_k: 3.0,
            seasonal_amp_top_k: 5.0,
            qbo_amplitude_k: 3.0,
            qbo_center_m: 27_000.0,
            qbo_depth_m: 6_000.0,
            qbo_wavelength_m: 14_000.0,
            qbo_lat_width_deg: 15.0,
        }
    }
}

/// Complete description of one synthetic world and experiment.
///
/// Per-level profiles have one value per grid level. `forcing_profile` is
/// the per-day temperature increment at 4×CO₂ (it scales with
/// `(co2_multiplier − 1)/3`); the equilibrium response is
/// `forcing_profile / (1 − ar1_coeff)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub grid: GridSpec,
    pub seed: u64,
    #[serde(default = "one")]
    pub co2_multiplier: f64,
    /// γ·h(z), in K per unit vmr.
    pub feedback_gain: Vec<f64>,
    pub forcing_profile: Vec<f64>,
    /// Offset added to the background temperature climatology.
    #[serde(default)]
    pub temp_offset_k: Vec<f64>,
    #[serde(default = "default_qbo_period")]
    pub qbo_period_days: f64,
    #[serde(default = "default_ar1")]
    pub ar1_coeff: f64,
    #[serde(rename = "noise_std_K", default = "default_noise")]
    pub noise_std_k: f64,
    #[serde(default = "default_mode")]
    pub ozone_mode: OzoneMode,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default)]
    pub chemistry: ChemistryParams,
    #[serde(default)]
    pub climate: ClimateParams,
}

fn one() -> f64 {
    1.0
}
fn default_qbo_period() -> f64 {
    800.0
}
fn default_ar1() -> f64 {
    0.8
}
fn default_noise() -> f64 {
    1.2
}
fn default_mode() -> OzoneMode {
    OzoneMode::Truth
}
fn default_block_size() -> usize {
    8
}

/// Peak of the feedback gain in K per unit vmr.
pub const DEFAULT_FEEDBACK_GAIN: f64 = 1.0e6;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Default γ·h(z): switched on in the middle and upper stratosphere.
pub fn default_feedback_gain(z_m: f64) -> f64 {
    DEFAULT_FEEDBACK_GAIN * sigmoid((z_m - 32_000.0) / 2_500.0)
}

/// Equilibrium 4×CO₂ temperature response: +3 K in the troposphere,
/// cooling from about −2 K above the tropopause to −10 K at 45 km.
pub fn co2_equilibrium_response(z_m: f64) -> f64 {
    let m = sigmoid((z_m - 13_000.0) / 1_200.0);
    let r = ((z_m - 15_000.0) / 30_000.0).clamp(0.0, 1.0);
    3.0 * (1.0 - m) + m * (-2.0 - 8.0 * r)
}

/// World B's climatological temperature offset: +2 K in the troposphere,
/// −3 K in the stratosphere.
pub fn world_b_offset(z_m: f64) -> f64 {
    2.0 - 5.0 * sigmoid((z_m - 13_000.0) / 2_000.0)
}

/// Level heights of the 76-level training world.
pub fn world_a_levels() -> Vec<f64> {
    (0..76)
        .map(|k| 62_000.0 * ((k as f64 + 0.5) / 76.0).powf(1.4))
        .collect()
}

/// Level heights of the 71-level host world; six levels lie below 270 m.
pub fn world_b_levels() -> Vec<f64> {
    (0..71)
        .map(|k| 10.0 + 64_000.0 * (k as f64 / 70.0).powf(2.15))
        .collect()
}

impl WorldConfig {
    /// A world on `grid` with default dynamics and profiles evaluated at
    /// the grid heights.
    pub fn on_grid(grid: GridSpec, seed: u64) -> Self {
        let ar1 = default_ar1();
        let z = grid.level_height_m();
        WorldConfig {
            feedback_gain: z.iter().map(|&h| default_feedback_gain(h)).collect(),
            forcing_profile: z.iter().map(|&h| (1.0 - ar1) * co2_equilibrium_response(h)).collect(),
            temp_offset_k: vec![0.0; z.len()],
            grid,
            seed,
            co2_multiplier: 1.0,
            qbo_period_days: default_qbo_period(),
            ar1_coeff: ar1,
            noise_std_k: default_noise(),
            ozone_mode: default_mode(),
            block_size: default_block_size(),
            chemistry: ChemistryParams::default(),
            climate: ClimateParams::default(),
        }
    }

    /// The zonal desk-scale training world: 48 latitudes, one longitude, 76
    /// levels.
    pub fn desk(seed: u64) -> Self {
        let grid = GridSpec::regular(48, 1, world_a_levels()).expect("static grid is valid");
        WorldConfig::on_grid(grid, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let nlev = self.grid.nlev();
        for (name, v) in [
            ("feedback_gain", &self.feedback_gain),
            ("forcing_profile", &self.forcing_profile),
        ] {
            if v.len() != nlev {
                return Err(MlozError::config(
                    name,
                    format!("expected {nlev} values, got {}", v.len()),
                ));
            }
        }
        if !self.temp_offset_k.is_empty() && self.temp_offset_k.len() != nlev {
            return Err(MlozError::config(
                "temp_offset_k",
                format!("expected {nlev} values or none, got {}", self.temp_offset_k.len()),
            ));
        }
        let profiles = self
            .feedback_gain
            .iter()
            .chain(&self.forcing_profile)
            .chain(&self.temp_offset_k);
        if profiles.into_iter().any(|v| !v.is_finite()) {
            return Err(MlozError::config("profiles", "values must be finite"));
        }
        if !(0.0..1.0).contains(&self.ar1_coeff) {
            return Err(MlozError::config("ar1_coeff", "must lie in [0, 1)"));
        }
        if !(self.noise_std_k >= 0.0 && self.noise_std_k.is_finite()) {
            return Err(MlozError::config("noise_std_K", "must be finite and >= 0"));
        }
        if !(self.qbo_period_days > 0.0 && self.qbo_period_days.is_finite()) {
            return Err(MlozError::config("qbo_period_days", "must be positive"));
        }
        if !(self.co2_multiplier > 0.0 && self.co2_multiplier.is_finite()) {
            return Err(MlozError::config("co2_multiplier", "must be positive"));
        }
        if self.block_size == 0 {
            return Err(MlozError::config("block_size", "must be at least 1"));
        }
        let c = &self.chemistry;
        if !(c.sigma_t_k > 0.0) || !(c.width_below_m > 0.0) || !(c.width_above_m > 0.0) {
            return Err(MlozError::config("chemistry", "widths and sigma_t_k must be positive"));
        }
        if !(c.sign_flip_width_m > 0.0) || !(c.taper_width_m > 0.0) || !(c.noise_rel >= 0.0) {
            return Err(MlozError::config(
                "chemistry",
                "widths must be positive and noise_rel >= 0",
            ));
        }
        let k = &self.climate;
        if !(k.smoothing_m > 0.0)
            || !(k.qbo_depth_m > 0.0)
            || !(k.qbo_wavelength_m > 0.0)
            || !(k.qbo_lat_width_deg > 0.0)
        {
            return Err(MlozError::config("climate", "widths must be positive"));
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: OzoneMode) -> Self {
        self.ozone_mode = mode;
        self
    }

    pub fn with_co2(mut self, multiplier: f64) -> Self {
        self.co2_multiplier = multiplier;
        self
    }
}

/// Derives the training world (76 levels) and the host world (71 levels,
/// shifted temperature climatology) from one base configuration. Both keep
/// the base horizontal grid, seed, dynamics and chemistry.
pub fn make_world_pair(base: &WorldConfig) -> Result<(WorldConfig, WorldConfig)> {
    let lat = base.grid.lat_deg().to_vec();
    let lon = base.grid.lon_deg().to_vec();
    let build = |levels: Vec<f64>, offset: fn(f64) -> f64| -> Result<WorldConfig> {
        let grid = GridSpec::new(levels, lat.clone(), lon.clone())?;
        let z = grid.level_height_m().to_vec();
        let mut w = WorldConfig::on_grid(grid, base.seed);
        w.co2_multiplier = base.co2_multiplier;
        w.qbo_period_days = base.qbo_period_days;
        w.ar1_coeff = base.ar1_coeff;
        w.noise_std_k = base.noise_std_k;
        w.ozone_mode = base.ozone_mode;
        w.block_size = base.block_size;
        w.chemistry = base.chemistry.clone();
        w.climate = base.climate.clone();
        w.forcing_profile = z
            .iter()
            .map(|&h| (1.0 - w.ar1_coeff) * co2_equilibrium_response(h))
            .collect();
        w.temp_offset_k = z.iter().map(|&h| offset(h)).collect();
        Ok(w)
    };
    Ok((
        build(world_a_levels(), |_| 0.0)?,
        build(world_b_levels(), world_b_offset)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_counts_and_cap() {
        let a = world_a_levels();
        let b = world_b_levels();
        assert_eq!((a.len(), b.len()), (76, 71));
        assert_eq!(b.iter().filter(|&&z| z < 270.0).count(), 6);
        let g = GridSpec::regular(48, 1, a).unwrap();
        assert_eq!(g.cap_level_index(), 65);
    }

    #[test]
    fn forcing_changes_sign() {
        assert!(co2_equilibrium_response(5_000.0) > 2.5);
        assert!(co2_equilibrium_response(16_000.0) < 0.0);
        assert!((co2_equilibrium_response(45_000.0) + 10.0).abs() < 1e-6);
    }

    #[test]
    fn json_round_trip_and_paths() {
        let c = WorldConfig::desk(7);
        let text = serde_json::to_string(&c).unwrap();
        let back: WorldConfig = crate::store::parse_json(&text).unwrap();
        assert_eq!(back, c);
        let bad = text.replace("\"ar1_coeff\":0.8", "\"ar1_coeff\":\"x\"");
        match crate::store::parse_json::<WorldConfig>(&bad) {
            Err(MlozError::Config { path, .. }) => assert_eq!(path, "ar1_coeff"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation() {
        let mut c = WorldConfig::desk(1);
        c.ar1_coeff = 1.0;
        assert!(c.validate().is_err());
        let mut c = WorldConfig::desk(1);
        c.feedback_gain.pop();
        assert!(c.validate().is_err());
        assert!(WorldConfig::desk(1).validate().is_ok());
    }

    #[test]
    fn pair_offsets() {
        let (a, b) = make_world_pair(&WorldConfig::desk(3)).unwrap();
        assert_eq!(a.grid.nlev(), 76);
        assert_eq!(b.grid.nlev(), 71);
        assert!(a.temp_offset_k.iter().all(|&v| v == 0.0));
        assert!((b.temp_offset_k[0] - 2.0).abs() < 0.01);
        assert!((b.temp_offset_k[60] + 3.0).abs() < 0.01);
        assert_eq!(a.grid.lat_deg(), b.grid.lat_deg());
    }
}
