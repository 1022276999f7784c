use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::WorldConfig;
use crate::climatology::{Climatology, ClimatologyKind, DAYS_PER_YEAR};
use crate::error::Result;
use crate::field::Variable;

/// Named random substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Temperature = 2,
    Chemistry = 3,
}

/// Independent generator for `(seed, stream, day)`. Different experiments
/// with the same seed therefore draw identical noise on identical days.
pub fn substream(seed: u64, stream: Stream, day: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    key[16..24].copy_from_slice(&day.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Day of peak northern-hemisphere summer.
const SOLSTICE_DAY: f64 = 172.0;

/// `cos(2π(doy − 172)/365)`.
pub fn seasonal_cycle(day: usize) -> f64 {
    let doy = (day % DAYS_PER_YEAR) as f64;
    (2.0 * PI * (doy - SOLSTICE_DAY) / DAYS_PER_YEAR as f64).cos()
}

/// Precomputed, longitude-independent profiles of a configured world.
///
/// Per-point arrays are `[lat][lev]`.
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    initial_qbo_phase: f64,
    sin_lat: Vec<f64>,
    /// Annual-mean temperature of the world (background plus offset).
    t_clim: Vec<f64>,
    /// Chemistry reference temperature (background without offset).
    t_ref: Vec<f64>,
    seasonal_t: Vec<f64>,
    qbo_t_cos: Vec<f64>,
    qbo_t_sin: Vec<f64>,
    base_o3: Vec<f64>,
    /// a3·s(z)/σ_T, per K.
    coupling: Vec<f64>,
    /// a2·Q(z, lat).
    qbo_o3: Vec<f64>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let g = &config.grid;
        let (nlat, nlev) = (g.nlat(), g.nlev());
        let k = &config.climate;
        let c = &config.chemistry;
        let mut w = World {
            initial_qbo_phase: {
                let mut rng = substream(config.seed, Stream::Init, 0);
                2.0 * PI * rand::Rng::random::<f64>(&mut rng)
            },
            sin_lat: g.lat_deg().iter().map(|l| l.to_radians().sin()).collect(),
            t_clim: Vec::with_capacity(nlat * nlev),
            t_ref: Vec::with_capacity(nlat * nlev),
            seasonal_t: Vec::with_capacity(nlat * nlev),
            qbo_t_cos: Vec::with_capacity(nlat * nlev),
            qbo_t_sin: Vec::with_capacity(nlat * nlev),
            base_o3: Vec::with_capacity(nlat * nlev),
            coupling: Vec::with_capacity(nlat * nlev),
            qbo_o3: Vec::with_capacity(nlat * nlev),
            config: config.clone(),
        };
        let top = g.level_height_m()[nlev - 1].max(1.0);
        for (i, &lat) in g.lat_deg().iter().enumerate() {
            let s2 = w.sin_lat[i] * w.sin_lat[i];
            let ts = k.surface_temp_k - k.polar_surface_drop_k * s2;
            let ztp = (k.tropopause_equator_m - k.tropopause_polar_drop_m * s2) / 1000.0;
            let sm = k.smoothing_m / 1000.0;
            let zsp = k.stratopause_m / 1000.0;
            let lat_env = (-(lat / k.qbo_lat_width_deg).powi(2)).exp();
            for (lev, &z) in g.level_height_m().iter().enumerate() {
                let zk = z / 1000.0;
                let t0 = ts - k.lapse_rate_k_per_km * zk
                    + (k.lapse_rate_k_per_km + k.strat_gradient_k_per_km) * sm * softplus((zk - ztp) / sm)
                    - (k.strat_gradient_k_per_km + k.meso_lapse_k_per_km) * sm * softplus((zk - zsp) / sm);
                let offset = config.temp_offset_k.get(lev).copied().unwrap_or(0.0);
                w.t_ref.push(t0);
                w.t_clim.push(t0 + offset);
                let ramp = (z / top).clamp(0.0, 1.0);
                w.seasonal_t.push(
                    w.sin_lat[i]
                        * (k.seasonal_amp_surface_k + (k.seasonal_amp_top_k - k.seasonal_amp_surface_k) * ramp),
                );
                let env = lat_env * (-((z - k.qbo_center_m) / k.qbo_depth_m).powi(2)).exp();
                // A·sin(φ − θ) = A cos θ · sin φ − A sin θ · cos φ
                let theta = 2.0 * PI * (z - 20_000.0) / k.qbo_wavelength_m;
                w.qbo_t_cos.push(k.qbo_amplitude_k * env * theta.cos());
                w.qbo_t_sin.push(k.qbo_amplitude_k * env * theta.sin());

                let width = if z < c.peak_height_m {
                    c.width_below_m
                } else {
                    c.width_above_m
                };
                let peak = c.peak_vmr - c.polar_reduction_vmr * s2;
                w.base_o3
                    .push(c.background_vmr + peak * (-((z - c.peak_height_m) / width).powi(2)).exp());
                let sign = ((c.sign_flip_height_m - z) / c.sign_flip_width_m).tanh();
                let taper = 1.0 / (1.0 + (-(z - c.taper_height_m) / c.taper_width_m).exp());
                w.coupling.push(c.temperature_coupling * sign * taper / c.sigma_t_k);
                w.qbo_o3.push(c.qbo_coupling * env);
            }
        }
        Ok(w)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn initial_qbo_phase(&self) -> f64 {
        self.initial_qbo_phase
    }

    /// QBO phase on `day`.
    pub fn qbo_phase(&self, day: usize) -> f64 {
        self.initial_qbo_phase + 2.0 * PI * day as f64 / self.config.qbo_period_days
    }

    fn for_each_point(&self, mut f: impl FnMut(usize, usize, usize)) {
        let g = &self.config.grid;
        let nlev = g.nlev();
        let mut p = 0;
        for i in 0..g.nlat() {
            for _ in 0..g.nlon() {
                for lev in 0..nlev {
                    f(p, i, i * nlev + lev);
                    p += 1;
                }
            }
        }
    }

    /// Temperature climatology including the seasonal cycle and the QBO wave
    /// at `qbo_phase`.
    pub fn background_temperature(&self, day: usize, qbo_phase: f64) -> Vec<f64> {
        let season = seasonal_cycle(day);
        let (sp, cp) = qbo_phase.sin_cos();
        let mut out = vec![0.0; self.config.grid.npoints()];
        self.for_each_point(|p, _, q| {
            out[p] = self.t_clim[q] + self.seasonal_t[q] * season + self.qbo_t_cos[q] * sp - self.qbo_t_sin[q] * cp;
        });
        out
    }

    /// Annual-mean temperature profile, `[lat][lon][lev]`.
    pub fn annual_temperature(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.config.grid.npoints()];
        self.for_each_point(|p, _, q| out[p] = self.t_clim[q]);
        out
    }

    /// Reference ozone `B·(1 + a1·S + a3·s·T_seasonal/σ_T)₊`: the truth
    /// chemistry evaluated at the seasonal temperature climatology without
    /// QBO or noise.
    pub fn ozone_reference(&self, day: usize) -> Vec<f64> {
        let season = seasonal_cycle(day);
        let a1 = self.config.chemistry.seasonal_coupling;
        let mut out = vec![0.0; self.config.grid.npoints()];
        self.for_each_point(|p, i, q| {
            let f = 1.0 + a1 * self.sin_lat[i] * season + self.coupling[q] * self.seasonal_t[q] * season;
            out[p] = self.base_o3[q] * f.max(0.0);
        });
        out
    }

    /// Day-of-year climatology of [`World::ozone_reference`].
    pub fn reference_climatology(&self) -> Result<Climatology> {
        let days: Vec<Vec<f64>> = (0..DAYS_PER_YEAR).map(|d| self.ozone_reference(d)).collect();
        Climatology::from_fn(
            self.config.grid.clone(),
            ClimatologyKind::DayOfYear,
            Variable::Ozone,
            |d, p| days[d.min(DAYS_PER_YEAR - 1)][p],
        )
    }

    /// Base ozone profile `B(z, lat)` on the full grid.
    pub fn base_ozone(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.config.grid.npoints()];
        self.for_each_point(|p, _, q| out[p] = self.base_o3[q]);
        out
    }

    /// Truth chemistry: ozone on `day` given the temperature the chemistry
    /// responds to and the QBO phase. Noise comes from the chemistry
    /// substream of `day`.
    pub fn truth_ozone(&self, temperature: &[f64], day: usize, qbo_phase: f64) -> Vec<f64> {
        let season = seasonal_cycle(day);
        let c = &self.config.chemistry;
        let sq = qbo_phase.sin();
        let mut rng = substream(self.config.seed, Stream::Chemistry, day as u64);
        let mut out = vec![0.0; self.config.grid.npoints()];
        self.for_each_point(|p, i, q| {
            let f = 1.0
                + c.seasonal_coupling * self.sin_lat[i] * season
                + self.qbo_o3[q] * sq
                + self.coupling[q] * (temperature[p] - self.t_ref[q]);
            let eps: f64 = StandardNormal.sample(&mut rng);
            out[p] = (self.base_o3[q] * f.max(0.0) * (1.0 + c.noise_rel * eps)).max(0.0);
        });
        out
    }

    /// Per-level temperature increment from CO₂ forcing.
    pub fn forcing(&self) -> Vec<f64> {
        let scale = (self.config.co2_multiplier - 1.0) / 3.0;
        self.config.forcing_profile.iter().map(|f| f * scale).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn small() -> World {
        let grid = GridSpec::regular(6, 2, super::super::config::world_a_levels()).unwrap();
        World::new(WorldConfig::on_grid(grid, 11)).unwrap()
    }

    #[test]
    fn profile_is_physical() {
        let w = small();
        let t = w.annual_temperature();
        assert!(t.iter().all(|&v| v > 150.0 && v < 320.0));
        let o = w.base_ozone();
        let nlev = 76;
        let peak = (0..nlev).max_by(|&a, &b| o[a].total_cmp(&o[b])).unwrap();
        let z = w.config().grid.level_height_m()[peak];
        assert!((28_000.0..36_000.0).contains(&z));
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        use rand::Rng;
        let a: u64 = substream(1, Stream::Temperature, 5).random();
        let b: u64 = substream(1, Stream::Temperature, 5).random();
        let c: u64 = substream(1, Stream::Chemistry, 5).random();
        let d: u64 = substream(1, Stream::Temperature, 6).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn reference_temperature_without_couplings() {
        let grid = GridSpec::regular(4, 1, super::super::config::world_a_levels()).unwrap();
        let mut cfg = WorldConfig::on_grid(grid, 2);
        cfg.chemistry.qbo_coupling = 0.0;
        cfg.chemistry.noise_rel = 0.0;
        let w = World::new(cfg).unwrap();
        let t = w.annual_temperature();
        let day = 30;
        let o = w.truth_ozone(&t, day, 1.234);
        let b = w.base_ozone();
        let s = seasonal_cycle(day);
        for i in 0..4 {
            let sl = w.config().grid.lat_deg()[i].to_radians().sin();
            for lev in 0..76 {
                let p = i * 76 + lev;
                let want = b[p] * (1.0 + 0.03 * sl * s);
                assert!((o[p] - want).abs() <= 1e-15 * want.max(1e-30) + 1e-22);
            }
        }
    }

    #[test]
    fn warming_upper_stratosphere_lowers_ozone() {
        let w = small();
        let mut t = w.background_temperature(100, 0.3);
        let lev = w
            .config()
            .grid
            .level_height_m()
            .iter()
            .position(|&z| z > 42_000.0)
            .unwrap();
        let before = w.truth_ozone(&t, 101, 0.3)[lev];
        t[lev] += 4.0;
        let after = w.truth_ozone(&t, 101, 0.3)[lev];
        assert!(after < before);
    }
}
