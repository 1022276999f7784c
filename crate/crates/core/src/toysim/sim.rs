use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::config::OzoneMode;
use super::world::{substream, Stream, World};
use crate::climatology::{Climatology, ClimatologyKind, DAYS_PER_YEAR};
use crate::engine::{predict_field, InferenceContext};
use crate::error::{MlozError, Result};
use crate::eval::global_mean;
use crate::field::{FieldSeries, Variable, TEMPERATURE_RANGE_K};
use crate::trainer::CoefficientSet;
use crate::transfer::{transfer_predict, RecalibrationParams, VerticalMap};

/// Prognostic state at the end of one model day.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub day: usize,
    pub temperature: Vec<f64>,
    pub ozone: Vec<f64>,
    pub qbo_phase: f64,
    /// Temperature departure from the background climatology.
    pub noise_state: Vec<f64>,
}

impl SimState {
    /// Day 0: background temperature and reference ozone.
    pub fn initial(world: &World) -> Self {
        let phase = world.qbo_phase(0);
        SimState {
            day: 0,
            temperature: world.background_temperature(0, phase),
            ozone: world.ozone_reference(0),
            qbo_phase: phase,
            noise_state: vec![0.0; world.config().grid.npoints()],
        }
    }
}

/// Where each day's ozone comes from.
#[derive(Debug, Clone, Copy)]
pub enum OzoneSource<'a> {
    Truth,
    FixedClimatology,
    Mloz(&'a CoefficientSet),
    Transferred {
        coeffs: &'a CoefficientSet,
        map: &'a VerticalMap,
        recal: &'a RecalibrationParams,
        /// Ozone climatology on the world grid for the near-surface levels.
        fill: &'a Climatology,
    },
}

impl OzoneSource<'_> {
    pub fn mode(&self) -> OzoneMode {
        match self {
            OzoneSource::Truth => OzoneMode::Truth,
            OzoneSource::FixedClimatology => OzoneMode::FixedClimatology,
            OzoneSource::Mloz(_) => OzoneMode::Mloz,
            OzoneSource::Transferred { .. } => OzoneMode::TransferredMloz,
        }
    }

    fn provide(&self, world: &World, temp_prev: &[f64], day: usize, qbo_phase: f64) -> Result<Vec<f64>> {
        let block = world.config().block_size;
        let doy = day % DAYS_PER_YEAR;
        match *self {
            OzoneSource::Truth => Ok(world.truth_ozone(temp_prev, day, qbo_phase)),
            OzoneSource::FixedClimatology => Ok(world.ozone_reference(day)),
            OzoneSource::Mloz(coeffs) => predict_field(temp_prev, &InferenceContext::new(coeffs, block, doy)?),
            OzoneSource::Transferred {
                coeffs,
                map,
                recal,
                fill,
            } => transfer_predict(temp_prev, map, recal, &InferenceContext::new(coeffs, block, doy)?, fill),
        }
    }

    fn check(&self, world: &World) -> Result<()> {
        let grid = &world.config().grid;
        match self {
            OzoneSource::Mloz(c) => grid.check_same(c.grid(), "mloz coefficients vs world"),
            OzoneSource::Transferred { fill, .. } => grid.check_same(fill.grid(), "fill climatology vs world"),
            _ => Ok(()),
        }
    }
}

/// Advances the coupled system by one day. Temperature on day `t + 1`
/// relaxes towards the background climatology, feels CO₂ forcing, red
/// noise and the previous day's ozone anomaly; ozone on day `t + 1` comes
/// from `source` given the temperature of day `t`.
pub fn step_day(world: &World, state: &SimState, source: &OzoneSource<'_>) -> Result<SimState> {
    step_timed(world, state, source, &world.forcing()).map(|(s, _)| s)
}

fn step_timed(world: &World, state: &SimState, source: &OzoneSource<'_>, forcing: &[f64]) -> Result<(SimState, f64)> {
    let cfg = world.config();
    let grid = &cfg.grid;
    let nlev = grid.nlev();
    let next_day = state.day + 1;
    let next_phase = world.qbo_phase(next_day);
    let base_now = world.background_temperature(state.day, state.qbo_phase);
    let base_next = world.background_temperature(next_day, next_phase);
    let o3_ref = world.ozone_reference(state.day);

    let mut rng = substream(cfg.seed, Stream::Temperature, next_day as u64);
    let mut temperature = vec![0.0; grid.npoints()];
    let mut noise_state = vec![0.0; grid.npoints()];
    for p in 0..grid.npoints() {
        let lev = p % nlev;
        let eps: f64 = StandardNormal.sample(&mut rng);
        let anomaly = cfg.ar1_coeff * (state.temperature[p] - base_now[p])
            + forcing[lev]
            + cfg.noise_std_k * eps
            + cfg.feedback_gain[lev] * (state.ozone[p] - o3_ref[p]);
        noise_state[p] = anomaly;
        temperature[p] = base_next[p] + anomaly;
    }
    let (lo, hi) = TEMPERATURE_RANGE_K;
    if let Some(p) = temperature.iter().position(|t| !(*t > lo && *t < hi)) {
        return Err(MlozError::Numeric(format!(
            "temperature {} at point {p} on day {next_day} left the valid range",
            temperature[p]
        )));
    }

    let started = Instant::now();
    let ozone = source.provide(world, &state.temperature, next_day, next_phase)?;
    let provider_secs = started.elapsed().as_secs_f64();
    if let Some(p) = ozone.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(MlozError::Numeric(format!(
            "invalid ozone {} at point {p} on day {next_day}",
            ozone[p]
        )));
    }
    Ok((
        SimState {
            day: next_day,
            temperature,
            ozone,
            qbo_phase: next_phase,
            noise_state,
        },
        provider_secs,
    ))
}

/// Online summaries of a coupled run.
#[derive(Debug, Clone, Serialize)]
pub struct RunDiagnostics {
    pub ndays: usize,
    pub spinup_days: usize,
    /// Area-weighted mean over all levels, one value per day.
    pub global_mean_ozone: Vec<f64>,
    pub global_mean_temperature: Vec<f64>,
    /// Post-spin-up time means and population standard deviations per
    /// point (empty if the run is all spin-up).
    #[serde(skip)]
    pub ozone_mean: Vec<f64>,
    #[serde(skip)]
    pub ozone_std: Vec<f64>,
    #[serde(skip)]
    pub temperature_mean: Vec<f64>,
    pub min_ozone: f64,
    pub negative_ozone_count: usize,
    pub nonfinite_count: usize,
    pub step_seconds: f64,
    pub provider_seconds: f64,
}

impl RunDiagnostics {
    /// Fraction of coupled-step time spent producing ozone.
    pub fn provider_share(&self) -> f64 {
        if self.step_seconds > 0.0 {
            self.provider_seconds / self.step_seconds
        } else {
            0.0
        }
    }
}

/// Archives (if requested) and diagnostics of one run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub temperature: Option<FieldSeries>,
    pub ozone: Option<FieldSeries>,
    pub diagnostics: RunDiagnostics,
    grid: crate::grid::GridSpec,
}

impl Experiment {
    /// Post-spin-up annual-mean ozone.
    pub fn ozone_climatology(&self) -> Result<Climatology> {
        self.mean_climatology(&self.diagnostics.ozone_mean, Variable::Ozone)
    }

    /// Post-spin-up annual-mean temperature.
    pub fn temperature_climatology(&self) -> Result<Climatology> {
        self.mean_climatology(&self.diagnostics.temperature_mean, Variable::Temperature)
    }

    fn mean_climatology(&self, values: &[f64], var: Variable) -> Result<Climatology> {
        if values.is_empty() {
            return Err(MlozError::InsufficientData("run has no days after spin-up".into()));
        }
        Climatology::from_values(self.grid.clone(), ClimatologyKind::Annual, var, values.to_vec())
    }
}

#[derive(Default)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn add(&mut self, x: &[f64]) {
        if self.mean.is_empty() {
            self.mean = vec![0.0; x.len()];
            self.m2 = vec![0.0; x.len()];
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn std(&self) -> Vec<f64> {
        self.m2.iter().map(|s| (s / self.n.max(1) as f64).sqrt()).collect()
    }
}

/// Runs `years` of 365 days (day 0 is the initial state). The first year is
/// spin-up and is excluded from the per-point statistics.
pub fn run_experiment(world: &World, years: usize, source: &OzoneSource<'_>, archive: bool) -> Result<Experiment> {
    let cfg = world.config();
    if years == 0 {
        return Err(MlozError::config("years", "must be at least 1"));
    }
    if source.mode() != cfg.ozone_mode {
        return Err(MlozError::config(
            "ozone_mode",
            format!(
                "configured {:?} but the run supplies {:?}",
                cfg.ozone_mode,
                source.mode()
            ),
        ));
    }
    source.check(world)?;
    let grid = cfg.grid.clone();
    let ndays = years * DAYS_PER_YEAR;
    let spinup = DAYS_PER_YEAR.min(ndays);
    let forcing = world.forcing();
    let weights = grid.area_weights();

    let mut temp_arch = archive.then(|| FieldSeries::empty(grid.clone(), Variable::Temperature));
    let mut ozone_arch = archive.then(|| FieldSeries::empty(grid.clone(), Variable::Ozone));
    let mut diag = RunDiagnostics {
        ndays,
        spinup_days: spinup,
        global_mean_ozone: Vec::with_capacity(ndays),
        global_mean_temperature: Vec::with_capacity(ndays),
        ozone_mean: Vec::new(),
        ozone_std: Vec::new(),
        temperature_mean: Vec::new(),
        min_ozone: f64::INFINITY,
        negative_ozone_count: 0,
        nonfinite_count: 0,
        step_seconds: 0.0,
        provider_seconds: 0.0,
    };
    let mut o3_moments = Moments::default();
    let mut t_moments = Moments::default();

    let mut state = SimState::initial(world);
    for t in 0..ndays {
        if t > 0 {
            let started = Instant::now();
            let (next, provider) = step_timed(world, &state, source, &forcing)?;
            diag.step_seconds += started.elapsed().as_secs_f64();
            diag.provider_seconds += provider;
            state = next;
        }
        diag.global_mean_ozone.push(global_mean(&state.ozone, &grid, &weights));
        diag.global_mean_temperature
            .push(global_mean(&state.temperature, &grid, &weights));
        for &v in &state.ozone {
            if !v.is_finite() {
                diag.nonfinite_count += 1;
            } else if v < 0.0 {
                diag.negative_ozone_count += 1;
            }
            diag.min_ozone = diag.min_ozone.min(v);
        }
        diag.nonfinite_count += state.temperature.iter().filter(|v| !v.is_finite()).count();
        if t >= spinup {
            o3_moments.add(&state.ozone);
            t_moments.add(&state.temperature);
        }
        if let (Some(ta), Some(oa)) = (temp_arch.as_mut(), ozone_arch.as_mut()) {
            ta.push_day(&state.temperature)?;
            oa.push_day(&state.ozone)?;
        }
    }
    diag.ozone_std = o3_moments.std();
    diag.ozone_mean = o3_moments.mean;
    diag.temperature_mean = t_moments.mean;
    Ok(Experiment {
        temperature: temp_arch.map(|s| s.with_spinup_days(spinup)),
        ozone: ozone_arch.map(|s| s.with_spinup_days(spinup)),
        diagnostics: diag,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::toysim::config::{world_a_levels, WorldConfig};

    fn world(mode: OzoneMode) -> World {
        let grid = GridSpec::regular(4, 1, world_a_levels()).unwrap();
        World::new(WorldConfig::on_grid(grid, 5).with_mode(mode)).unwrap()
    }

    #[test]
    fn quiet_world_stays_on_climatology() {
        let grid = GridSpec::regular(3, 1, world_a_levels()).unwrap();
        let mut cfg = WorldConfig::on_grid(grid, 9);
        cfg.feedback_gain.iter_mut().for_each(|g| *g = 0.0);
        cfg.noise_std_k = 0.0;
        let w = World::new(cfg).unwrap();
        let mut s = SimState::initial(&w);
        for _ in 0..50 {
            s = step_day(&w, &s, &OzoneSource::Truth).unwrap();
            assert_eq!(s.temperature, w.background_temperature(s.day, s.qbo_phase));
        }
    }

    #[test]
    fn fixed_mode_is_reference_ozone() {
        let w = world(OzoneMode::FixedClimatology);
        let mut s = SimState::initial(&w);
        for _ in 0..10 {
            s = step_day(&w, &s, &OzoneSource::FixedClimatology).unwrap();
            assert_eq!(s.ozone, w.ozone_reference(s.day));
        }
    }

    #[test]
    fn one_year_is_all_spinup() {
        let w = world(OzoneMode::Truth);
        let e = run_experiment(&w, 1, &OzoneSource::Truth, true).unwrap();
        let o = e.ozone.clone().unwrap();
        assert_eq!(o.ntime(), 365);
        assert_eq!(o.spinup_days(), 365);
        assert!(e.diagnostics.ozone_mean.is_empty());
        assert!(e.ozone_climatology().is_err());
    }

    #[test]
    fn reruns_are_identical() {
        let w = world(OzoneMode::Truth);
        let a = run_experiment(&w, 1, &OzoneSource::Truth, true).unwrap();
        let b = run_experiment(&w, 1, &OzoneSource::Truth, true).unwrap();
        assert_eq!(a.temperature, b.temperature);
        assert_eq!(a.ozone, b.ozone);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let w = world(OzoneMode::Truth);
        assert!(matches!(
            run_experiment(&w, 1, &OzoneSource::FixedClimatology, false),
            Err(MlozError::Config { .. })
        ));
    }
}
