//! End-to-end experiments on the synthetic worlds: training, coupled
//! stability, climatology and response fidelity, radiative feedback and
//! cross-grid transfer.

use std::time::Instant;

use serde::Serialize;

use crate::climatology::{Climatology, ClimatologyKind};
use crate::error::{MlozError, Result};
use crate::eval::{
    drift_of_series, max_abs_bias, percent_bias, response_field, Band, DriftReport, STRATOSPHERE,
    TROPICAL_LOWER_STRATOSPHERE, UPPER_STRATOSPHERE,
};
use crate::field::Variable;
use crate::grid::GridSpec;
use crate::toysim::{make_world_pair, run_experiment, Experiment, OzoneMode, OzoneSource, World, WorldConfig};
use crate::trainer::{train_all, CoefficientSet, TrainerConfig};
use crate::transfer::{
    build_vertical_map, recalibrate_scaling, RecalibrationParams, VerticalMap, DEFAULT_FILL_THRESHOLD_M,
};

/// Run lengths in years; every run starts with one spin-up year.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Truth run used for training (training uses the years after spin-up).
    pub train_years: usize,
    /// Coupled piCTRL stability run.
    pub stability_years: usize,
    /// 4×CO₂ and feedback runs.
    pub response_years: usize,
    /// Host-world run with prescribed ozone for recalibration statistics.
    pub recal_years: usize,
    pub transfer_years: usize,
    pub drift_threshold_pct: f64,
    pub bias_threshold_pct: f64,
    pub transfer_bias_threshold_pct: f64,
    pub sign_fraction: f64,
    pub feedback_tolerance: f64,
    pub trainer: TrainerConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 20_240_917,
            train_years: 11,
            stability_years: 50,
            response_years: 11,
            recal_years: 6,
            transfer_years: 11,
            drift_threshold_pct: 1.0,
            bias_threshold_pct: 10.0,
            transfer_bias_threshold_pct: 10.0,
            sign_fraction: 0.9,
            feedback_tolerance: 0.25,
            trainer: TrainerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub drift: DriftReport,
    pub negative_ozone: usize,
    pub nonfinite: usize,
    pub min_ozone: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandSigns {
    pub band: Band,
    pub expected_sign: f64,
    pub points: usize,
    pub truth_fraction: f64,
    pub mloz_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeedbackReport {
    /// Area-weighted mean temperature change in the upper band, K.
    pub truth_cooling_k: f64,
    pub mloz_cooling_k: f64,
    pub fixed_cooling_k: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub recalibrated_max_bias_pct: f64,
    pub unrecalibrated_max_bias_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Everything measured by [`run_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub stability: StabilityReport,
    pub stratosphere_max_bias_pct: f64,
    pub response_signs: Vec<BandSigns>,
    pub feedback: FeedbackReport,
    pub transfer: TransferReport,
    /// Share of coupled-step time spent in ozone prediction (mloz piCTRL run).
    pub prediction_share: f64,
    pub timings: Vec<PhaseTiming>,
    pub criteria: Vec<CriterionResult>,
}

/// Intermediate products kept for inspection and export.
pub struct SuiteArtifacts {
    pub coeffs: CoefficientSet,
    pub truth_pi: Experiment,
    pub mloz_pi: Experiment,
    pub truth_4x: Experiment,
    pub mloz_4x: Experiment,
    pub fixed_pi: Experiment,
    pub fixed_4x: Experiment,
    pub transfer_recal: Experiment,
    pub transfer_plain: Experiment,
    pub transfer_reference: Climatology,
}

fn band_mean(values: &[f64], grid: &GridSpec, band: &Band) -> f64 {
    let w = grid.area_weights();
    let nlev = grid.nlev();
    let (mut num, mut den) = (0.0, 0.0);
    for p in band.points(grid) {
        num += w[p / nlev] * values[p];
        den += w[p / nlev];
    }
    num / den
}

fn sign_fraction(response: &[f64], points: &[usize], sign: f64) -> f64 {
    let hits = points.iter().filter(|&&p| response[p] * sign > 0.0).count();
    hits as f64 / points.len().max(1) as f64
}

/// Interpolates an annual climatology down to the host grid with the
/// map's linear weights (no fill).
pub(crate) fn interpolate_down(clim: &Climatology, map: &VerticalMap, dst: &GridSpec) -> Result<Climatology> {
    let ns = clim.grid().nlev();
    let mut values = Vec::with_capacity(dst.npoints());
    for col in clim.field(0).chunks_exact(ns) {
        values.extend(
            map.linear_weights()
                .iter()
                .map(|w| w.w_lo * col[w.lo] + w.w_hi * col[w.hi]),
        );
    }
    Climatology::from_values(dst.clone(), ClimatologyKind::Annual, Variable::Ozone, values)
}

struct Timer(Vec<PhaseTiming>);

impl Timer {
    fn run<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        let seconds = t.elapsed().as_secs_f64();
        tracing::info!(phase, seconds, "suite phase finished");
        self.0.push(PhaseTiming {
            phase: phase.to_string(),
            seconds,
        });
        Ok(out)
    }
}

/// Runs every experiment and evaluates the pre-registered criteria.
pub fn run_suite(config: &SuiteConfig) -> Result<(SuiteReport, SuiteArtifacts)> {
    if config.train_years < 2 || config.stability_years < 5 || config.response_years < 2 || config.recal_years < 2 {
        return Err(MlozError::config("suite", "run lengths too short"));
    }
    let mut timer = Timer(Vec::new());
    let (cfg_a, cfg_b) = make_world_pair(&WorldConfig::desk(config.seed))?;
    let world = |c: &WorldConfig, mode: OzoneMode, co2: f64| World::new(c.clone().with_mode(mode).with_co2(co2));

    let truth_world = world(&cfg_a, OzoneMode::Truth, 1.0)?;
    let truth_pi = timer.run("truth piCTRL", || {
        run_experiment(&truth_world, config.train_years, &OzoneSource::Truth, true)
    })?;
    let coeffs = timer.run("train", || {
        let t = truth_pi.temperature.as_ref().expect("archived").after_spinup()?;
        let o = truth_pi.ozone.as_ref().expect("archived").after_spinup()?;
        train_all(&t, &o, &config.trainer)
    })?;

    let mloz = OzoneSource::Mloz(&coeffs);
    let mloz_pi = timer.run("mloz piCTRL", || {
        run_experiment(
            &world(&cfg_a, OzoneMode::Mloz, 1.0)?,
            config.stability_years,
            &mloz,
            false,
        )
    })?;
    let truth_4x = timer.run("truth 4xCO2", || {
        run_experiment(
            &world(&cfg_a, OzoneMode::Truth, 4.0)?,
            config.response_years,
            &OzoneSource::Truth,
            false,
        )
    })?;
    let mloz_4x = timer.run("mloz 4xCO2", || {
        run_experiment(
            &world(&cfg_a, OzoneMode::Mloz, 4.0)?,
            config.response_years,
            &mloz,
            false,
        )
    })?;
    let fixed = OzoneSource::FixedClimatology;
    let fixed_pi = timer.run("fixed piCTRL", || {
        run_experiment(
            &world(&cfg_a, OzoneMode::FixedClimatology, 1.0)?,
            config.response_years,
            &fixed,
            false,
        )
    })?;
    let fixed_4x = timer.run("fixed 4xCO2", || {
        run_experiment(
            &world(&cfg_a, OzoneMode::FixedClimatology, 4.0)?,
            config.response_years,
            &fixed,
            false,
        )
    })?;

    // Transfer into the host world.
    let world_b_fixed = world(&cfg_b, OzoneMode::FixedClimatology, 1.0)?;
    let map = build_vertical_map(coeffs.grid(), &cfg_b.grid, DEFAULT_FILL_THRESHOLD_M)?;
    let recal = timer.run("host recalibration run", || {
        let run = run_experiment(&world_b_fixed, config.recal_years, &fixed, true)?;
        let t = run.temperature.as_ref().expect("archived").after_spinup()?;
        recalibrate_scaling(&t, &map, &coeffs, config.trainer.std_floor)
    })?;
    let plain = RecalibrationParams::from_coefficients(&coeffs);
    let world_b = world(&cfg_b, OzoneMode::TransferredMloz, 1.0)?;
    let fill = world_b.reference_climatology()?;
    let transfer_run = |r: &RecalibrationParams| {
        run_experiment(
            &world_b,
            config.transfer_years,
            &OzoneSource::Transferred {
                coeffs: &coeffs,
                map: &map,
                recal: r,
                fill: &fill,
            },
            false,
        )
    };
    let transfer_recal = timer.run("transfer recalibrated", || transfer_run(&recal))?;
    let transfer_plain = timer.run("transfer without recalibration", || transfer_run(&plain))?;

    // Criterion 3: stability.
    let d = &mloz_pi.diagnostics;
    let drift = drift_of_series(&d.global_mean_ozone, d.spinup_days, config.drift_threshold_pct)?;
    let stability = StabilityReport {
        drift,
        negative_ozone: d.negative_ozone_count,
        nonfinite: d.nonfinite_count,
        min_ozone: d.min_ozone,
    };

    // Criterion 4: climatology fidelity.
    let grid_a = &cfg_a.grid;
    let truth_clim = truth_pi.ozone_climatology()?;
    let bias = percent_bias(&mloz_pi.ozone_climatology()?, &truth_clim)?;
    let strat_points = STRATOSPHERE.points(grid_a);
    let strat_bias = max_abs_bias(&bias, &strat_points).unwrap_or(f64::INFINITY);

    // Criterion 5: response sign pattern.
    let truth_resp = response_field(&truth_4x.ozone_climatology()?, &truth_clim)?;
    let mloz_resp = response_field(&mloz_4x.ozone_climatology()?, &mloz_pi.ozone_climatology()?)?;
    let response_signs: Vec<BandSigns> = [(UPPER_STRATOSPHERE, 1.0), (TROPICAL_LOWER_STRATOSPHERE, -1.0)]
        .into_iter()
        .map(|(band, sign)| {
            let pts = band.points(grid_a);
            BandSigns {
                band,
                expected_sign: sign,
                points: pts.len(),
                truth_fraction: sign_fraction(&truth_resp, &pts, sign),
                mloz_fraction: sign_fraction(&mloz_resp, &pts, sign),
            }
        })
        .collect();

    // Criterion 6: feedback on upper-stratospheric cooling.
    let cooling = |a: &Experiment, b: &Experiment| -> Result<f64> {
        let r = response_field(&a.temperature_climatology()?, &b.temperature_climatology()?)?;
        Ok(band_mean(&r, grid_a, &UPPER_STRATOSPHERE))
    };
    let feedback = FeedbackReport {
        truth_cooling_k: cooling(&truth_4x, &truth_pi)?,
        mloz_cooling_k: cooling(&mloz_4x, &mloz_pi)?,
        fixed_cooling_k: cooling(&fixed_4x, &fixed_pi)?,
    };

    // Criterion 7: transfer.
    let transfer_reference = interpolate_down(&truth_clim, &map, &cfg_b.grid)?;
    let strat_b = STRATOSPHERE.points(&cfg_b.grid);
    let transfer_bias = |e: &Experiment| -> Result<f64> {
        let b = percent_bias(&e.ozone_climatology()?, &transfer_reference)?;
        Ok(max_abs_bias(&b, &strat_b).unwrap_or(f64::INFINITY))
    };
    let transfer = TransferReport {
        recalibrated_max_bias_pct: transfer_bias(&transfer_recal)?,
        unrecalibrated_max_bias_pct: transfer_bias(&transfer_plain)?,
    };

    let mut criteria = Vec::new();
    criteria.push(CriterionResult {
        id: 3,
        name: "online stability".into(),
        pass: stability.drift.pass && stability.negative_ozone == 0 && stability.nonfinite == 0,
        detail: format!(
            "{} years, trend {:+.4} %/decade (limit {}), negative {}, non-finite {}",
            config.stability_years,
            stability.drift.trend_per_decade_pct,
            config.drift_threshold_pct,
            stability.negative_ozone,
            stability.nonfinite
        ),
    });
    criteria.push(CriterionResult {
        id: 4,
        name: "climatology fidelity".into(),
        pass: strat_bias < config.bias_threshold_pct,
        detail: format!(
            "max |bias| 16-50 km {:.3} % (limit {})",
            strat_bias, config.bias_threshold_pct
        ),
    });
    criteria.push(CriterionResult {
        id: 5,
        name: "response sign pattern".into(),
        pass: response_signs
            .iter()
            .all(|b| b.mloz_fraction >= config.sign_fraction && b.points > 0),
        detail: response_signs
            .iter()
            .map(|b| {
                format!(
                    "{}: mloz {:.3}, truth {:.3} of {} points",
                    b.band.name, b.mloz_fraction, b.truth_fraction, b.points
                )
            })
            .collect::<Vec<_>>()
            .join("; "),
    });
    let f = &feedback;
    criteria.push(CriterionResult {
        id: 6,
        name: "feedback direction".into(),
        pass: f.mloz_cooling_k.abs() < f.fixed_cooling_k.abs()
            && (f.mloz_cooling_k - f.truth_cooling_k).abs() <= config.feedback_tolerance * f.truth_cooling_k.abs(),
        detail: format!(
            "upper-band dT: mloz {:.3} K, fixed {:.3} K, truth {:.3} K",
            f.mloz_cooling_k, f.fixed_cooling_k, f.truth_cooling_k
        ),
    });
    criteria.push(CriterionResult {
        id: 7,
        name: "transfer fidelity".into(),
        pass: transfer.recalibrated_max_bias_pct < config.transfer_bias_threshold_pct
            && transfer.recalibrated_max_bias_pct < transfer.unrecalibrated_max_bias_pct,
        detail: format!(
            "max |bias| 16-50 km: recalibrated {:.3} %, without recalibration {:.3} % (limit {})",
            transfer.recalibrated_max_bias_pct,
            transfer.unrecalibrated_max_bias_pct,
            config.transfer_bias_threshold_pct
        ),
    });

    let report = SuiteReport {
        config: config.clone(),
        stability,
        stratosphere_max_bias_pct: strat_bias,
        response_signs,
        feedback,
        transfer,
        prediction_share: mloz_pi.diagnostics.provider_share(),
        timings: timer.0,
        criteria,
    };
    let artifacts = SuiteArtifacts {
        coeffs,
        truth_pi,
        mloz_pi,
        truth_4x,
        mloz_4x,
        fixed_pi,
        fixed_4x,
        transfer_recal,
        transfer_plain,
        transfer_reference,
    };
    Ok((report, artifacts))
}
