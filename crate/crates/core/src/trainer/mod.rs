//! Per-grid-point ridge regression from the temperature column to ozone.
//!
//! Each output point gets its own standardized ridge model. Inputs are the
//! `N = cap_level_index` temperatures of the same column on the previous
//! day; alpha is chosen by contiguous-block cross-validation and the final
//! coefficients are refitted on every sample.

mod cv;
mod ridge;
mod scaling;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, fold_ranges, select_alpha, CvResult, CV_TIE_RTOL};
pub use ridge::{ridge_objective, ridge_solve, RidgeSolution, SolveMethod};
pub use scaling::{feature_moments, fit_scaling, target_moments, ScalingParams, DEFAULT_STD_FLOOR};

use crate::climatology::{compute_climatology, Climatology, ClimatologyKind};
use crate::dataset::{build_training_pairs, TrainingPairs};
use crate::error::{MlozError, Result};
use crate::field::{FieldSeries, Variable};
use crate::grid::GridSpec;
use cv::ColumnSolver;
pub(crate) use scaling::standardize_into;

/// 13 log-spaced values from 1e-4 to 1e8.
pub fn default_alpha_grid() -> Vec<f64> {
    (-4..=8).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub alpha_grid: Vec<f64>,
    pub nfolds: usize,
    pub std_floor: f64,
    pub cap_clim_kind: ClimatologyKind,
    pub source_tag: String,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            alpha_grid: default_alpha_grid(),
            nfolds: 3,
            std_floor: DEFAULT_STD_FLOOR,
            cap_clim_kind: ClimatologyKind::DayOfYear,
            source_tag: String::new(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        cv::check_alpha_grid(&self.alpha_grid)?;
        if self.nfolds < 2 {
            return Err(MlozError::config("nfolds", "need at least 2 folds"));
        }
        if !(self.std_floor > 0.0) {
            return Err(MlozError::config("std_floor", "must be positive"));
        }
        Ok(())
    }
}

/// Trained ridge model for one output point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// Coefficients on standardized inputs.
    pub coeffs: Vec<f64>,
    pub alpha: f64,
    pub scaling: ScalingParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub alpha_grid: Vec<f64>,
    pub nfolds: usize,
    pub nsamples: usize,
    pub source_tag: String,
}

/// Fits the model for output level `level_out` of one column.
pub fn train_grid_point(pairs: &TrainingPairs, level_out: usize, config: &TrainerConfig) -> Result<RidgeModel> {
    config.validate()?;
    if level_out >= pairs.nout() {
        return Err(MlozError::Input(format!(
            "output level {level_out} outside 0..{}",
            pairs.nout()
        )));
    }
    let column = ColumnFit::new(pairs, config)?;
    column.fit_level(pairs, level_out, config)
}

struct ColumnFit {
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    solver: ColumnSolver,
}

impl ColumnFit {
    fn new(pairs: &TrainingPairs, config: &TrainerConfig) -> Result<Self> {
        let nfeat = pairs.nfeat();
        if pairs.nsamples() < 2 {
            return Err(MlozError::InsufficientData(format!(
                "scaling needs at least 2 samples, got {}",
                pairs.nsamples()
            )));
        }
        if pairs.nsamples() < config.nfolds {
            return Err(MlozError::InsufficientData(format!(
                "{} samples cannot be split into {} folds",
                pairs.nsamples(),
                config.nfolds
            )));
        }
        if pairs.x().iter().chain(pairs.y()).any(|v| !v.is_finite()) {
            return Err(MlozError::Input("non-finite training value".into()));
        }
        let (x_mean, x_std) = feature_moments(pairs.x(), nfeat, config.std_floor);
        let mut xs = vec![0.0; pairs.x().len()];
        for (src, dst) in pairs.x().chunks_exact(nfeat).zip(xs.chunks_exact_mut(nfeat)) {
            standardize_into(src, &x_mean, &x_std, dst);
        }
        let solver = ColumnSolver::new(xs, nfeat, &config.alpha_grid, config.nfolds)?;
        Ok(ColumnFit { x_mean, x_std, solver })
    }

    fn fit_level(&self, pairs: &TrainingPairs, level: usize, config: &TrainerConfig) -> Result<RidgeModel> {
        let y = pairs.target(level);
        let (y_mean, y_std) = target_moments(&y, config.std_floor);
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
        let (cv, coeffs) = self.solver.fit(&ys)?;
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(MlozError::Numeric(format!(
                "non-finite ridge coefficients at column {:?}, level {level}",
                pairs.location()
            )));
        }
        Ok(RidgeModel {
            coeffs,
            alpha: cv.best_alpha,
            scaling: ScalingParams {
                x_mean: self.x_mean.clone(),
                x_std: self.x_std.clone(),
                y_mean,
                y_std,
            },
        })
    }
}

/// All trained models of a grid plus the climatology used above the
/// prediction ceiling.
///
/// Storage is flat and point-major: `coeffs[col][lev_out][feat]`,
/// `alpha`/`y_mean`/`y_std` as `[col][lev_out]` and input scaling as
/// `[col][feat]` (inputs of one column are shared by all its levels).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    grid: GridSpec,
    coeffs: Vec<f64>,
    alpha: Vec<f64>,
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    y_mean: Vec<f64>,
    y_std: Vec<f64>,
    cap_climatology: Climatology,
    meta: TrainingMeta,
}

/// Raw parts of a [`CoefficientSet`], in storage order.
#[derive(Debug, Clone)]
pub struct CoefficientParts {
    pub coeffs: Vec<f64>,
    pub alpha: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl CoefficientSet {
    pub fn from_parts(
        grid: GridSpec,
        parts: CoefficientParts,
        mut cap_climatology: Climatology,
        meta: TrainingMeta,
    ) -> Result<Self> {
        let ncols = grid.ncols();
        let n = grid.cap_level_index();
        let checks = [
            ("coeffs", parts.coeffs.len(), ncols * n * n),
            ("alpha", parts.alpha.len(), ncols * n),
            ("x_mean", parts.x_mean.len(), ncols * n),
            ("x_std", parts.x_std.len(), ncols * n),
            ("y_mean", parts.y_mean.len(), ncols * n),
            ("y_std", parts.y_std.len(), ncols * n),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(MlozError::Structural(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        let all = [
            &parts.coeffs,
            &parts.alpha,
            &parts.x_mean,
            &parts.x_std,
            &parts.y_mean,
            &parts.y_std,
        ];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(MlozError::Input("non-finite coefficient data".into()));
        }
        if parts.x_std.iter().chain(&parts.y_std).any(|s| *s <= 0.0) {
            return Err(MlozError::Input("standard deviations must be positive".into()));
        }
        if parts.alpha.iter().any(|a| *a < 0.0) {
            return Err(MlozError::Input("negative alpha".into()));
        }
        if cap_climatology.grid() != &grid || cap_climatology.variable() != Variable::Ozone {
            return Err(MlozError::Structural(
                "cap climatology must be an ozone climatology on the coefficient grid".into(),
            ));
        }
        cap_climatology.zero_below(n);
        Ok(CoefficientSet {
            grid,
            coeffs: parts.coeffs,
            alpha: parts.alpha,
            x_mean: parts.x_mean,
            x_std: parts.x_std,
            y_mean: parts.y_mean,
            y_std: parts.y_std,
            cap_climatology,
            meta,
        })
    }

    /// Assembles a set from per-point models listed in `[col][lev_out]`
    /// order. Models of one column must share their input scaling.
    pub fn from_models(
        grid: GridSpec,
        models: &[RidgeModel],
        cap_climatology: Climatology,
        meta: TrainingMeta,
    ) -> Result<Self> {
        let n = grid.cap_level_index();
        if models.len() != grid.ncols() * n {
            return Err(MlozError::Structural(format!(
                "expected {} models, got {}",
                grid.ncols() * n,
                models.len()
            )));
        }
        let mut p = CoefficientParts {
            coeffs: Vec::with_capacity(models.len() * n),
            alpha: Vec::with_capacity(models.len()),
            x_mean: Vec::with_capacity(models.len()),
            x_std: Vec::with_capacity(models.len()),
            y_mean: Vec::with_capacity(models.len()),
            y_std: Vec::with_capacity(models.len()),
        };
        for col in models.chunks(n) {
            let first = &col[0].scaling;
            for m in col {
                if m.coeffs.len() != n || m.scaling.x_mean != first.x_mean || m.scaling.x_std != first.x_std {
                    return Err(MlozError::Structural(
                        "models of a column must have N coefficients and shared input scaling".into(),
                    ));
                }
                p.coeffs.extend_from_slice(&m.coeffs);
                p.alpha.push(m.alpha);
                p.y_mean.push(m.scaling.y_mean);
                p.y_std.push(m.scaling.y_std);
            }
            p.x_mean.extend_from_slice(&first.x_mean);
            p.x_std.extend_from_slice(&first.x_std);
        }
        CoefficientSet::from_parts(grid, p, cap_climatology, meta)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of input features and predicted levels (N).
    pub fn nfeat(&self) -> usize {
        self.grid.cap_level_index()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn x_mean(&self) -> &[f64] {
        &self.x_mean
    }

    pub fn x_std(&self) -> &[f64] {
        &self.x_std
    }

    pub fn y_mean(&self) -> &[f64] {
        &self.y_mean
    }

    pub fn y_std(&self) -> &[f64] {
        &self.y_std
    }

    pub fn cap_climatology(&self) -> &Climatology {
        &self.cap_climatology
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn set_meta(&mut self, meta: TrainingMeta) {
        self.meta = meta;
    }

    /// Coefficients of column `col`, `[lev_out][feat]`.
    pub fn column_coeffs(&self, col: usize) -> &[f64] {
        let n = self.nfeat();
        &self.coeffs[col * n * n..(col + 1) * n * n]
    }

    pub fn model(&self, lat: usize, lon: usize, lev: usize) -> RidgeModel {
        let n = self.nfeat();
        let col = self.grid.column_index(lat, lon);
        let p = col * n + lev;
        RidgeModel {
            coeffs: self.coeffs[p * n..(p + 1) * n].to_vec(),
            alpha: self.alpha[p],
            scaling: ScalingParams {
                x_mean: self.x_mean[col * n..(col + 1) * n].to_vec(),
                x_std: self.x_std[col * n..(col + 1) * n].to_vec(),
                y_mean: self.y_mean[p],
                y_std: self.y_std[p],
            },
        }
    }
}

/// Trains every output point of the grid.
///
/// Columns are processed in parallel on the current rayon pool; the result
/// does not depend on the number of threads.
pub fn train_all(temp: &FieldSeries, ozone: &FieldSeries, config: &TrainerConfig) -> Result<CoefficientSet> {
    config.validate()?;
    temp.grid().check_same(ozone.grid(), "train_all")?;
    let grid = temp.grid().clone();
    let n = grid.cap_level_index();
    let columns: Vec<(usize, usize)> = (0..grid.nlat())
        .flat_map(|i| (0..grid.nlon()).map(move |j| (i, j)))
        .collect();
    let fitted: Vec<Vec<RidgeModel>> = columns
        .par_iter()
        .map(|&(lat, lon)| {
            let pairs = build_training_pairs(temp, ozone, lat, lon)?;
            let column = ColumnFit::new(&pairs, config)?;
            (0..n).map(|lev| column.fit_level(&pairs, lev, config)).collect()
        })
        .collect::<Result<_>>()?;
    let models: Vec<RidgeModel> = fitted.into_iter().flatten().collect();

    let cap_climatology = compute_climatology(ozone, config.cap_clim_kind)?;
    let meta = TrainingMeta {
        alpha_grid: config.alpha_grid.clone(),
        nfolds: config.nfolds,
        nsamples: temp.ntime() - 1,
        source_tag: config.source_tag.clone(),
    };
    CoefficientSet::from_models(grid, &models, cap_climatology, meta)
}
