//! Command-line front end: generate, train, predict, simulate, evaluate and
//! bench. Configuration comes from JSON files; flags given on the command
//! line override the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{run_bench, BenchOptions};
use crate::checks::run_property_checks;
use crate::climatology::{compute_climatology, Climatology, ClimatologyKind, DAYS_PER_YEAR};
use crate::engine::{predict_field, InferenceContext};
use crate::error::{MlozError, Result};
use crate::eval::{
    column_ozone, drift_test, export_plot_data, kde_pdf, max_abs_bias, percent_bias, std_map, MetricReport,
    STRATOSPHERE,
};
use crate::field::{FieldSeries, Variable};
use crate::grid::GridSpec;
use crate::store::{
    meta_sidecar_path, read_coefficients, read_fields, read_json, write_coefficients, write_fields, write_json,
};
use crate::suite::{run_suite, CriterionResult, PhaseTiming, SuiteConfig};
use crate::toysim::{
    make_world_pair, run_experiment, ChemistryParams, ClimateParams, Experiment, OzoneMode, OzoneSource, World,
    WorldConfig,
};
use crate::trainer::{train_all, CoefficientSet, TrainerConfig};
use crate::transfer::{
    build_vertical_map, recalibrate_scaling, transfer_predict, RecalibrationParams, DEFAULT_FILL_THRESHOLD_M,
};

/// Exit code when acceptance criteria fail but nothing errored.
pub const EXIT_CRITERIA_FAILED: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mloz", version, about = "Machine-learned ozone parameterization toolkit")]
pub struct Cli {
    /// Worker threads for training and inference (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a truth-chemistry (or prescribed-ozone) world and archive it.
    Generate(GenerateArgs),
    /// Fit per-grid-point ridge models from temperature and ozone archives.
    Train(TrainArgs),
    /// Predict next-day ozone for every day of a temperature archive.
    Predict(PredictArgs),
    /// Run a coupled experiment.
    Simulate(SimulateArgs),
    /// Compare a run against a reference, or run the acceptance bundle.
    Evaluate(EvaluateArgs),
    /// Measure inference throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorldChoice {
    /// 76-level training world.
    #[default]
    A,
    /// 71-level host world with shifted temperature climatology.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Truth,
    Mloz,
    Fixed,
    Transferred,
}

impl From<ModeArg> for OzoneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Truth => OzoneMode::Truth,
            ModeArg::Mloz => OzoneMode::Mloz,
            ModeArg::Fixed => OzoneMode::FixedClimatology,
            ModeArg::Transferred => OzoneMode::TransferredMloz,
        }
    }
}

/// World description accepted by `generate` and `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldFile {
    pub world: WorldChoice,
    pub seed: u64,
    pub nlat: usize,
    pub nlon: usize,
    pub years: usize,
    pub co2_multiplier: f64,
    pub qbo_period_days: f64,
    pub ar1_coeff: f64,
    #[serde(rename = "noise_std_K")]
    pub noise_std_k: f64,
    pub block_size: usize,
    pub chemistry: ChemistryParams,
    pub climate: ClimateParams,
}

impl Default for WorldFile {
    fn default() -> Self {
        let d = WorldConfig::desk(0);
        WorldFile {
            world: WorldChoice::A,
            seed: 20_240_917,
            nlat: 48,
            nlon: 1,
            years: 11,
            co2_multiplier: 1.0,
            qbo_period_days: d.qbo_period_days,
            ar1_coeff: d.ar1_coeff,
            noise_std_k: d.noise_std_k,
            block_size: d.block_size,
            chemistry: d.chemistry,
            climate: d.climate,
        }
    }
}

impl WorldFile {
    /// The selected world of the pair; profiles follow its grid.
    pub fn build(&self, mode: OzoneMode) -> Result<WorldConfig> {
        let (a, b) = self.build_pair(mode)?;
        Ok(match self.world {
            WorldChoice::A => a,
            WorldChoice::B => b,
        })
    }

    pub fn build_pair(&self, mode: OzoneMode) -> Result<(WorldConfig, WorldConfig)> {
        if self.nlat == 0 || self.nlon == 0 {
            return Err(MlozError::config(
                "nlat",
                "grid needs at least one latitude and longitude",
            ));
        }
        let mut base = WorldConfig::desk(self.seed);
        base.grid = GridSpec::regular(self.nlat, self.nlon, base.grid.level_height_m().to_vec())?;
        base.co2_multiplier = self.co2_multiplier;
        base.qbo_period_days = self.qbo_period_days;
        base.ar1_coeff = self.ar1_coeff;
        base.noise_std_k = self.noise_std_k;
        base.block_size = self.block_size;
        base.chemistry = self.chemistry.clone();
        base.climate = self.climate.clone();
        base.ozone_mode = mode;
        let (a, b) = make_world_pair(&base)?;
        a.validate()?;
        b.validate()?;
        Ok((a, b))
    }
}

#[derive(Debug, Args)]
pub struct WorldFlags {
    /// World JSON file; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub world: Option<WorldChoice>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub years: Option<usize>,
    #[arg(long)]
    pub co2: Option<f64>,
}

impl WorldFlags {
    fn resolve(&self) -> Result<WorldFile> {
        let mut w: WorldFile = match &self.config {
            Some(p) => read_json(p)?,
            None => WorldFile::default(),
        };
        if let Some(v) = self.world {
            w.world = v;
        }
        if let Some(v) = self.seed {
            w.seed = v;
        }
        if let Some(v) = self.years {
            w.years = v;
        }
        if let Some(v) = self.co2 {
            w.co2_multiplier = v;
        }
        if w.years == 0 {
            return Err(MlozError::config("years", "must be at least 1"));
        }
        Ok(w)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub world: WorldFlags,
    /// Ozone source: truth chemistry or the fixed reference climatology.
    #[arg(long, value_enum, default_value = "truth")]
    pub mode: ModeArg,
    /// Temperature and ozone archive paths.
    #[arg(long, num_args = 2, value_names = ["TEMP", "OZONE"], required = true)]
    pub out: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub temp: PathBuf,
    #[arg(long)]
    pub ozone: PathBuf,
    /// Trainer JSON file; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated ascending alpha grid.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub source_tag: Option<String>,
    /// Also train on the spin-up days stored in the archives.
    #[arg(long)]
    pub include_spinup: bool,
    /// Hold out the last N years and report skill on them.
    #[arg(long, default_value_t = 0)]
    pub holdout_years: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub coeffs: PathBuf,
    /// Daily-mean temperature archive; day t yields ozone for day t+1.
    #[arg(long)]
    pub temp: PathBuf,
    /// Host temperature archive for recalibration when grids differ.
    #[arg(long)]
    pub recal_temp: Option<PathBuf>,
    /// Host ozone archive whose climatology fills the near-surface levels
    /// when grids differ.
    #[arg(long)]
    pub fill_ozone: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FILL_THRESHOLD_M)]
    pub fill_threshold_m: f64,
    #[arg(long, default_value_t = 64)]
    pub block_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub world: WorldFlags,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Coefficients for `mloz` and `transferred` modes.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Length of the prescribed-ozone host run used for recalibration.
    #[arg(long, default_value_t = 6)]
    pub recal_years: usize,
    /// Skip recalibration in `transferred` mode.
    #[arg(long)]
    pub no_recal: bool,
    /// Reference ozone archive for the transfer bias report (default: a
    /// truth run of the training world of the same length).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Temperature and ozone archive paths.
    #[arg(long, num_args = 2, value_names = ["TEMP", "OZONE"])]
    pub out: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ozone archive under test.
    #[arg(long, required_unless_present = "acceptance")]
    pub run: Option<PathBuf>,
    /// Reference ozone archive.
    #[arg(long, required_unless_present = "acceptance")]
    pub truth: Option<PathBuf>,
    /// Comma-separated metric names (default: all that the data supports).
    #[arg(long, value_delimiter = ',', value_parser = METRIC_NAMES)]
    pub metrics: Option<Vec<String>>,
    /// Run the full acceptance table instead of comparing two archives.
    #[arg(long)]
    pub acceptance: bool,
    /// Suite JSON file for `--acceptance`.
    #[arg(long)]
    pub suite_config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for plot-ready data.
    #[arg(long)]
    pub plot_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Coefficients to time; synthetic ones on `--grid` otherwise.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Grid as NLATxNLONxNLEV.
    #[arg(long, default_value = "96x144x60")]
    pub grid: String,
    #[arg(long, default_value_t = 3)]
    pub days: usize,
    /// Comma-separated thread counts for the scaling curve.
    #[arg(long = "thread-counts", value_delimiter = ',', default_value = "1")]
    pub thread_counts: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub block_size: usize,
    /// Years of the coupled run used for the prediction share (0 skips it).
    #[arg(long, default_value_t = 1)]
    pub coupled_years: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub versions: BTreeMap<String, String>,
    pub timings: Vec<ManifestTiming>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestTiming {
    pub phase: String,
    pub seconds: f64,
}

struct Recorder {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: Vec<ManifestTiming>,
    seed: Option<u64>,
    config_path: Option<PathBuf>,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            seed: None,
            config_path: None,
        }
    }

    fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings.push(ManifestTiming {
            phase: name.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn since(&mut self, name: &str, start: Instant) {
        self.timings.push(ManifestTiming {
            phase: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }
}

/// Outcome of a successful command.
#[derive(Debug)]
pub struct Outcome {
    pub manifest_path: Option<PathBuf>,
    pub manifest: RunManifest,
    /// `false` only when `evaluate --acceptance` finds a failing criterion.
    pub criteria_passed: bool,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate(_) => "generate",
        Command::Train(_) => "train",
        Command::Predict(_) => "predict",
        Command::Simulate(_) => "simulate",
        Command::Evaluate(_) => "evaluate",
        Command::Bench(_) => "bench",
    }
}

/// Executes a parsed command line. `arguments` is recorded verbatim in the
/// manifest.
pub fn run(cli: Cli, arguments: Vec<String>) -> Result<Outcome> {
    let threads = match cli.threads {
        Some(0) => return Err(MlozError::Usage("--threads must be at least 1".into())),
        Some(k) => k,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MlozError::Numeric(format!("cannot build thread pool: {e}")))?;
    let mut rec = Recorder::new();
    let (primary, passed) = pool.install(|| -> Result<(PathBuf, bool)> {
        match &cli.command {
            Command::Generate(a) => cmd_generate(a, &mut rec).map(|p| (p, true)),
            Command::Train(a) => cmd_train(a, &mut rec).map(|p| (p, true)),
            Command::Predict(a) => cmd_predict(a, &mut rec).map(|p| (p, true)),
            Command::Simulate(a) => cmd_simulate(a, &mut rec).map(|p| (p, true)),
            Command::Evaluate(a) => cmd_evaluate(a, &mut rec),
            Command::Bench(a) => cmd_bench(a, &mut rec).map(|p| (p, true)),
        }
    })?;
    let manifest_path = cli.manifest.clone().unwrap_or_else(|| {
        let mut s = primary.as_os_str().to_os_string();
        s.push(".manifest.json");
        PathBuf::from(s)
    });
    rec.output(&manifest_path);
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        arguments,
        config_path: rec.config_path,
        inputs: rec.inputs,
        outputs: rec.outputs,
        seed: rec.seed,
        threads,
        versions: BTreeMap::from([
            ("mloz".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("coefficient_format".to_string(), "MLOZC001".to_string()),
            ("field_format".to_string(), "MLOZF001".to_string()),
        ]),
        timings: rec.timings,
    };
    write_json(&manifest_path, &manifest)?;
    Ok(Outcome {
        manifest_path: Some(manifest_path),
        manifest,
        criteria_passed: passed,
    })
}

fn write_archives(e: &Experiment, out: &[PathBuf], rec: &mut Recorder) -> Result<()> {
    let (t, o) = (e.temperature.as_ref(), e.ozone.as_ref());
    let (Some(t), Some(o)) = (t, o) else {
        return Err(MlozError::Structural("experiment was not archived".into()));
    };
    write_fields(t, &out[0])?;
    write_fields(o, &out[1])?;
    rec.output(&out[0]);
    rec.output(&out[1]);
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let w = a.world.resolve()?;
    rec.seed = Some(w.seed);
    rec.config_path = a.world.config.clone();
    if let Some(p) = &a.world.config {
        rec.input(p);
    }
    let source = match a.mode {
        ModeArg::Truth => OzoneSource::Truth,
        ModeArg::Fixed => OzoneSource::FixedClimatology,
        other => {
            return Err(MlozError::Usage(format!(
                "generate supports --mode truth or fixed, got {other:?}; use simulate for coupled modes"
            )))
        }
    };
    let world = World::new(w.build(a.mode.into())?)?;
    let e = rec.phase("run", || run_experiment(&world, w.years, &source, true))?;
    let t = Instant::now();
    write_archives(&e, &a.out, rec)?;
    rec.since("write", t);
    Ok(a.out[1].clone())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub nsamples: usize,
    pub nfolds: usize,
    pub alpha_grid: Vec<f64>,
    /// Number of models that selected each alpha, in grid order.
    pub alpha_counts: Vec<usize>,
    pub holdout: Option<SkillReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkillReport {
    pub days: usize,
    /// `1 − SSE/SST` below the cap, SST about each point's held-out mean.
    pub skill: f64,
    /// Root-mean-square error in percent of the mean held-out ozone.
    pub rmse_pct: f64,
}

/// Scores next-day predictions for days `first..ntime` of the archives.
fn holdout_skill(
    coeffs: &CoefficientSet,
    temp: &FieldSeries,
    ozone: &FieldSeries,
    first: usize,
    offset: usize,
) -> Result<SkillReport> {
    let grid = coeffs.grid();
    let (nlev, cap) = (grid.nlev(), grid.cap_level_index());
    let days = ozone.ntime() - first;
    let np = grid.npoints();
    let mut mean = vec![0.0; np];
    for d in first..ozone.ntime() {
        mean.iter_mut()
            .zip(ozone.day(d))
            .for_each(|(m, v)| *m += v / days as f64);
    }
    let (mut sse, mut sst, mut total, mut count) = (0.0, 0.0, 0.0, 0usize);
    for d in first..ozone.ntime() {
        let ctx = InferenceContext::new(coeffs, 64, (offset + d) % DAYS_PER_YEAR)?;
        let pred = predict_field(temp.day(d - 1), &ctx)?;
        for (p, (y, f)) in ozone.day(d).iter().zip(&pred).enumerate() {
            if p % nlev < cap {
                sse += (y - f) * (y - f);
                sst += (y - mean[p]) * (y - mean[p]);
                total += y;
                count += 1;
            }
        }
    }
    let mean_all = total / count.max(1) as f64;
    Ok(SkillReport {
        days,
        skill: 1.0 - sse / sst,
        rmse_pct: 100.0 * (sse / count.max(1) as f64).sqrt() / mean_all,
    })
}

fn cmd_train(a: &TrainArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let mut cfg: TrainerConfig = match &a.config {
        Some(p) => {
            rec.input(p);
            rec.config_path = Some(p.clone());
            read_json(p)?
        }
        None => TrainerConfig::default(),
    };
    if let Some(v) = &a.alphas {
        cfg.alpha_grid = v.clone();
    }
    if let Some(v) = a.folds {
        cfg.nfolds = v;
    }
    if let Some(v) = &a.source_tag {
        cfg.source_tag = v.clone();
    }
    cfg.validate()?;
    rec.input(&a.temp);
    rec.input(&a.ozone);
    let (temp, ozone) = rec.phase("read", || Ok((read_fields(&a.temp)?, read_fields(&a.ozone)?)))?;
    let offset = if a.include_spinup { 0 } else { temp.spinup_days() };
    let (temp, ozone) = if a.include_spinup {
        (temp, ozone)
    } else {
        (temp.after_spinup()?, ozone.after_spinup()?)
    };
    let hold = a.holdout_years * DAYS_PER_YEAR;
    if hold > 0 && hold + 2 > temp.ntime() {
        return Err(MlozError::InsufficientData(format!(
            "cannot hold out {hold} of {} days",
            temp.ntime()
        )));
    }
    let n_train = temp.ntime() - hold;
    let coeffs = rec.phase("train", || {
        if hold > 0 {
            train_all(&temp.slice_days(0..n_train)?, &ozone.slice_days(0..n_train)?, &cfg)
        } else {
            train_all(&temp, &ozone, &cfg)
        }
    })?;
    let holdout = if hold > 0 {
        Some(rec.phase("holdout", || holdout_skill(&coeffs, &temp, &ozone, n_train, offset))?)
    } else {
        None
    };
    let alpha_counts = cfg
        .alpha_grid
        .iter()
        .map(|g| coeffs.alpha().iter().filter(|a| *a == g).count())
        .collect();
    let report = TrainReport {
        nsamples: coeffs.meta().nsamples,
        nfolds: coeffs.meta().nfolds,
        alpha_grid: cfg.alpha_grid.clone(),
        alpha_counts,
        holdout,
    };
    let t = Instant::now();
    write_coefficients(&coeffs, &a.out)?;
    rec.output(&a.out);
    rec.output(&meta_sidecar_path(&a.out));
    let report_path = suffixed(&a.out, ".report.json");
    write_json(&report_path, &report)?;
    rec.output(&report_path);
    rec.since("write", t);
    Ok(a.out.clone())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Day-of-year climatology when a full year is available, annual otherwise.
fn fill_climatology(series: &FieldSeries) -> Result<Climatology> {
    let kind = if series.ntime() >= DAYS_PER_YEAR {
        ClimatologyKind::DayOfYear
    } else {
        ClimatologyKind::Annual
    };
    compute_climatology(series, kind)
}

fn cmd_predict(a: &PredictArgs, rec: &mut Recorder) -> Result<PathBuf> {
    rec.input(&a.coeffs);
    rec.input(&a.temp);
    let coeffs = read_coefficients(&a.coeffs)?;
    let temp = read_fields(&a.temp)?;
    if temp.variable() != Variable::Temperature {
        return Err(MlozError::Structural(format!(
            "{} is not a temperature archive",
            a.temp.display()
        )));
    }
    if temp.ntime() < 2 {
        return Err(MlozError::InsufficientData("predict needs at least 2 days".into()));
    }
    let dst = temp.grid().clone();
    let same_grid = &dst == coeffs.grid();
    let transfer = if same_grid {
        None
    } else {
        let map = build_vertical_map(coeffs.grid(), &dst, a.fill_threshold_m)?;
        let recal = match &a.recal_temp {
            Some(p) => {
                rec.input(p);
                let host = read_fields(p)?.after_spinup()?;
                recalibrate_scaling(&host, &map, &coeffs, TrainerConfig::default().std_floor)?
            }
            None => RecalibrationParams::from_coefficients(&coeffs),
        };
        let Some(fp) = &a.fill_ozone else {
            return Err(MlozError::Usage(
                "temperature grid differs from the coefficient grid; --fill-ozone is required".into(),
            ));
        };
        rec.input(fp);
        let fill = fill_climatology(&read_fields(fp)?.after_spinup()?)?;
        Some((map, recal, fill))
    };
    let mut out = FieldSeries::empty(dst.clone(), Variable::Ozone);
    rec.phase("predict", || {
        for t in 0..temp.ntime() - 1 {
            let ctx = InferenceContext::new(&coeffs, a.block_size, (t + 1) % DAYS_PER_YEAR)?;
            let field = match &transfer {
                None => predict_field(temp.day(t), &ctx)?,
                Some((map, recal, fill)) => transfer_predict(temp.day(t), map, recal, &ctx, fill)?,
            };
            out.push_day(&field)?;
        }
        Ok(())
    })?;
    let out = out.with_spinup_days(temp.spinup_days().saturating_sub(1));
    write_fields(&out, &a.out)?;
    rec.output(&a.out);
    Ok(a.out.clone())
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub mode: OzoneMode,
    pub world: WorldChoice,
    pub seed: u64,
    pub years: usize,
    pub co2_multiplier: f64,
    pub ndays: usize,
    pub drift: Option<crate::eval::DriftReport>,
    pub negative_ozone: usize,
    pub nonfinite: usize,
    pub min_ozone: f64,
    pub step_seconds: f64,
    pub provider_seconds: f64,
    /// Share of coupled-step time spent producing ozone.
    pub prediction_share: f64,
    pub transfer: Option<TransferSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferSummary {
    pub recalibrated: bool,
    pub reference: String,
    pub stratosphere_max_bias_pct: f64,
}

fn cmd_simulate(a: &SimulateArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let w = a.world.resolve()?;
    rec.seed = Some(w.seed);
    rec.config_path = a.world.config.clone();
    if let Some(p) = &a.world.config {
        rec.input(p);
    }
    let mode: OzoneMode = a.mode.into();
    let coeffs = match (&a.coeffs, a.mode) {
        (Some(p), ModeArg::Mloz | ModeArg::Transferred) => {
            rec.input(p);
            Some(read_coefficients(p)?)
        }
        (None, ModeArg::Mloz | ModeArg::Transferred) => {
            return Err(MlozError::Usage(
                format!("--mode {:?} needs --coeffs", a.mode).to_lowercase(),
            ))
        }
        _ => None,
    };
    let cfg = w.build(mode)?;
    let world = World::new(cfg.clone())?;
    let archive = a.out.is_some();
    let mut transfer = None;
    let e = match a.mode {
        ModeArg::Truth => rec.phase("run", || run_experiment(&world, w.years, &OzoneSource::Truth, archive))?,
        ModeArg::Fixed => rec.phase("run", || {
            run_experiment(&world, w.years, &OzoneSource::FixedClimatology, archive)
        })?,
        ModeArg::Mloz => {
            let c = coeffs.as_ref().expect("checked above");
            rec.phase("run", || {
                run_experiment(&world, w.years, &OzoneSource::Mloz(c), archive)
            })?
        }
        ModeArg::Transferred => {
            let c = coeffs.as_ref().expect("checked above");
            let map = build_vertical_map(c.grid(), &cfg.grid, DEFAULT_FILL_THRESHOLD_M)?;
            let recal = if a.no_recal {
                RecalibrationParams::from_coefficients(c)
            } else {
                rec.phase("recalibration run", || {
                    let host = World::new(cfg.clone().with_mode(OzoneMode::FixedClimatology))?;
                    let run = run_experiment(&host, a.recal_years.max(2), &OzoneSource::FixedClimatology, true)?;
                    let t = run.temperature.as_ref().expect("archived").after_spinup()?;
                    recalibrate_scaling(&t, &map, c, TrainerConfig::default().std_floor)
                })?
            };
            let fill = world.reference_climatology()?;
            let source = OzoneSource::Transferred {
                coeffs: c,
                map: &map,
                recal: &recal,
                fill: &fill,
            };
            let e = rec.phase("run", || run_experiment(&world, w.years, &source, archive))?;
            let (reference, label) = match &a.reference {
                Some(p) => {
                    rec.input(p);
                    let r = read_fields(p)?.after_spinup()?;
                    let clim = compute_climatology(&r, ClimatologyKind::Annual)?;
                    let clim = if clim.grid() == &cfg.grid {
                        clim
                    } else if clim.grid() == c.grid() {
                        crate::suite::interpolate_down(&clim, &map, &cfg.grid)?
                    } else {
                        return Err(MlozError::Structural(
                            "reference archive is on neither the host nor the coefficient grid".into(),
                        ));
                    };
                    (clim, p.display().to_string())
                }
                None => {
                    let (cfg_a, _) = w.build_pair(OzoneMode::Truth)?;
                    let truth = rec.phase("reference truth run", || {
                        run_experiment(&World::new(cfg_a)?, w.years, &OzoneSource::Truth, false)
                    })?;
                    let clim = crate::suite::interpolate_down(&truth.ozone_climatology()?, &map, &cfg.grid)?;
                    (clim, "truth run of the training world".to_string())
                }
            };
            let bias = percent_bias(&e.ozone_climatology()?, &reference)?;
            transfer = Some(TransferSummary {
                recalibrated: !a.no_recal,
                reference: label,
                stratosphere_max_bias_pct: max_abs_bias(&bias, &STRATOSPHERE.points(&cfg.grid)).unwrap_or(f64::NAN),
            });
            e
        }
    };
    let d = &e.diagnostics;
    let drift = if w.years >= 5 {
        Some(crate::eval::drift_of_series(
            &d.global_mean_ozone,
            d.spinup_days,
            crate::eval::DEFAULT_DRIFT_THRESHOLD_PCT,
        )?)
    } else {
        None
    };
    let report = SimulateReport {
        mode,
        world: w.world,
        seed: w.seed,
        years: w.years,
        co2_multiplier: w.co2_multiplier,
        ndays: d.ndays,
        drift,
        negative_ozone: d.negative_ozone_count,
        nonfinite: d.nonfinite_count,
        min_ozone: d.min_ozone,
        step_seconds: d.step_seconds,
        provider_seconds: d.provider_seconds,
        prediction_share: d.provider_share(),
        transfer,
    };
    if let Some(out) = &a.out {
        write_archives(&e, out, rec)?;
    }
    write_json(&a.report, &report)?;
    rec.output(&a.report);
    Ok(a.report.clone())
}

/// Metric names accepted by `evaluate --metrics`.
pub const METRIC_NAMES: [&str; 5] = ["bias", "column", "drift", "std", "kde"];

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateReport {
    pub run: PathBuf,
    pub truth: PathBuf,
    pub metrics: Vec<MetricReport>,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceReport {
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    pub suite: crate::suite::SuiteReport,
    pub timings: Vec<PhaseTiming>,
    pub all_pass: bool,
}

fn cmd_evaluate(a: &EvaluateArgs, rec: &mut Recorder) -> Result<(PathBuf, bool)> {
    if a.acceptance {
        return cmd_acceptance(a, rec);
    }
    let (Some(run_path), Some(truth_path)) = (&a.run, &a.truth) else {
        return Err(MlozError::Usage("--run and --truth are required".into()));
    };
    if let Some(m) = &a.metrics {
        if m.is_empty() {
            return Err(MlozError::Usage(format!(
                "no metric given; valid metrics: {}",
                METRIC_NAMES.join(", ")
            )));
        }
        if let Some(bad) = m.iter().find(|n| !METRIC_NAMES.contains(&n.as_str())) {
            return Err(MlozError::Usage(format!(
                "unknown metric {bad:?}; valid metrics: {}",
                METRIC_NAMES.join(", ")
            )));
        }
    }
    rec.input(run_path);
    rec.input(truth_path);
    let run = read_fields(run_path)?;
    let truth = read_fields(truth_path)?;
    if run.variable() != Variable::Ozone || truth.variable() != Variable::Ozone {
        return Err(MlozError::Structural("evaluate compares two ozone archives".into()));
    }
    run.grid().check_same(truth.grid(), "evaluate")?;
    let spinup_years = run.spinup_days() / DAYS_PER_YEAR;
    let after = run.ntime().saturating_sub(spinup_years * DAYS_PER_YEAR);
    let metrics: Vec<String> = match &a.metrics {
        Some(m) => m.clone(),
        None => METRIC_NAMES
            .iter()
            .filter(|n| match **n {
                "drift" => after >= 4 * DAYS_PER_YEAR,
                "std" => after >= 2 * DAYS_PER_YEAR,
                _ => true,
            })
            .map(|n| n.to_string())
            .collect(),
    };
    if let Some(dir) = &a.plot_dir {
        std::fs::create_dir_all(dir).map_err(|e| MlozError::io(dir, e))?;
    }
    let grid = run.grid().clone();
    let run_s = run.after_spinup()?;
    let truth_s = truth.slice_days(truth.spinup_days().min(truth.ntime())..truth.ntime())?;
    let mut reports = Vec::new();
    let plot = |rec: &mut Recorder, name: &str, columns: &[(&str, &[f64])]| -> Result<()> {
        if let Some(dir) = &a.plot_dir {
            let path = dir.join(format!("{name}.csv"));
            export_plot_data(
                &path,
                name,
                columns,
                &serde_json::json!({ "run": run_path, "truth": truth_path }),
            )?;
            rec.output(&path);
            rec.output(&suffixed(&path, ".json"));
        }
        Ok(())
    };
    let (lat, height) = point_coordinates(&grid);
    for m in &metrics {
        let t = Instant::now();
        match m.as_str() {
            "bias" => {
                let bias = percent_bias(
                    &compute_climatology(&run_s, ClimatologyKind::Annual)?,
                    &compute_climatology(&truth_s, ClimatologyKind::Annual)?,
                )?;
                let v = max_abs_bias(&bias, &STRATOSPHERE.points(&grid)).unwrap_or(0.0);
                reports.push(MetricReport {
                    metric: "bias".into(),
                    band: Some(STRATOSPHERE.name.into()),
                    value: v,
                    threshold: Some(10.0),
                    pass: v < 10.0,
                });
                let b: Vec<f64> = bias.iter().map(|x| x.unwrap_or(f64::NAN)).collect();
                plot(
                    rec,
                    "bias",
                    &[("lat_deg", &lat), ("height_m", &height), ("bias_pct", &b)],
                )?;
            }
            "column" => {
                let (r, t) = (column_map(&run_s)?, column_map(&truth_s)?);
                let w = grid.area_weights();
                let gr: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
                let gt: f64 = t.iter().zip(&w).map(|(a, b)| a * b).sum();
                let v = if gt > 0.0 { 100.0 * (gr - gt).abs() / gt } else { 0.0 };
                reports.push(MetricReport {
                    metric: "column".into(),
                    band: None,
                    value: v,
                    threshold: Some(7.5),
                    pass: v < 7.5,
                });
                let col_lat: Vec<f64> = (0..grid.ncols()).map(|c| grid.lat_deg()[c / grid.nlon()]).collect();
                let col_lon: Vec<f64> = (0..grid.ncols()).map(|c| grid.lon_deg()[c % grid.nlon()]).collect();
                plot(
                    rec,
                    "column",
                    &[
                        ("lat_deg", &col_lat),
                        ("lon_deg", &col_lon),
                        ("run_du", &r),
                        ("truth_du", &t),
                    ],
                )?;
            }
            "drift" => {
                let d = drift_test(&run, spinup_years, crate::eval::DEFAULT_DRIFT_THRESHOLD_PCT)?;
                reports.push(MetricReport {
                    metric: "drift".into(),
                    band: None,
                    value: d.trend_per_decade_pct,
                    threshold: Some(d.threshold_pct),
                    pass: d.pass,
                });
            }
            "std" => {
                let sr = std_map(&run, spinup_years)?;
                let st = std_map(&truth, truth.spinup_days() / DAYS_PER_YEAR)?;
                let v = STRATOSPHERE
                    .points(&grid)
                    .iter()
                    .filter(|&&p| st[p] > 0.0)
                    .map(|&p| 100.0 * (sr[p] - st[p]).abs() / st[p])
                    .fold(0.0, f64::max);
                reports.push(MetricReport {
                    metric: "std".into(),
                    band: Some(STRATOSPHERE.name.into()),
                    value: v,
                    threshold: None,
                    pass: true,
                });
                plot(
                    rec,
                    "std",
                    &[("lat_deg", &lat), ("height_m", &height), ("run", &sr), ("truth", &st)],
                )?;
            }
            "kde" => {
                let r = band_series(&run_s);
                let t = band_series(&truth_s);
                let mean = t.iter().sum::<f64>() / t.len() as f64;
                let pr = kde_pdf(&r, mean)?;
                let pt = kde_pdf(&t, mean)?;
                let on_truth: Vec<f64> = pt
                    .support
                    .iter()
                    .map(|&x| interp(&pr.support, &pr.density, x))
                    .collect();
                let step = pt.support[1] - pt.support[0];
                let l1: f64 = on_truth
                    .iter()
                    .zip(&pt.density)
                    .map(|(a, b)| (a - b).abs() * step)
                    .sum();
                reports.push(MetricReport {
                    metric: "kde".into(),
                    band: Some(STRATOSPHERE.name.into()),
                    value: l1,
                    threshold: None,
                    pass: true,
                });
                plot(
                    rec,
                    "kde",
                    &[
                        ("ozone", &pt.support),
                        ("truth_density", &pt.density),
                        ("run_density", &on_truth),
                    ],
                )?;
            }
            _ => unreachable!("metric names validated above"),
        }
        rec.since(m, t);
    }
    let all_pass = reports.iter().all(|r| r.pass);
    let report = EvaluateReport {
        run: run_path.clone(),
        truth: truth_path.clone(),
        metrics: reports,
        all_pass,
    };
    write_json(&a.out, &report)?;
    rec.output(&a.out);
    Ok((a.out.clone(), all_pass))
}

fn point_coordinates(grid: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let nlev = grid.nlev();
    let per_lat = grid.nlon() * nlev;
    let lat = (0..grid.npoints()).map(|p| grid.lat_deg()[p / per_lat]).collect();
    let height = (0..grid.npoints()).map(|p| grid.level_height_m()[p % nlev]).collect();
    (lat, height)
}

/// Column ozone of the time-mean profile in each column, in Dobson units.
fn column_map(series: &FieldSeries) -> Result<Vec<f64>> {
    let clim = compute_climatology(series, ClimatologyKind::Annual)?;
    let grid = series.grid();
    clim.field(0)
        .chunks_exact(grid.nlev())
        .map(|col| column_ozone(col, grid.level_height_m()))
        .collect()
}

/// Daily area-weighted mean over the stratospheric band.
fn band_series(series: &FieldSeries) -> Vec<f64> {
    let grid = series.grid();
    let w = grid.area_weights();
    let pts = STRATOSPHERE.points(grid);
    let per_col = grid.nlev();
    let norm: f64 = pts.iter().map(|&p| w[p / per_col]).sum();
    (0..series.ntime())
        .map(|t| {
            let day = series.day(t);
            pts.iter().map(|&p| w[p / per_col] * day[p]).sum::<f64>() / norm
        })
        .collect()
}

/// Linear interpolation with zero outside the support.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
    ys[i - 1] * (1.0 - w) + ys[i] * w
}

fn cmd_acceptance(a: &EvaluateArgs, rec: &mut Recorder) -> Result<(PathBuf, bool)> {
    let mut cfg: SuiteConfig = match &a.suite_config {
        Some(p) => {
            rec.input(p);
            rec.config_path = Some(p.clone());
            read_json(p)?
        }
        None => SuiteConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    rec.seed = Some(cfg.seed);
    let mut criteria = rec.phase("property checks", || run_property_checks(cfg.seed))?;
    let (suite, _) = rec.phase("experiments", || run_suite(&cfg))?;
    criteria.extend(suite.criteria.iter().cloned());
    criteria.sort_by_key(|c| c.id);
    for c in &criteria {
        println!(
            "criterion {:>2} {} {}: {}",
            c.id,
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let all_pass = criteria.iter().all(|c| c.pass);
    let report = AcceptanceReport {
        seed: cfg.seed,
        timings: suite.timings.clone(),
        criteria,
        suite,
        all_pass,
    };
    write_json(&a.out, &report)?;
    rec.output(&a.out);
    Ok((a.out.clone(), all_pass))
}

fn parse_grid(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    let bad = || MlozError::Usage(format!("--grid expects NLATxNLONxNLEV, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    Ok((n[0], n[1], n[2]))
}

fn cmd_bench(a: &BenchArgs, rec: &mut Recorder) -> Result<PathBuf> {
    let (nlat, nlon, nlev) = parse_grid(&a.grid)?;
    let coeffs = match &a.coeffs {
        Some(p) => {
            rec.input(p);
            Some(read_coefficients(p)?)
        }
        None => None,
    };
    rec.seed = Some(a.seed);
    let opts = BenchOptions {
        nlat,
        nlon,
        nlev,
        days: a.days,
        block_size: a.block_size,
        threads: a.thread_counts.clone(),
        coupled_years: (a.coupled_years > 0).then_some(a.coupled_years),
        seed: a.seed,
    };
    let report = rec.phase("bench", || run_bench(&opts, coeffs.as_ref()))?;
    write_json(&a.out, &report)?;
    rec.output(&a.out);
    Ok(a.out.clone())
}
