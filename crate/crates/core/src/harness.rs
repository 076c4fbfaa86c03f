//! Experiment runner: trace preparation, Monte Carlo forecasting
//! benchmarks, parameter sweeps, burst and classification experiments.

use std::fs::File;
use std::io::BufReader;
use std::ops::Range;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arima::{self, ArimaError, ArimaOrder};
use crate::burst::{self, BurstError, BurstReport, ThresholdSweep};
use crate::classify::{self, ClassReport, ClassifyError, LabeledWindow};
use crate::features::{build_matrix, FeatureError, FeatureMatrix, FeatureSet, Normalizer};
use crate::ingest::{self, IngestError, IntervalFeatures, Target};
use crate::rnn::{self, GruNetwork, Head, RnnError, Sample, TrainConfig};
use crate::synth::{self, derive_seed, App, SynthError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Arima(#[from] ArimaError),
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Burst(#[from] BurstError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

impl HarnessError {
    /// Stable machine-readable error category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::InvalidArgument(_) => "invalid_argument",
            HarnessError::Io(_) => "io",
            HarnessError::Ingest(IngestError::Parse { .. }) => "parse",
            HarnessError::Ingest(_) => "ingest",
            HarnessError::Synth(_) => "synth",
            HarnessError::Feature(_) => "feature",
            HarnessError::Arima(_) => "arima",
            HarnessError::Rnn(RnnError::Divergence { .. }) => "divergence",
            HarnessError::Rnn(_) => "rnn",
            HarnessError::Burst(_) => "burst",
            HarnessError::Classify(_) => "classify",
        }
    }
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64, HarnessError> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(HarnessError::InvalidArgument(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            predicted.len(),
            actual.len()
        )));
    }
    let sse: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

pub const STANDARD_DAYS: f64 = 7.0;
pub const STANDARD_SEED: u64 = 20_190_601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    File { path: PathBuf },
    Synth { days: f64, seed: u64 },
}

impl TraceSource {
    /// The seeded week-long bursty synthetic trace used by the benchmarks.
    pub fn standard() -> Self {
        TraceSource::Synth {
            days: STANDARD_DAYS,
            seed: STANDARD_SEED,
        }
    }
}

/// Bins a trace file or a freshly generated bursty mixture at `tau`.
pub fn load_intervals(source: &TraceSource, tau: f64) -> Result<Vec<IntervalFeatures>, HarnessError> {
    match source {
        TraceSource::File { path } => {
            let records = ingest::parse_trace(BufReader::new(File::open(path)?))?;
            let horizon = ingest::trace_horizon(&records, tau);
            Ok(ingest::bin_intervals(&records, tau, horizon)?)
        }
        TraceSource::Synth { days, seed } => {
            if !(*days > 0.0) {
                return Err(HarnessError::InvalidArgument(format!("days must be positive, got {days}")));
            }
            let schedule = synth::bursty_schedule(*days, *seed);
            let mix = synth::generate_mixture(&schedule, tau, *seed)?;
            Ok(ingest::bin_intervals(&mix.records, tau, mix.horizon)?)
        }
    }
}

/// Feature matrix and target series of one binned trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub matrix: FeatureMatrix,
    pub target: Vec<f64>,
    pub target_kind: Target,
}

impl Prepared {
    pub fn new(intervals: &[IntervalFeatures], fs: FeatureSet, tau: f64, target: Target) -> Result<Self, HarnessError> {
        Ok(Prepared {
            matrix: build_matrix(intervals, fs, tau)?,
            target: target.extract(intervals),
            target_kind: target,
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Row of the matrix that carries the target.
    pub fn target_row(&self) -> Result<usize, HarnessError> {
        let name = match self.target_kind {
            Target::UlCount => "ul_count",
            Target::TotalCount => {
                return Err(HarnessError::InvalidArgument(
                    "the network target must be one of the input features; use ul_count".into(),
                ))
            }
        };
        self.matrix
            .row_index(name)
            .ok_or_else(|| HarnessError::InvalidArgument(format!("feature set lacks {name}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnSettings {
    pub hidden_size: usize,
    pub train: TrainConfig,
}

impl Default for RnnSettings {
    fn default() -> Self {
        RnnSettings {
            hidden_size: rnn::DEFAULT_HIDDEN,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Persistence,
    ArimaOptimized,
    ArimaFixed { p: usize, d: usize, q: usize },
    Rnn,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Persistence => "persistence".into(),
            Method::ArimaOptimized => "arima_optimized".into(),
            Method::ArimaFixed { p, d, q } => format!("arima({p},{d},{q})"),
            Method::Rnn => "rnn".into(),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = HarnessError;

    /// Accepts `persistence`, `arima`, `rnn` or `arima(p,d,q)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "persistence" => return Ok(Method::Persistence),
            "arima" | "arima_optimized" => return Ok(Method::ArimaOptimized),
            "rnn" => return Ok(Method::Rnn),
            _ => {}
        }
        let inner = t
            .strip_prefix("arima(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| HarnessError::InvalidArgument(format!("unknown method {s:?}")))?;
        let parts: Vec<usize> = inner
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| HarnessError::InvalidArgument(format!("bad ARIMA order in {s:?}")))?;
        match parts[..] {
            [p, d, q] => Ok(Method::ArimaFixed { p, d, q }),
            _ => Err(HarnessError::InvalidArgument(format!("bad ARIMA order in {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: TraceSource,
    pub tau: f64,
    pub feature_set: FeatureSet,
    pub target: Target,
    pub method: Method,
    /// Training span in intervals.
    pub train_length: usize,
    /// Test span in intervals.
    pub test_length: usize,
    pub n_runs: usize,
    /// Forecast lead: 1 for teacher-forced one-step, n for iterated n-step.
    pub horizon: usize,
    pub seed: u64,
    pub rnn: RnnSettings,
    /// Orders searched by `ArimaOptimized`; `None` means the default grid.
    pub arima_grid: Option<Vec<ArimaOrder>>,
    /// Earliest interval a test span may start at; defaults to
    /// `train_length`. Setting it fixes test placement across train lengths.
    pub test_origin_min: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: TraceSource::standard(),
            tau: ingest::DEFAULT_TAU,
            feature_set: FeatureSet::Fs5,
            target: Target::UlCount,
            method: Method::Persistence,
            train_length: 43_200,
            test_length: 2000,
            n_runs: 37,
            horizon: 1,
            seed: 0,
            rnn: RnnSettings::default(),
            arima_grid: None,
            test_origin_min: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidArgument(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.test_length == 0 || self.n_runs == 0 || self.horizon == 0 {
            return bad("test_length, n_runs and horizon must be at least 1".into());
        }
        let need = self.min_train_length();
        if self.train_length < need {
            return bad(format!(
                "train_length {} below the {need} intervals {} needs",
                self.train_length,
                self.method.label()
            ));
        }
        if self.origin_min() < self.train_length {
            return bad(format!(
                "test_origin_min {} leaves no room for {} training intervals",
                self.origin_min(),
                self.train_length
            ));
        }
        if let Method::ArimaFixed { p, d, q } = self.method {
            ArimaOrder::new(p, d, q).validate()?;
        }
        if self.method == Method::Rnn {
            self.rnn.train.validate()?;
            if self.rnn.hidden_size == 0 {
                return bad("hidden_size must be positive".into());
            }
        }
        Ok(())
    }

    /// Smallest training span the method can work with.
    pub fn min_train_length(&self) -> usize {
        match self.method {
            Method::Persistence => self.horizon,
            Method::ArimaFixed { p, d, q } => ArimaOrder::new(p, d, q).min_train(),
            // the grid is split 80/20 into fit and validation spans
            Method::ArimaOptimized => 50,
            Method::Rnn => self.rnn.train.window_length + self.horizon + 1,
        }
    }

    fn origin_min(&self) -> usize {
        self.test_origin_min.unwrap_or(self.train_length)
    }

    /// Trace length needed so every sampled start fits.
    pub fn required_length(&self) -> usize {
        self.origin_min() + self.test_length
    }

    fn grid(&self) -> Vec<ArimaOrder> {
        self.arima_grid.clone().unwrap_or_else(arima::default_grid)
    }
}

/// A fit touching trace intervals, reported to observers for leakage checks.
#[derive(Debug, Clone, PartialEq)]
pub struct FitEvent {
    pub run: usize,
    pub what: &'static str,
    /// Absolute interval indices read by the fit.
    pub range: Range<usize>,
}

pub type FitObserver<'a> = &'a (dyn Fn(FitEvent) + Sync);

fn no_observer(_: FitEvent) {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    /// First interval of the training span.
    pub start: usize,
    pub rmse: f64,
    pub persistence_rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arima_order: Option<ArimaOrder>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub method: String,
    pub runs: Vec<RunResult>,
    pub mean_rmse: f64,
    pub persistence_mean_rmse: f64,
    /// `mean_rmse / persistence_mean_rmse` over the same windows.
    pub relative_ratio: f64,
    /// Kept out of the JSON so reports are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// Seed and training start of run `run`. The test span begins right after
/// training at a uniformly drawn interval.
pub fn run_placement(config: &ExperimentConfig, trace_len: usize, run: usize) -> Result<(u64, usize), HarnessError> {
    let need = config.required_length();
    if trace_len < need {
        return Err(HarnessError::InvalidArgument(format!(
            "trace has {trace_len} intervals; train {} + test {} needs at least {need}",
            config.train_length, config.test_length
        )));
    }
    let seed = derive_seed(config.seed, run as u64);
    let lo = config.origin_min();
    let origin = lo + ChaCha8Rng::seed_from_u64(seed).random_range(0..=trace_len - need);
    Ok((seed, origin - config.train_length))
}

/// One Monte Carlo run on a prepared trace.
pub fn run_single(prepared: &Prepared, config: &ExperimentConfig, run: usize, observer: FitObserver) -> Result<RunResult, HarnessError> {
    config.validate()?;
    let (seed, start) = run_placement(config, prepared.len(), run)?;
    let train = start..start + config.train_length;
    let test = train.end..train.end + config.test_length;
    let h = config.horizon;
    let actual = &prepared.target[test.clone()];
    let persistence: Vec<f64> = test.clone().map(|t| prepared.target[t - h]).collect();
    let persistence_rmse = rmse(&persistence, actual)?;

    let mut result = RunResult {
        run,
        seed,
        start,
        rmse: persistence_rmse,
        persistence_rmse,
        arima_order: None,
        final_train_loss: None,
    };
    let series = &prepared.target[train.start..test.end];
    let l = config.train_length;
    let preds = match config.method {
        Method::Persistence => return Ok(result),
        Method::ArimaFixed { p, d, q } => {
            let order = ArimaOrder::new(p, d, q);
            observer(FitEvent { run, what: "arima", range: train.clone() });
            result.arima_order = Some(order);
            arima_predictions(series, l, order, h)?
        }
        Method::ArimaOptimized => {
            let split = l * 4 / 5;
            observer(FitEvent { run, what: "grid_search", range: train.start..train.start + l });
            let search = arima::grid_search(&series[..split], &series[split..l], &config.grid())?;
            observer(FitEvent { run, what: "arima", range: train.clone() });
            result.arima_order = Some(search.best);
            arima_predictions(series, l, search.best, h)?
        }
        Method::Rnn => {
            let trained = train_forecaster(prepared, train.clone(), &config.rnn, derive_seed(seed, 1), &|r| {
                observer(FitEvent { run, ..r })
            })?;
            result.final_train_loss = trained.1.last().copied();
            rnn_predictions(prepared, &trained.0, test.clone(), h)?
        }
    };
    result.rmse = rmse(&preds, actual)?;
    Ok(result)
}

/// Forecasts for `series[l..]`, each made `h` steps ahead from a model fitted on `series[..l]`.
fn arima_predictions(series: &[f64], l: usize, order: ArimaOrder, h: usize) -> Result<Vec<f64>, HarnessError> {
    let model = arima::fit_arima(&series[..l], order)?;
    if h == 1 {
        return Ok(arima::one_step_predictions(&model, series, l)?);
    }
    (l..series.len())
        .map(|t| {
            let f = arima::forecast(&model, &series[..t + 1 - h], h)?;
            Ok(f[h - 1])
        })
        .collect()
}

/// Trains a regression network on the windows inside `train`. The
/// normalizer is fitted on `train` only and stored in the network.
pub fn train_forecaster(
    prepared: &Prepared,
    train: Range<usize>,
    settings: &RnnSettings,
    seed: u64,
    observer: FitObserver,
) -> Result<(GruNetwork, Vec<f64>), HarnessError> {
    let m = settings.train.window_length;
    if train.end > prepared.len() || train.len() <= m {
        return Err(HarnessError::InvalidArgument(format!(
            "training span {train:?} must exceed the window length {m} and fit in {} intervals",
            prepared.len()
        )));
    }
    let target_row = prepared.target_row()?;
    observer(FitEvent { run: 0, what: "normalizer", range: train.clone() });
    let normalizer = Normalizer::fit(&prepared.matrix, train.clone())?;
    let z = normalizer.transform(&prepared.matrix.window(train.clone()))?;
    let w = z.n_rows();
    let data = z.as_slice();
    let samples: Vec<Sample> = (m..train.len())
        .map(|t| Sample {
            steps: data[(t - m) * w..t * w].to_vec(),
            target: vec![data[t * w + target_row]],
        })
        .collect();
    let mut net = GruNetwork::new(z.feature_names().to_vec(), settings.hidden_size, Head::Regression, m, seed)?;
    net.normalizer = Some(normalizer);
    net.target_index = Some(target_row);
    let config = TrainConfig { seed, ..settings.train };
    observer(FitEvent { run: 0, what: "rnn", range: train });
    let report = rnn::train(&mut net, &samples, &config)?;
    Ok((net, report.epoch_losses))
}

/// Forecasts for every index in `test`, each made `h` steps ahead from the
/// raw intervals before it.
pub fn rnn_predictions(prepared: &Prepared, net: &GruNetwork, test: Range<usize>, h: usize) -> Result<Vec<f64>, HarnessError> {
    let m = net.window_length;
    if test.start + 1 < h + m {
        return Err(HarnessError::InvalidArgument(format!(
            "forecasting interval {} needs {} earlier intervals",
            test.start,
            h + m - 1
        )));
    }
    let norm = net
        .normalizer
        .as_ref()
        .ok_or_else(|| HarnessError::InvalidArgument("network has no normalizer".into()))?;
    let target_row = net
        .target_index
        .ok_or_else(|| HarnessError::InvalidArgument("network has no target feature".into()))?;
    if h == 1 {
        let span = test.start - m..test.end - 1;
        let z = norm.transform(&prepared.matrix.window(span))?;
        let w = z.n_rows();
        let data = z.as_slice();
        return (0..test.len())
            .map(|k| {
                let y = net.forward_steps(&data[k * w..(k + m) * w])?.output[0];
                Ok(norm.inverse_value(target_row, y).max(0.0))
            })
            .collect();
    }
    test.map(|t| {
        let origin = t + 1 - h;
        let recent = prepared.matrix.window(origin - m..origin);
        Ok(rnn::predict_next(net, &recent, h)?[h - 1])
    })
    .collect()
}

fn assemble(config: &ExperimentConfig, runs: Vec<RunResult>, started: Instant) -> EvalReport {
    let r: Vec<f64> = runs.iter().map(|r| r.rmse).collect();
    let p: Vec<f64> = runs.iter().map(|r| r.persistence_rmse).collect();
    let (mean_rmse, persistence_mean_rmse) = (mean(&r), mean(&p));
    EvalReport {
        config: config.clone(),
        method: config.method.label(),
        runs,
        mean_rmse,
        persistence_mean_rmse,
        relative_ratio: ratio(mean_rmse, persistence_mean_rmse),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// All runs of `config` on an already prepared trace, executed in parallel
/// and assembled in run order.
pub fn run_monte_carlo_on(prepared: &Prepared, config: &ExperimentConfig, observer: FitObserver) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    run_placement(config, prepared.len(), 0)?;
    let started = Instant::now();
    let runs = (0..config.n_runs)
        .into_par_iter()
        .map(|run| run_single(prepared, config, run, observer))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble(config, runs, started))
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    let intervals = load_intervals(&config.source, config.tau)?;
    Prepared::new(&intervals, config.feature_set, config.tau, config.target)
}

pub fn run_monte_carlo(config: &ExperimentConfig) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let prepared = prepare(config)?;
    run_monte_carlo_on(&prepared, config, &no_observer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Tau,
    TrainLength,
    HorizonN,
    FeatureSet,
    Method,
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "tau" => Ok(SweepAxis::Tau),
            "train_length" => Ok(SweepAxis::TrainLength),
            "horizon" | "horizon_n" => Ok(SweepAxis::HorizonN),
            "feature_set" => Ok(SweepAxis::FeatureSet),
            "method" => Ok(SweepAxis::Method),
            _ => Err(HarnessError::InvalidArgument(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,method,mean_rmse,persistence_mean_rmse,relative_ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.value, r.report.method, r.report.mean_rmse, r.report.persistence_mean_rmse, r.report.relative_ratio
            ));
        }
        out
    }
}

fn parse_value<T: std::str::FromStr>(axis: SweepAxis, v: &str) -> Result<T, HarnessError> {
    v.trim()
        .parse()
        .map_err(|_| HarnessError::InvalidArgument(format!("{v:?} is not a valid {axis:?} value")))
}

/// Configuration with one axis set to `value`.
pub fn with_axis(config: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut c = config.clone();
    match axis {
        SweepAxis::Tau => c.tau = parse_value(axis, value)?,
        SweepAxis::TrainLength => c.train_length = parse_value(axis, value)?,
        SweepAxis::HorizonN => c.horizon = parse_value(axis, value)?,
        SweepAxis::FeatureSet => {
            c.feature_set = value
                .parse()
                .map_err(|_| HarnessError::InvalidArgument(format!("unknown feature set {value:?}")))?
        }
        SweepAxis::Method => c.method = value.parse()?,
    }
    c.validate()?;
    Ok(c)
}

/// One report per axis value with everything else held fixed.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<SweepTable, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::InvalidArgument("sweep needs at least one value".into()));
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| with_axis(config, axis, v))
        .collect::<Result<_, _>>()?;
    // the binned trace only depends on tau
    let mut intervals: Option<(f64, Vec<IntervalFeatures>)> = None;
    let mut rows = Vec::with_capacity(values.len());
    for (v, c) in values.iter().zip(configs) {
        if intervals.as_ref().is_none_or(|(t, _)| *t != c.tau) {
            intervals = Some((c.tau, load_intervals(&c.source, c.tau)?));
        }
        let ivs = &intervals.as_ref().expect("loaded").1;
        let prepared = Prepared::new(ivs, c.feature_set, c.tau, c.target)?;
        rows.push(SweepRow {
            value: v.trim().to_string(),
            report: run_monte_carlo_on(&prepared, &c, &no_observer)?,
        });
    }
    Ok(SweepTable { axis, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstExperimentConfig {
    pub source: TraceSource,
    pub tau: f64,
    pub feature_set: FeatureSet,
    pub train_length: usize,
    pub test_length: usize,
    /// Burst threshold as a multiple of the training span's standard deviation.
    pub burst_sd_multiple: f64,
    /// Number of evenly spaced θ values in `[0, 1]`.
    pub grid_points: usize,
    pub seed: u64,
    pub rnn: RnnSettings,
}

impl Default for BurstExperimentConfig {
    fn default() -> Self {
        BurstExperimentConfig {
            source: TraceSource::standard(),
            tau: ingest::DEFAULT_TAU,
            feature_set: FeatureSet::Fs5,
            train_length: 43_200,
            test_length: 2000,
            burst_sd_multiple: 1.0,
            grid_points: 101,
            seed: 0,
            rnn: RnnSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstExperimentReport {
    pub start: usize,
    pub burst_threshold: f64,
    pub train_prevalence: f64,
    pub sweep: ThresholdSweep,
    pub crossover_recall_burst: Option<f64>,
    pub persistence: BurstReport,
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Trains a burst-probability network on one seeded train/test split of the
/// UL-count series and sweeps the decision threshold over the test span.
pub fn run_burst_experiment_on(prepared: &Prepared, config: &BurstExperimentConfig) -> Result<BurstExperimentReport, HarnessError> {
    if !(config.burst_sd_multiple >= 0.0) || config.grid_points == 0 || config.test_length == 0 {
        return Err(HarnessError::InvalidArgument(
            "burst_sd_multiple must be non-negative and grid_points, test_length positive".into(),
        ));
    }
    let need = config.train_length + config.test_length;
    if prepared.len() < need {
        return Err(HarnessError::InvalidArgument(format!(
            "trace has {} intervals, burst experiment needs {need}",
            prepared.len()
        )));
    }
    let m = config.rnn.train.window_length;
    if config.train_length <= m {
        return Err(HarnessError::InvalidArgument(format!(
            "train_length must exceed the window length {m}"
        )));
    }
    let start = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0)).random_range(0..=prepared.len() - need);
    let train = start..start + config.train_length;
    let test = train.end..train.end + config.test_length;

    let threshold = config.burst_sd_multiple * std_dev(&prepared.target[train.clone()]);
    let labels = burst::label_bursts(&prepared.target, threshold);

    let normalizer = Normalizer::fit(&prepared.matrix, train.clone())?;
    let z = normalizer.transform(&prepared.matrix.window(train.start..test.end))?;
    let w = z.n_rows();
    let data = z.as_slice();
    let samples: Vec<Sample> = (m..config.train_length)
        .map(|t| Sample {
            steps: data[(t - m) * w..t * w].to_vec(),
            target: vec![if labels[train.start + t] { 1.0 } else { 0.0 }],
        })
        .collect();
    let seed = derive_seed(config.seed, 1);
    let mut net = GruNetwork::new(z.feature_names().to_vec(), config.rnn.hidden_size, Head::SigmoidBinary, m, seed)?;
    rnn::train(&mut net, &samples, &TrainConfig { seed, ..config.rnn.train })?;

    let probabilities: Vec<f64> = (config.train_length..config.train_length + config.test_length)
        .map(|t| Ok(net.forward_steps(&data[(t - m) * w..t * w])?.output[0]))
        .collect::<Result<_, HarnessError>>()?;
    let test_labels = &labels[test.clone()];
    let sweep = burst::sweep_thresholds(&probabilities, test_labels, &burst::uniform_grid(config.grid_points))?;
    let shifted = burst::persistence_burst_baseline(&labels[test.start - 1..test.end])?;
    let persistence = burst::evaluate_decisions(&shifted[1..], test_labels, 0.0)?;
    Ok(BurstExperimentReport {
        start,
        burst_threshold: threshold,
        train_prevalence: burst::prevalence(&labels[train]),
        crossover_recall_burst: sweep.crossover_report().and_then(|r| r.recall_burst),
        sweep,
        persistence,
    })
}

pub fn run_burst_experiment(config: &BurstExperimentConfig) -> Result<BurstExperimentReport, HarnessError> {
    let intervals = load_intervals(&config.source, config.tau)?;
    let prepared = Prepared::new(&intervals, config.feature_set, config.tau, Target::UlCount)?;
    run_burst_experiment_on(&prepared, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassExperimentConfig {
    pub tau: f64,
    pub feature_set: FeatureSet,
    /// Hours of each app in the training mixture.
    pub train_hours_per_app: f64,
    /// Hours of each app in the separately seeded test mixture.
    pub test_hours_per_app: f64,
    /// Decision intervals in seconds, each a multiple of `tau`.
    pub decision_intervals_s: Vec<f64>,
    /// Permute the training and test labels independently, giving a
    /// chance-level control.
    pub shuffle_labels: bool,
    pub seed: u64,
    pub rnn: RnnSettings,
}

impl Default for ClassExperimentConfig {
    fn default() -> Self {
        ClassExperimentConfig {
            tau: ingest::DEFAULT_TAU,
            feature_set: FeatureSet::Fs5,
            train_hours_per_app: 6.0,
            test_hours_per_app: 2.0,
            decision_intervals_s: vec![ingest::DEFAULT_TAU],
            shuffle_labels: false,
            seed: 0,
            rnn: RnnSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExperimentReport {
    pub train_windows: usize,
    pub test_windows: usize,
    pub epoch_losses: Vec<f64>,
    pub reports: Vec<ClassReport>,
}

pub fn class_names() -> Vec<String> {
    App::CLASSIFIED.iter().map(|a| a.as_str().to_string()).collect()
}

/// Windows of `m` intervals lying entirely inside one classified app's
/// labelled stretch, labelled with that app, in time order.
pub fn labeled_windows(
    intervals: &[IntervalFeatures],
    labels: &[(usize, App)],
    fs: FeatureSet,
    tau: f64,
    m: usize,
) -> Result<Vec<LabeledWindow>, HarnessError> {
    let matrix = build_matrix(intervals, fs, tau)?;
    let mut per_interval: Vec<Option<usize>> = vec![None; intervals.len()];
    for (i, app) in labels {
        if let Some(slot) = per_interval.get_mut(*i) {
            *slot = app.class_index();
        }
    }
    let mut out = Vec::new();
    let mut run = 0;
    for t in 0..intervals.len() {
        run = match (t > 0).then(|| per_interval[t - 1]).flatten() {
            Some(prev) if per_interval[t] == Some(prev) => run + 1,
            _ => 1,
        };
        if let (Some(label), true) = (per_interval[t], run >= m) {
            out.push(LabeledWindow {
                window: matrix.window(t + 1 - m..t + 1),
                label,
            });
        }
    }
    Ok(out)
}

/// Generates a balanced four-app mixture and cuts it into labelled windows.
pub fn class_mixture_windows(hours_per_app: f64, fs: FeatureSet, tau: f64, m: usize, seed: u64) -> Result<Vec<LabeledWindow>, HarnessError> {
    let schedule = synth::classification_schedule(hours_per_app, seed);
    let mix = synth::generate_mixture(&schedule, tau, seed)?;
    let intervals = ingest::bin_intervals(&mix.records, tau, mix.horizon)?;
    labeled_windows(&intervals, &mix.labels, fs, tau, m)
}

/// Permutes labels across windows, keeping the class counts.
pub fn shuffle_labels(windows: &mut [LabeledWindow], seed: u64) {
    let mut labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (w, l) in windows.iter_mut().zip(labels) {
        w.label = l;
    }
}

/// Trains on one seeded mixture and evaluates on another.
pub fn run_class_experiment(config: &ClassExperimentConfig) -> Result<ClassExperimentReport, HarnessError> {
    let m = config.rnn.train.window_length;
    let fs = config.feature_set;
    let mut train = class_mixture_windows(config.train_hours_per_app, fs, config.tau, m, derive_seed(config.seed, 0))?;
    let mut test = class_mixture_windows(config.test_hours_per_app, fs, config.tau, m, derive_seed(config.seed, 1))?;
    if config.shuffle_labels {
        shuffle_labels(&mut train, derive_seed(config.seed, 2));
        shuffle_labels(&mut test, derive_seed(config.seed, 4));
    }
    let names = class_names();
    let train_cfg = TrainConfig { seed: derive_seed(config.seed, 3), ..config.rnn.train };
    let (net, losses) = classify::train_classifier(&train, names.len(), fs, config.rnn.hidden_size, &train_cfg)?;
    let reports = config
        .decision_intervals_s
        .iter()
        .map(|d| classify::evaluate_classifier(&net, &test, &names, fs, *d))
        .collect::<Result<_, _>>()?;
    Ok(ClassExperimentReport {
        train_windows: train.len(),
        test_windows: test.len(),
        epoch_losses: losses.epoch_losses,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 5.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..500);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let mut sq = 0.0;
            for d in &diffs {
                sq += d * d;
            }
            let expected = (sq / n as f64).sqrt();
            assert!((rmse(&a, &b).unwrap() - expected).abs() <= 1e-12 * expected.max(1.0));
        }
    }

    fn toy_prepared(n: usize, f: impl Fn(usize) -> u64) -> Prepared {
        let intervals: Vec<IntervalFeatures> = (0..n)
            .map(|i| IntervalFeatures {
                ul_count: f(i),
                dl_count: f(i) * 2,
                ..IntervalFeatures::empty(i)
            })
            .collect();
        Prepared::new(&intervals, FeatureSet::Fs5, 10.0, Target::UlCount).unwrap()
    }

    fn small_config(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            method,
            train_length: 300,
            test_length: 50,
            n_runs: 3,
            seed: 11,
            rnn: RnnSettings {
                hidden_size: 6,
                train: TrainConfig {
                    window_length: 8,
                    epochs: 2,
                    learning_rate: 0.01,
                    ..TrainConfig::default()
                },
            },
            arima_grid: Some(vec![ArimaOrder::new(1, 0, 0), ArimaOrder::new(0, 1, 0)]),
            ..ExperimentConfig::default()
        }
    }

    fn noisy(i: usize) -> u64 {
        (20.0 + 10.0 * (i as f64 * 0.3).sin() + ((i * 7919) % 11) as f64) as u64
    }

    #[test]
    fn persistence_ratio_is_one() {
        let p = toy_prepared(1000, noisy);
        let r = run_monte_carlo_on(&p, &small_config(Method::Persistence), &no_observer).unwrap();
        assert_eq!(r.relative_ratio, 1.0);
        assert_eq!(r.runs.len(), 3);
    }

    #[test]
    fn constant_trace_gives_zero_error() {
        let p = toy_prepared(1000, |_| 7);
        for method in [Method::Persistence, Method::ArimaFixed { p: 0, d: 1, q: 0 }] {
            let r = run_monte_carlo_on(&p, &small_config(method), &no_observer).unwrap();
            assert_eq!(r.mean_rmse, 0.0, "{method:?}");
        }
    }

    #[test]
    fn monte_carlo_decomposes_into_single_runs() {
        let p = toy_prepared(1000, noisy);
        for method in [Method::ArimaFixed { p: 1, d: 0, q: 0 }, Method::ArimaOptimized, Method::Rnn] {
            let cfg = small_config(method);
            let report = run_monte_carlo_on(&p, &cfg, &no_observer).unwrap();
            let singles: Vec<RunResult> = (0..3).map(|i| run_single(&p, &cfg, i, &no_observer).unwrap()).collect();
            assert_eq!(report.runs, singles);
            for (i, r) in singles.iter().enumerate() {
                assert_eq!(r.seed, derive_seed(cfg.seed, i as u64));
            }
            let recomputed = mean(&singles.iter().map(|r| r.rmse).collect::<Vec<_>>())
                / mean(&singles.iter().map(|r| r.persistence_rmse).collect::<Vec<_>>());
            assert_eq!(report.relative_ratio, recomputed);
        }
    }

    #[test]
    fn fits_never_touch_test_intervals() {
        let p = toy_prepared(1000, noisy);
        for method in [Method::ArimaFixed { p: 1, d: 0, q: 0 }, Method::ArimaOptimized, Method::Rnn] {
            let cfg = small_config(method);
            let events = Mutex::new(Vec::new());
            let observer = |e: FitEvent| events.lock().unwrap().push(e);
            run_monte_carlo_on(&p, &cfg, &observer).unwrap();
            let events = events.into_inner().unwrap();
            assert!(!events.is_empty());
            for e in events {
                let (_, start) = run_placement(&cfg, p.len(), e.run).unwrap();
                assert!(e.range.start >= start && e.range.end <= start + cfg.train_length, "{e:?}");
            }
        }
    }

    #[test]
    fn pinned_origin_aligns_test_windows() {
        let p = toy_prepared(1000, noisy);
        let long = ExperimentConfig { test_origin_min: Some(300), ..small_config(Method::Persistence) };
        let short = ExperimentConfig { train_length: 75, ..long.clone() };
        let a = run_monte_carlo_on(&p, &long, &no_observer).unwrap();
        let b = run_monte_carlo_on(&p, &short, &no_observer).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.start + 300, y.start + 75);
            assert_eq!(x.persistence_rmse, y.persistence_rmse);
        }
        assert!(ExperimentConfig { test_origin_min: Some(10), ..long }.validate().is_err());
    }

    #[test]
    fn n_step_mode_runs() {
        let p = toy_prepared(1000, noisy);
        for method in [Method::Persistence, Method::ArimaFixed { p: 1, d: 0, q: 0 }, Method::Rnn] {
            let cfg = ExperimentConfig { horizon: 3, n_runs: 1, ..small_config(method) };
            let r = run_monte_carlo_on(&p, &cfg, &no_observer).unwrap();
            assert!(r.mean_rmse.is_finite());
        }
    }

    #[test]
    fn insufficient_trace_is_reported() {
        let p = toy_prepared(200, noisy);
        let err = run_monte_carlo_on(&p, &small_config(Method::Persistence), &no_observer).unwrap_err();
        assert!(err.to_string().contains("350"), "{err}");
        assert_eq!(err.kind(), "invalid_argument");
    }

    #[test]
    fn config_validation() {
        let mut c = small_config(Method::ArimaFixed { p: 2, d: 0, q: 0 });
        c.train_length = 5;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig { n_runs: 0, ..small_config(Method::Persistence) }.validate().is_err());
        assert!(ExperimentConfig { test_length: 0, ..small_config(Method::Persistence) }.validate().is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("rnn".parse::<Method>().unwrap(), Method::Rnn);
        assert_eq!("ARIMA(6,1,0)".parse::<Method>().unwrap(), Method::ArimaFixed { p: 6, d: 1, q: 0 });
        assert!("arima(1,2)".parse::<Method>().is_err());
        assert!("lstm".parse::<Method>().is_err());
        assert_eq!("horizon-n".parse::<SweepAxis>().unwrap(), SweepAxis::HorizonN);
    }

    #[test]
    fn config_json_round_trip() {
        let c = small_config(Method::ArimaFixed { p: 6, d: 1, q: 0 });
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"method":{"kind":"rnn"},"n_runs":2}"#).unwrap();
        assert_eq!(partial.method, Method::Rnn);
        assert_eq!(partial.test_length, 2000);
    }

    #[test]
    fn windows_stay_inside_label_runs() {
        let intervals: Vec<IntervalFeatures> = (0..10).map(IntervalFeatures::empty).collect();
        let labels = vec![
            (0, App::Surfing),
            (1, App::Surfing),
            (2, App::Surfing),
            (3, App::Streaming),
            (4, App::Streaming),
            (5, App::Background),
            (6, App::VoiceCall),
            (7, App::VoiceCall),
            (8, App::VoiceCall),
        ];
        let w = labeled_windows(&intervals, &labels, FeatureSet::Fs3, 10.0, 2).unwrap();
        let got: Vec<usize> = w.iter().map(|w| w.label).collect();
        assert_eq!(got, vec![0, 0, 3, 2, 2]);
        assert!(w.iter().all(|w| w.window.n_cols() == 2));
    }

    #[test]
    fn burst_experiment_on_toy_trace() {
        // bursts arrive in long blocks, so both predictors see them coming
        let p = toy_prepared(3000, |i| if (i / 50) % 3 == 0 { 60 } else { 2 });
        let cfg = BurstExperimentConfig {
            train_length: 1500,
            test_length: 500,
            grid_points: 21,
            seed: 4,
            rnn: RnnSettings {
                hidden_size: 6,
                train: TrainConfig { window_length: 6, epochs: 3, learning_rate: 0.01, ..TrainConfig::default() },
            },
            ..BurstExperimentConfig::default()
        };
        let r = run_burst_experiment_on(&p, &cfg).unwrap();
        assert_eq!(r.sweep.reports.len(), 21);
        assert!(r.persistence.recall_burst.unwrap() > 0.9);
        assert_eq!(r.persistence.total(), 500);
    }
}
