//! Command-line front end for trafficcast.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use trafficcast::arima::{self, ArimaModel, ArimaOrder};
use trafficcast::features::{build_matrix, FeatureSet};
use trafficcast::harness::{
    self, BurstExperimentConfig, ClassExperimentConfig, ExperimentConfig, HarnessError, Prepared, SweepAxis, TraceSource,
};
use trafficcast::ingest::{self, IntervalFeatures, Target};
use trafficcast::rnn::{self, GruNetwork};
use trafficcast::synth;

#[derive(Parser)]
#[command(name = "trafficcast", version, about = "Cellular traffic forecasting, burst prediction and app classification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Interval length in seconds.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Feature set, fs1..fs6.
    #[arg(long, global = true)]
    feature_set: Option<FeatureSet>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RnnArgs {
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Random subset of training windows visited per epoch.
    #[arg(long)]
    max_samples: Option<usize>,
}

impl RnnArgs {
    fn apply(&self, s: &mut harness::RnnSettings) {
        if let Some(v) = self.hidden {
            s.hidden_size = v;
        }
        let t = &mut s.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.window {
            t.window_length = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if self.max_samples.is_some() {
            t.max_samples_per_epoch = self.max_samples;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace (trace.csv) and its labels (labels.csv).
    Synth {
        /// Length of a bursty user-style trace in days.
        #[arg(long, default_value_t = 1.0)]
        days: f64,
        /// Generate a balanced four-app mixture with this many hours per app instead.
        #[arg(long)]
        hours_per_app: Option<f64>,
    },
    /// Bin a trace into per-interval features (features.csv).
    Bin {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Fit one ARIMA order to a trace's UL counts (arima_model.json).
    FitArima {
        #[arg(long)]
        trace: PathBuf,
        /// Order as p,d,q.
        #[arg(long, value_parser = parse_order)]
        order: ArimaOrder,
    },
    /// Score every order of the default grid (grid.csv, grid.json).
    GridSearch {
        #[arg(long)]
        trace: PathBuf,
        /// Fraction of the series held out for validation.
        #[arg(long, default_value_t = 0.2)]
        validate_fraction: f64,
    },
    /// Train a forecasting network on a whole trace (rnn_model.json).
    TrainRnn {
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        rnn: RnnArgs,
    },
    /// Forecast the intervals after a trace with a saved model (forecast.csv).
    Forecast {
        /// arima_model.json or rnn_model.json.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
    },
    /// Burst prediction threshold sweep (burst_report.json, burst_sweep.csv).
    BurstSweep {
        #[arg(long)]
        burst_sd_multiple: Option<f64>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        rnn: RnnArgs,
    },
    /// Train and evaluate the app classifier (class_report.json).
    Classify {
        /// Decision intervals in seconds, comma separated.
        #[arg(long, value_delimiter = ',')]
        decision_intervals: Option<Vec<f64>>,
        #[arg(long)]
        shuffle_labels: bool,
        #[command(flatten)]
        rnn: RnnArgs,
    },
    /// Monte Carlo forecasting benchmark (report.json, runs.csv).
    Benchmark {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// One benchmark per value of an axis (sweep.json, sweep.csv).
    Sweep {
        /// tau, train_length, horizon_n, feature_set or method.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; commas inside parentheses are kept.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        exp: ExpArgs,
    },
}

#[derive(Args)]
struct ExpArgs {
    /// persistence, arima, arima(p,d,q) or rnn.
    #[arg(long)]
    method: Option<harness::Method>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    train_length: Option<usize>,
    #[arg(long)]
    test_length: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[command(flatten)]
    rnn: RnnArgs,
}

fn split_values(s: &str) -> Result<Vec<String>, HarnessError> {
    let mut out = vec![String::new()];
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(String::new());
                continue;
            }
            _ => {}
        }
        out.last_mut().expect("non-empty").push(c);
    }
    if out.iter().any(|v| v.trim().is_empty()) {
        return Err(HarnessError::InvalidArgument(format!("empty sweep value in {s:?}")));
    }
    Ok(out.into_iter().map(|v| v.trim().to_string()).collect())
}

fn parse_order(s: &str) -> Result<ArimaOrder, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("order must be p,d,q, got {s:?}"))?;
    match v[..] {
        [p, d, q] => Ok(ArimaOrder::new(p, d, q)),
        _ => Err(format!("order must be p,d,q, got {s:?}")),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, HarnessError> {
    match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| HarnessError::InvalidArgument(format!("config {}: {e}", p.display()))),
        None => Ok(T::default()),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(dir, name, &text)
}

fn read_intervals(trace: &Path, tau: f64) -> Result<Vec<IntervalFeatures>, HarnessError> {
    let records = ingest::parse_trace(BufReader::new(fs::File::open(trace)?))?;
    let horizon = ingest::trace_horizon(&records, tau);
    Ok(ingest::bin_intervals(&records, tau, horizon)?)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let g = &cli.global;
    let tau = g.tau.unwrap_or(ingest::DEFAULT_TAU);
    let fs = g.feature_set.unwrap_or(FeatureSet::Fs5);
    let seed = g.seed.unwrap_or(0);
    let out = &g.out;
    match cli.command {
        Command::Synth { days, hours_per_app } => {
            let schedule = match hours_per_app {
                Some(h) => synth::classification_schedule(h, seed),
                None => synth::bursty_schedule(days, seed),
            };
            let mix = synth::generate_mixture(&schedule, tau, seed)?;
            fs::create_dir_all(out)?;
            let path = out.join("trace.csv");
            let mut w = BufWriter::new(fs::File::create(&path)?);
            ingest::write_trace(&mix.records, &mut w)?;
            w.flush()?;
            eprintln!("wrote {} ({} packets)", path.display(), mix.records.len());
            write_file(out, "labels.csv", &synth::labels_to_string(&mix.labels))?;
        }
        Command::Bin { trace } => {
            let matrix = build_matrix(&read_intervals(&trace, tau)?, fs, tau)?;
            let mut buf = Vec::new();
            matrix.write_csv(&mut buf)?;
            write_file(out, "features.csv", &String::from_utf8(buf).expect("ascii"))?;
        }
        Command::FitArima { trace, order } => {
            let series = Target::UlCount.extract(&read_intervals(&trace, tau)?);
            let model = arima::fit_arima(&series, order)?;
            write_json(out, "arima_model.json", &model)?;
        }
        Command::GridSearch { trace, validate_fraction } => {
            if !(validate_fraction > 0.0 && validate_fraction < 1.0) {
                return Err(HarnessError::InvalidArgument("validate_fraction must be in (0, 1)".into()));
            }
            let series = Target::UlCount.extract(&read_intervals(&trace, tau)?);
            let split = ((series.len() as f64) * (1.0 - validate_fraction)).round() as usize;
            let search = arima::grid_search(&series[..split], &series[split..], &arima::default_grid())?;
            write_file(out, "grid.csv", &search.to_csv())?;
            write_json(out, "grid.json", &search)?;
            println!("best {} rmse {}", search.best, search.best_rmse());
        }
        Command::TrainRnn { trace, rnn } => {
            let intervals = read_intervals(&trace, tau)?;
            let prepared = Prepared::new(&intervals, fs, tau, Target::UlCount)?;
            let mut settings = load_config::<harness::RnnSettings>(&g.config)?;
            rnn.apply(&mut settings);
            let (net, losses) = harness::train_forecaster(&prepared, 0..prepared.len(), &settings, seed, &|_| {})?;
            write_file(out, "rnn_model.json", &net.to_json())?;
            let mut csv = String::from("epoch,loss\n");
            for (i, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l}\n"));
            }
            write_file(out, "train_loss.csv", &csv)?;
        }
        Command::Forecast { model, trace, steps } => {
            let text = fs::read_to_string(&model)?;
            let intervals = read_intervals(&trace, tau)?;
            let values = if text.contains("\"trafficcast-gru\"") {
                let net = GruNetwork::from_json(&text)?;
                let fs = feature_set_of(&net)?;
                let matrix = build_matrix(&intervals, fs, tau)?;
                rnn::predict_next(&net, &matrix, steps)?
            } else {
                let model: ArimaModel = serde_json::from_str(&text)
                    .map_err(|e| HarnessError::InvalidArgument(format!("model {}: {e}", model.display())))?;
                arima::forecast(&model, &Target::UlCount.extract(&intervals), steps)?
            };
            let mut csv = String::from("step,interval,prediction\n");
            for (k, v) in values.iter().enumerate() {
                csv.push_str(&format!("{},{},{}\n", k + 1, intervals.len() + k, v));
            }
            write_file(out, "forecast.csv", &csv)?;
        }
        Command::BurstSweep { burst_sd_multiple, trace, rnn } => {
            let mut c: BurstExperimentConfig = load_config(&g.config)?;
            set(&mut c.tau, g.tau);
            set(&mut c.feature_set, g.feature_set);
            set(&mut c.seed, g.seed);
            set(&mut c.burst_sd_multiple, burst_sd_multiple);
            if let Some(path) = trace {
                c.source = TraceSource::File { path };
            }
            rnn.apply(&mut c.rnn);
            let report = harness::run_burst_experiment(&c)?;
            let mut buf = Vec::new();
            report.sweep.write_csv(&mut buf)?;
            write_file(out, "burst_sweep.csv", &String::from_utf8(buf).expect("ascii"))?;
            write_json(out, "burst_report.json", &report)?;
            println!(
                "crossover θ {:?}, burst recall {:?}; persistence burst recall {:?}",
                report.sweep.crossover, report.crossover_recall_burst, report.persistence.recall_burst
            );
        }
        Command::Classify { decision_intervals, shuffle_labels, rnn } => {
            let mut c: ClassExperimentConfig = load_config(&g.config)?;
            set(&mut c.tau, g.tau);
            set(&mut c.feature_set, g.feature_set);
            set(&mut c.seed, g.seed);
            set(&mut c.decision_intervals_s, decision_intervals);
            c.shuffle_labels |= shuffle_labels;
            rnn.apply(&mut c.rnn);
            let report = harness::run_class_experiment(&c)?;
            write_json(out, "class_report.json", &report)?;
            for r in &report.reports {
                println!("decision interval {} s: accuracy {:.4}", r.decision_interval_s, r.accuracy);
            }
        }
        Command::Benchmark { exp } => {
            let c = experiment_config(g, &exp)?;
            let report = harness::run_monte_carlo(&c)?;
            eprintln!("wall time {:.1} s", report.wall_time_s);
            write_file(out, "report.json", &(report.to_json() + "\n"))?;
            let mut csv = String::from("run,start,rmse,persistence_rmse\n");
            for r in &report.runs {
                csv.push_str(&format!("{},{},{},{}\n", r.run, r.start, r.rmse, r.persistence_rmse));
            }
            write_file(out, "runs.csv", &csv)?;
            println!(
                "{}: mean RMSE {:.4}, persistence {:.4}, ratio {:.4}",
                report.method, report.mean_rmse, report.persistence_mean_rmse, report.relative_ratio
            );
        }
        Command::Sweep { axis, values, exp } => {
            let c = experiment_config(g, &exp)?;
            let table = harness::sweep(&c, axis, &split_values(&values)?)?;
            write_file(out, "sweep.csv", &table.to_csv())?;
            write_json(out, "sweep.json", &table)?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn experiment_config(g: &Global, exp: &ExpArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut c: ExperimentConfig = load_config(&g.config)?;
    set(&mut c.tau, g.tau);
    set(&mut c.feature_set, g.feature_set);
    set(&mut c.seed, g.seed);
    set(&mut c.method, exp.method);
    set(&mut c.n_runs, exp.runs);
    set(&mut c.train_length, exp.train_length);
    set(&mut c.test_length, exp.test_length);
    set(&mut c.horizon, exp.horizon);
    if let Some(path) = &exp.trace {
        c.source = TraceSource::File { path: path.clone() };
    }
    exp.rnn.apply(&mut c.rnn);
    c.validate()?;
    Ok(c)
}

/// The feature set whose rows match the network's inputs.
fn feature_set_of(net: &GruNetwork) -> Result<FeatureSet, HarnessError> {
    FeatureSet::ALL
        .into_iter()
        .find(|fs| fs.feature_names() == net.input_names)
        .ok_or_else(|| HarnessError::InvalidArgument("model inputs match no feature set".into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
