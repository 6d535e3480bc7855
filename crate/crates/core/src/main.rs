use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fewnet::evaluation::{self, MetricReport, MetricRow};
use fewnet::experiment::{self, Stage};
use fewnet::modwt::{self, FilterName};
use fewnet::series;

#[derive(Parser)]
#[command(name = "fewnet", version, about = "Wavelet ensemble forecasting of monthly inflation")]
struct Cli {
    /// Directory for output files (default: current directory or stdout).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config end to end.
    Run { config: PathBuf },
    /// Check a config and list every problem.
    Validate { config: PathBuf },
    /// Write the MODWT multiresolution analysis of a series as CSV.
    Decompose {
        series: PathBuf,
        #[arg(long, default_value = "haar")]
        filter: FilterName,
        /// Depth; defaults to floor(ln N).
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, default_value = "date")]
        date_column: String,
        #[arg(long, default_value = "value")]
        value_column: String,
    },
    /// Score forecasts (`model_name,step,value`) against actuals
    /// (`step,value`).
    Metrics {
        actual: PathBuf,
        forecast: PathBuf,
        /// Training series (`date,value`) for MASE and MDRAE.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seasonal_lag: usize,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            code: stage.exit_code() as u8,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config } => {
            let out = cli.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let report = experiment::run_from_file(config, &out, cli.seed)
                .map_err(|e| Failure::new(e.stage, e.to_string()))?;
            for m in &report.models {
                eprintln!(
                    "{:<16} rmse {:.4}  smape {:.2}%",
                    m.name, m.metrics.rmse, m.metrics.smape_percent
                );
            }
            eprintln!("wrote outputs to {}", out.display());
            Ok(())
        }
        Command::Validate { config } => match experiment::validate_config(config) {
            Ok(_) => {
                println!("ok");
                Ok(())
            }
            Err(issues) => {
                let lines: Vec<String> = issues.iter().map(ToString::to_string).collect();
                Err(Failure::new(Stage::Config, format!("invalid config:\n  {}", lines.join("\n  "))))
            }
        },
        Command::Decompose {
            series: path,
            filter,
            levels,
            date_column,
            value_column,
        } => {
            let data = |e: fewnet::Error| Failure::new(Stage::Data, e.to_string());
            let s = series::load_csv(path, date_column, value_column).map_err(data)?;
            let k = match levels {
                Some(k) => *k,
                None => modwt::default_level(s.len()).map_err(data)?,
            };
            let mra = modwt::decompose(s.values(), &modwt::filter_coefficients(*filter), k).map_err(data)?;
            let mut buf = Vec::new();
            mra.write_csv(&mut buf).map_err(data)?;
            emit(cli.output_dir.as_deref(), "mra.csv", &buf)
        }
        Command::Metrics {
            actual,
            forecast,
            train,
            seasonal_lag,
        } => {
            let data = |e: fewnet::Error| Failure::new(Stage::Data, e.to_string());
            let actual = read_actual(actual).map_err(data)?;
            let m = actual.len();
            let forecasts = experiment::read_external_forecasts(forecast, m).map_err(data)?;
            let train = train
                .as_ref()
                .map(|p| series::load_csv(p, "date", "value"))
                .transpose()
                .map_err(data)?;
            let eval = |e: fewnet::Error| Failure::new(Stage::Evaluation, e.to_string());
            let mut rows = Vec::new();
            for (name, f) in forecasts {
                let metrics = match &train {
                    Some(t) => {
                        let naive = fewnet::baselines::rw_forecast(t.values(), m).map_err(eval)?;
                        evaluation::compute_metrics(&actual, &f, t.values(), *seasonal_lag, &naive).map_err(eval)?
                    }
                    None => MetricReport {
                        rmse: evaluation::rmse(&actual, &f).map_err(eval)?,
                        mase: None,
                        smape_percent: evaluation::smape_percent(&actual, &f).map_err(eval)?,
                        theils_u1: evaluation::theils_u1(&actual, &f).ok(),
                        mdrae: None,
                        mdape: evaluation::mdape(&actual, &f).ok(),
                    },
                };
                rows.push(MetricRow {
                    model: name,
                    horizon: m,
                    metrics,
                });
            }
            let mut buf = Vec::new();
            evaluation::write_metrics_csv(&rows, &mut buf).map_err(eval)?;
            emit(cli.output_dir.as_deref(), "metrics.csv", &buf)
        }
    }
}

/// Actual values in a `step,value` CSV, steps `1..=m` in any order.
fn read_actual(path: &Path) -> fewnet::Result<Vec<f64>> {
    #[derive(serde::Deserialize)]
    struct Row {
        step: usize,
        value: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| fewnet::Error::Parse(e.to_string()))?;
    let mut rows: Vec<Row> = Vec::new();
    for (i, r) in reader.deserialize().enumerate() {
        rows.push(r.map_err(|e: csv::Error| fewnet::Error::Format {
            row: i + 2,
            message: e.to_string(),
        })?);
    }
    rows.sort_by_key(|r| r.step);
    for (i, r) in rows.iter().enumerate() {
        if r.step != i + 1 {
            return Err(fewnet::Error::Format {
                row: i + 2,
                message: format!("steps must run 1..={} without gaps", rows.len()),
            });
        }
    }
    Ok(rows.into_iter().map(|r| r.value).collect())
}

fn emit(dir: Option<&Path>, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    let out = |e: io::Error| Failure::new(Stage::Output, e.to_string());
    match dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(out)?;
            fs::write(d.join(name), bytes).map_err(out)
        }
        None => io::stdout().write_all(bytes).map_err(out),
    }
}
