use std::path::PathBuf;
use std::process::ExitCode;

use avgfilt::config::{ConfigOverrides, TValues, SEED_ENV};
use avgfilt::output::{emit_results, gnuplot_script};
use avgfilt::{run_experiment, Error, ExperimentConfig, ExperimentKind, OutputFormat, Preset, ResultTable, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avgfilt", version, about = "Run iterate-averaged filtering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scalar 3DVAR and Kalman Monte Carlo runs
    Scalar(RunArgs),
    /// Noiseless squared-bias decay on the diagonal model
    DiagBias(RunArgs),
    /// Variance decay on the diagonal model
    DiagVar(RunArgs),
    /// Plain vs averaged scalar Kalman bias and variance
    KalmanCompare(RunArgs),
    /// Optimal spectral-cutoff risk from averaged observations
    BatchMinimax(RunArgs),
    /// Predicted exponents for each t
    RatesTable(RunArgs),
    /// Write a gnuplot script for a CSV result file
    Plot {
        /// CSV written by one of the experiment subcommands
        csv: PathBuf,
        /// Script path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated norm indices
    #[arg(long, value_delimiter = ',')]
    t: Option<Vec<f64>>,
    #[arg(long = "N")]
    n_modes: Option<usize>,
    #[arg(long)]
    n_steps: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            preset: self.preset,
            n_modes: self.n_modes,
            n_steps: self.n_steps,
            trials: self.trials,
            gamma: self.gamma,
            alpha: self.alpha,
            t: self.t.clone().map(TValues::Many),
            beta: self.beta,
            delta: self.delta,
            seed: self.seed,
            output_path: self.out.clone(),
            format: self.format,
            threads: self.threads,
            ..Default::default()
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV} is not a u64: `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<()> {
    let file = args.config.as_deref().map(ConfigOverrides::from_file).transpose()?;
    if let Some(other) = file.as_ref().and_then(|f| f.experiment).filter(|e| *e != kind) {
        return Err(Error::Config(format!("config file is for `{}`, not `{}`", other.name(), kind.name())));
    }
    let cfg = ExperimentConfig::resolve(kind, file, args.overrides(), env_seed()?)?;
    let out = run_experiment(&cfg)?;
    for note in &out.notes {
        eprintln!("note: {note}");
    }
    match &cfg.output_path {
        Some(path) => emit_results(&out.table, path, cfg.format),
        None => {
            print!("{}", out.table.render(cfg.format));
            Ok(())
        }
    }
}

fn plot(csv: &PathBuf, out: Option<&PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(csv).map_err(|source| Error::Io { path: csv.clone(), source })?;
    let table = ResultTable::from_csv(&text)?;
    let script = gnuplot_script(&table, &csv.display().to_string());
    match out {
        Some(path) => std::fs::write(path, script).map_err(|source| Error::Io { path: path.clone(), source }),
        None => {
            print!("{script}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Scalar(a) => run(ExperimentKind::Scalar, a),
        Command::DiagBias(a) => run(ExperimentKind::DiagBias, a),
        Command::DiagVar(a) => run(ExperimentKind::DiagVar, a),
        Command::KalmanCompare(a) => run(ExperimentKind::KalmanCompare, a),
        Command::BatchMinimax(a) => run(ExperimentKind::BatchMinimax, a),
        Command::RatesTable(a) => run(ExperimentKind::RatesTable, a),
        Command::Plot { csv, out } => plot(csv, out.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
