//! `hifloc` - config-driven pipeline for localizing high-impedance faults
//! from feederhead V-I trajectories.
//!
//! Exit codes: 0 on success, 1 on an operational failure (all items failed,
//! bad data, I/O), 2 on a configuration error.

use clap::{Parser, Subcommand, ValueEnum};
use hifloc_core::pipeline::{
    format_report, run_eval, run_fit, run_ingest, run_plot_data, run_simulate, run_train,
    write_report, PipelineConfig, PipelineError,
};
use hifloc_core::prep::FitMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hifloc",
    version,
    about = "High-impedance fault localization from V-I trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Linear,
    Quadratic,
}

impl From<ModeArg> for FitMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Linear => FitMode::Linear,
            ModeArg::Quadratic => FitMode::Quadratic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured fault scenarios into trajectory CSVs plus a
    /// manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the dataset.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a trajectory dataset against its manifest.
    Ingest {
        /// Dataset directory holding the trajectory CSVs.
        #[arg(long)]
        dir: PathBuf,
        /// Manifest path; defaults to `<dir>/manifest.jsonl`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fit every trajectory and emit per-trajectory fit JSON plus the
    /// feature CSV.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the configured approximation family.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Turn per-trajectory failures into a fatal error.
        #[arg(long)]
        strict: bool,
    },
    /// Train the one-vs-one SVM on a feature CSV and report held-out
    /// accuracy.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a stored model against an external feature CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Optional path for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a measured-vs-fitted overlay CSV for one trajectory.
    PlotData {
        /// Config used for the lower-branch extraction; defaults apply when
        /// omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let config = PipelineConfig::from_file(&config)?;
            let summary = run_simulate(&config, &out)?;
            println!(
                "wrote {} trajectories for {} scenarios to {} ({:.1} ms)",
                summary.n_trajectories,
                summary.n_scenarios,
                out.display(),
                summary.elapsed_ms
            );
            println!("manifest: {}", summary.manifest.display());
        }
        Command::Ingest { dir, manifest } => {
            let manifest = manifest.unwrap_or_else(|| dir.join("manifest.jsonl"));
            let (_, summary) = run_ingest(&dir, &manifest)?;
            println!(
                "{} trajectories, {} samples, {} labels: {:?}",
                summary.n_trajectories,
                summary.n_samples,
                summary.labels.len(),
                summary.labels
            );
        }
        Command::Fit {
            config,
            dir,
            manifest,
            out,
            mode,
            strict,
        } => {
            let mut config = PipelineConfig::from_file(&config)?;
            if let Some(mode) = mode {
                config.prep.mode = mode.into();
            }
            let manifest = manifest.unwrap_or_else(|| dir.join("manifest.jsonl"));
            let (dataset, _) = run_ingest(&dir, &manifest)?;
            let (features, summary) = run_fit(&dataset, &config, &out, strict)?;
            println!(
                "fitted {} trajectories ({} failed), {} features each, {:.1} us/trajectory",
                summary.n_ok,
                summary.n_failed,
                features.first().map_or(0, |f| f.dim()),
                summary.per_trajectory_us
            );
            for (file, message) in &summary.failures {
                eprintln!("  failed {file}: {message}");
            }
            println!("features: {}", out.join("features.csv").display());
        }
        Command::Train {
            config,
            features,
            out,
        } => {
            let config = PipelineConfig::from_file(&config)?;
            let vectors = hifloc_core::io::read_features_csv(&features)?;
            let (model, report) = run_train(&vectors, &config, &out)?;
            print!("{}", format_report(&report));
            println!(
                "model ({} classes, {} pairwise SVMs): {}",
                model.labels.len(),
                model.pairs.len(),
                out.join("model.json").display()
            );
            println!("report: {}", out.join("report.json").display());
        }
        Command::Eval {
            model,
            features,
            out,
        } => {
            let report = run_eval(&model, &features)?;
            print!("{}", format_report(&report));
            if let Some(out) = out {
                write_report(&out, &report)?;
                println!("report: {}", out.display());
            }
        }
        Command::PlotData {
            config,
            trajectory,
            fit,
            out,
        } => {
            let config = match config {
                Some(path) => PipelineConfig::from_file(&path)?,
                None => PipelineConfig::default(),
            };
            run_plot_data(&trajectory, &fit, &config, &out)?;
            println!("overlay: {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ PipelineError::Config { .. }) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
