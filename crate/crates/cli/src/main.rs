use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use srs_sense::movement::{EnergyConfig, SampleGeometry};
use srs_sense::nn::GroupBy;
use srs_sense_cli::*;

#[derive(Parser)]
#[command(name = "srs-sense", version, about = "Sleep sensing from uplink sounding CSI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a CSI trace and its ground truth from a JSON config.
    Simulate {
        config: PathBuf,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the respiration rate over a window of a trace.
    Estimate {
        trace: PathBuf,
        /// Window in seconds, `start,end` (default: whole trace).
        #[arg(long, value_parser = parse_pair)]
        window: Option<(f64, f64)>,
        /// Respiration band in Hz, `low,high`.
        #[arg(long, value_parser = parse_pair, default_value = "0.1,0.5")]
        band: (f64, f64),
        /// Estimate JSON path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the filtered series as CSV (`t,x_a,x_p`).
        #[arg(long)]
        emit_series: Option<PathBuf>,
    },
    /// Cut labelled classifier samples from traces with truth sidecars.
    Dataset {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Static baseline in seconds, `start,end`.
        #[arg(long, value_parser = parse_pair)]
        baseline: Option<(f64, f64)>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        energy: EnergyArgs,
        #[arg(long, default_value_t = SampleGeometry::default().freq_bins)]
        freq_bins: usize,
        #[arg(long, default_value_t = SampleGeometry::default().time_steps)]
        time_steps: usize,
    },
    /// Train the classifier on a dataset directory.
    Train {
        dataset: PathBuf,
        config: PathBuf,
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
        /// Model file.
        #[arg(long)]
        out: PathBuf,
        /// Held-out dataset directory (default: split the training set).
        #[arg(long)]
        test: Option<PathBuf>,
        /// Report JSON path (default: `<model>.report.json`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a model on a dataset directory.
    Eval {
        model: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        group_by: Option<GroupBy>,
        /// Metrics JSON path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long, default_value_t = EnergyConfig::default().window_w)]
    window_w: usize,
    #[arg(long, default_value_t = EnergyConfig::default().threshold_k)]
    threshold_k: f64,
    #[arg(long, default_value_t = EnergyConfig::default().min_event_s)]
    min_event: f64,
    #[arg(long, default_value_t = EnergyConfig::default().merge_gap_s)]
    merge_gap: f64,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            cmd_simulate(&SimulateArgs { config, seed, out })?;
        }
        Command::Estimate {
            trace,
            window,
            band,
            out,
            emit_series,
        } => {
            let print = out.is_none();
            let (record, _) = cmd_estimate(&EstimateArgs {
                trace,
                window,
                band,
                out,
                emit_series,
            })?;
            if print {
                print!("{}", pretty(&record));
            }
        }
        Command::Dataset {
            traces,
            baseline,
            out,
            energy,
            freq_bins,
            time_steps,
        } => {
            let (entries, _) = cmd_dataset(&DatasetArgs {
                traces,
                baseline,
                out,
                energy: EnergyConfig {
                    window_w: energy.window_w,
                    threshold_k: energy.threshold_k,
                    min_event_s: energy.min_event,
                    merge_gap_s: energy.merge_gap,
                },
                geometry: SampleGeometry { freq_bins, time_steps },
            })?;
            let samples = entries.iter().filter(|e| e.file.is_some()).count();
            eprintln!("{samples} samples, {} manifest rows", entries.len());
        }
        Command::Train {
            dataset,
            config,
            seed,
            out,
            test,
            report,
        } => {
            let (report, _) = cmd_train(&TrainArgs {
                dataset,
                config,
                seed,
                out,
                test,
                report,
            })?;
            if let Some(acc) = report.test_accuracy.last().or(report.train_accuracy.last()) {
                eprintln!("final accuracy {acc:.4}");
            }
        }
        Command::Eval {
            model,
            dataset,
            group_by,
            out,
        } => {
            let print = out.is_none();
            let (report, _) = cmd_eval(&EvalArgs {
                model,
                dataset,
                group_by,
                out,
            })?;
            if print {
                print!("{}", pretty(&report));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
