//! Command-line entry point: `train`, `sweep`, `ablate`, `reinit-study`,
//! and `compensate-study`, each taking `--config`, `--seed`, `--out`, and
//! repeated `--set key=value` overrides.

use clap::{Args, Parser, Subcommand};
use memsim::config::{ExperimentConfig, ExperimentKind};
use memsim::harness::{run_experiment, ExperimentOutcome};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "memsim", version, about = "Memristor crossbar simulator and in-situ trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<String>,
    /// Additional `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network per the configuration.
    Train(CommonArgs),
    /// Device-level pulse sweep trajectories.
    Sweep(CommonArgs),
    /// Run the ablation matrix.
    Ablate(CommonArgs),
    /// Re-initialization convergence study.
    ReinitStudy(CommonArgs),
    /// Compensation update precision study.
    CompensateStudy(CommonArgs),
}

fn build_config(args: &CommonArgs, kind: ExperimentKind) -> Result<ExperimentConfig, memsim::Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::parse(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = kind;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    for (i, s) in args.sets.iter().enumerate() {
        let (k, v) = s.split_once('=').ok_or(memsim::Error::Config {
            line: i + 1,
            message: format!("--set expects key=value, got `{s}`"),
        })?;
        cfg.set(k.trim(), v.trim(), 0)?;
    }
    Ok(cfg)
}

fn run(args: &CommonArgs, kind: ExperimentKind) -> Result<(), memsim::Error> {
    let cfg = build_config(args, kind)?;
    let out = cfg.out.clone();
    match run_experiment(&cfg)? {
        ExperimentOutcome::Train(report) => {
            for r in &report.reinit {
                println!(
                    "reinit layer {}: {} cycles, std {:.4} (target {:.4}), {} pulses",
                    r.layer, r.cycles, r.final_std, r.target_std, r.pulses
                );
            }
            for (e, acc) in report.accuracy.iter().enumerate() {
                println!(
                    "epoch {e:>3}  accuracy {:.4}  loss {:.4}",
                    acc, report.train_loss[e]
                );
            }
            println!(
                "final accuracy {:.4}, convergence epoch {}, wall clock {:.1}s",
                report.accuracy.last().unwrap_or(&f64::NAN),
                report.convergence_epoch,
                report.wall_clock_secs
            );
        }
        ExperimentOutcome::Sweep(records) => {
            println!("{} sweep records", records.len());
        }
        ExperimentOutcome::ReinitStudy(r) => {
            println!(
                "reinit {}x{} at {}x D2D: {} cycles, std {:.4} (target {:.4}), {:.2} pulses/cell",
                r.rows, r.cols, r.d2d_scale, r.cycles, r.final_std, r.target_std, r.pulses_per_cell
            );
        }
        ExperimentOutcome::CompensationStudy(bins) => {
            for b in &bins {
                println!(
                    "omega [{:.1},{:.1}): err plain {:.4} / comp {:.4}, comp pulses {:.1}",
                    b.omega_lo, b.omega_hi, b.mean_abs_err_plain, b.mean_abs_err_comp, b.mean_pulses_comp
                );
            }
        }
        ExperimentOutcome::Ablation(rows) => {
            for r in &rows {
                println!(
                    "{:<12} {}  accuracy {:.4}  pulses {}",
                    r.name, r.status, r.final_accuracy, r.pulses_total
                );
            }
        }
    }
    println!("outputs written to {out}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => run(a, ExperimentKind::Train),
        Command::Sweep(a) => run(a, ExperimentKind::DeviceSweep),
        Command::Ablate(a) => run(a, ExperimentKind::AblationMatrix),
        Command::ReinitStudy(a) => run(a, ExperimentKind::ReinitStudy),
        Command::CompensateStudy(a) => run(a, ExperimentKind::CompensationStudy),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
