use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lattrack::error::Error;
use lattrack::harness::{
    emit_plot_data, run_ablation, run_multi_robot, run_single_robot, write_report, ExperimentConfig, PlotKind,
};

/// Latency-aware target tracking experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SOE against DOE for one robot on identical measurements.
    Single(Common),
    /// Networked robots with consensus fusion and formation control.
    Multi(Common),
    /// Monte-Carlo grid over estimator, blend parameter and fusion.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration. Built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed. Overrides `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `simulation.dt`.
    #[arg(long)]
    dt: Option<f64>,
    /// Overrides `simulation.horizon`.
    #[arg(long)]
    horizon: Option<f64>,
    /// Overrides `simulation.runs`.
    #[arg(long)]
    runs: Option<usize>,
    /// Also write an SVG next to each plot CSV.
    #[arg(long)]
    svg: bool,
}

impl Common {
    fn config(&self, defaults: ExperimentConfig) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => defaults.overlay_file(path)?,
            None => defaults,
        };
        if let Some(dt) = self.dt {
            cfg.simulation.dt = dt;
        }
        if let Some(h) = self.horizon {
            cfg.simulation.horizon = h;
        }
        if let Some(r) = self.runs {
            cfg.simulation.runs = r;
        }
        if let Some(seed) = self.seed {
            cfg.simulation.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Single(a) => {
            let cfg = a.config(ExperimentConfig::single_robot())?;
            let out = run_single_robot(&cfg, cfg.simulation.seed)?;
            let traces = [
                (out.soe.label.as_str(), out.soe.trace.as_ref().expect("traced")),
                (out.doe.label.as_str(), out.doe.trace.as_ref().expect("traced")),
            ];
            announce(&emit_plot_data(&traces, PlotKind::SingleRobot, &a.out, a.svg)?);
            announce(&write_report(&out.report, &a.out)?);
            print!("{}", out.report.table());
        }
        Command::Multi(a) => {
            let cfg = a.config(ExperimentConfig::default())?;
            let out = run_multi_robot(&cfg, cfg.simulation.seed)?;
            let trace = out.outcome.trace.as_ref().expect("traced");
            let traces = [(out.outcome.label.as_str(), trace)];
            let mut kinds = vec![PlotKind::EstimationError, PlotKind::Formation];
            if !trace.consensus.is_empty() {
                kinds.push(PlotKind::Consensus);
            }
            for kind in kinds {
                announce(&emit_plot_data(&traces, kind, &a.out, a.svg)?);
            }
            announce(&write_report(&out.report, &a.out)?);
            print!("{}", out.report.table());
        }
        Command::Ablate(a) => {
            let cfg = a.config(ExperimentConfig::default())?;
            let report = run_ablation(&cfg, cfg.simulation.seed, cfg.simulation.runs, true)?;
            announce(&write_report(&report, &a.out)?);
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
