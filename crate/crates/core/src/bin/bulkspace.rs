use std::path::PathBuf;
use std::process::ExitCode;

use bulkspace::error::Error;
use bulkspace::harness::{
    available_charts, emit_plots, run_experiment, ExperimentConfig, ExperimentKind,
};
use bulkspace::problems::make_two_moons;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bulkspace",
    version,
    about = "Dominant/bulk subspace optimizer experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics output (JSON lines); defaults to `<experiment>_metrics.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for SVG charts.
    #[arg(long)]
    plots: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    Prop1(RunArgs),
    Dichotomy(RunArgs),
    Sweep(RunArgs),
    Train(RunArgs),
    Agreement(RunArgs),
    Variance(RunArgs),
    QuantCompare(RunArgs),
    /// Writes a two-moons dataset as CSV.
    MakeMoons {
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Poisoned(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "config is for {} but {kind} was requested",
            cfg.experiment
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.metrics_path.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("{kind}_metrics.jsonl")));
    let plots = args
        .plots
        .or_else(|| cfg.plots_path.as_ref().map(PathBuf::from));
    let outcome = run_experiment(&cfg)?;
    let summary = outcome.write(&out)?;
    if let Some(dir) = plots {
        let charts = available_charts(&outcome.records);
        let fit = Some((cfg.probe.fit_from, cfg.probe.fit_to));
        for p in emit_plots(&out, kind, &charts, fit, &dir)? {
            eprintln!("wrote {}", p.display());
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.summary).map_err(|e| Error::Io(e.to_string()))?
    );
    eprintln!("wrote {} and {}", out.display(), summary.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prop1(a) => run(ExperimentKind::Prop1, a),
        Command::Dichotomy(a) => run(ExperimentKind::Dichotomy, a),
        Command::Sweep(a) => run(ExperimentKind::Sweep, a),
        Command::Train(a) => run(ExperimentKind::Train, a),
        Command::Agreement(a) => run(ExperimentKind::Agreement, a),
        Command::Variance(a) => run(ExperimentKind::Variance, a),
        Command::QuantCompare(a) => run(ExperimentKind::QuantCompare, a),
        Command::MakeMoons {
            n,
            noise,
            seed,
            out,
        } => make_two_moons(n, noise, seed).and_then(|d| d.write_csv(&out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
