use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cmrecover::experiment::{reference_runs, run_experiment, run_qgrids, ExperimentConfig, ExperimentReport};

/// Environment variable overriding the output directory.
const OUT_DIR_ENV: &str = "CMRECOVER_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "cmrecover", version, about = "Recover dissipated cavity-field states with optimized conditional measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory (overrides the config and $CMRECOVER_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the optimizer; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write Q-function grids only.
    Qgrid {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in reproductions of the worked example.
    ReproPaper {
        /// Run only the named reproduction.
        #[arg(long)]
        only: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn out_dir(cli: Option<&PathBuf>, config: Option<&ExperimentConfig>) -> PathBuf {
    cli.cloned()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn init_threads(threads: Option<usize>) -> Result<(), String> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn summarize(name: &str, dir: &Path, report: &ExperimentReport) {
    println!("== {name} -> {}", dir.display());
    println!(
        "   d0 = {:.6}  filtering probability = {:.4}",
        report.d0, report.filtering_probability
    );
    for r in &report.records {
        println!(
            "   step {}: d = {:.6}  P = {:.4}  P_seq = {:.4}",
            r.step_index, r.distance_after, r.step_probability, r.sequence_probability
        );
    }
    match report.reduction_factor {
        Some(f) => println!("   reduction factor = {f:.3} (stop: {:?})", report.stop_reason),
        None => println!("   reduction factor undefined (stop: {:?})", report.stop_reason),
    }
    for inj in &report.injected {
        match (inj.probability, inj.reduction_factor) {
            (Some(p), Some(f)) => println!("   injected candidate: P = {p:.4}, reduction = {f:.3}"),
            _ => println!(
                "   injected candidate failed: {}",
                inj.error.as_deref().unwrap_or("undefined reduction")
            ),
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config, common } => {
            init_threads(common.threads)?;
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir(common.out.as_ref(), Some(&cfg));
            let report = run_experiment(&cfg, &dir)?;
            summarize(&config.display().to_string(), &dir, &report);
        }
        Command::Qgrid { config, common } => {
            init_threads(common.threads)?;
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir(common.out.as_ref(), Some(&cfg));
            for p in run_qgrids(&cfg, &dir)? {
                println!("{}", p.display());
            }
        }
        Command::ReproPaper { only, common } => {
            init_threads(common.threads)?;
            let root = out_dir(common.out.as_ref(), None);
            let runs = reference_runs();
            if let Some(name) = &only {
                if !runs.iter().any(|(n, _)| n == name) {
                    let names: Vec<_> = runs.iter().map(|(n, _)| *n).collect();
                    return Err(format!("unknown reproduction `{name}` (one of {names:?})").into());
                }
            }
            for (name, cfg) in runs {
                if only.as_deref().is_some_and(|o| o != name) {
                    continue;
                }
                let dir = root.join(name);
                let report = run_experiment(&cfg, &dir)?;
                summarize(name, &dir, &report);
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
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
