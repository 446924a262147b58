//! Command-line interface to the variational Monte Carlo engine.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vmc_core::runner::{
    cmd_evaluate, cmd_pretrain, cmd_scan, cmd_train, parse_grid, run_all_checks, CheckScale,
    RunConfig,
};

/// Hartree to eV, for display at the CLI boundary only.
const HA_TO_EV: f64 = 27.211386245988;

#[derive(Parser)]
#[command(
    name = "vmc",
    about = "Variational Monte Carlo with a geometry-conditioned neural wave function",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run pretraining (if enabled) and the variational optimization loop.
    Train {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Resume from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run only the supervised orbital pretraining, then checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a trained checkpoint at one geometry.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        /// Geometry spec: a template parameter like `diatomic:1.4` or a bare
        /// parameter value.
        #[arg(long)]
        geometry: String,
        /// Override the configured evaluation sample count.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Evaluate a checkpoint over a parameter grid and write a CSV.
    Scan {
        #[arg(long)]
        ckpt: PathBuf,
        /// Grid spec `start:step:end`, e.g. `1.0:0.1:2.0`.
        #[arg(long)]
        grid: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run the invariant self-check suite.
    Check {
        /// Optional config supplying the seed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reduced case counts for a fast smoke run.
        #[arg(long)]
        quick: bool,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut config = RunConfig::from_toml(&text).map_err(|e| e.to_string())?;
    if let Ok(seed) = std::env::var("VMC_SEED") {
        config.seed = seed
            .parse()
            .map_err(|_| format!("VMC_SEED '{seed}' is not an integer"))?;
    }
    Ok(config)
}

fn init_threads() {
    if let Ok(threads) = std::env::var("VMC_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn run() -> Result<(), String> {
    let cli = Cli::parse();
    init_threads();
    match cli.command {
        Command::Train { config, resume } => {
            let config = load_config(&config)?;
            println!(
                "training: {} iterations, batch {}, seed {}",
                config.optimizer.iterations, config.optimizer.batch_size, config.seed
            );
            cmd_train(config, resume.as_deref()).map_err(|e| e.to_string())?;
            println!("done");
            Ok(())
        }
        Command::Pretrain { config } => {
            let config = load_config(&config)?;
            let history = cmd_pretrain(config).map_err(|e| e.to_string())?;
            if let (Some(first), Some(last)) = (history.first(), history.last()) {
                println!(
                    "pretraining: loss {first:.6e} -> {last:.6e} over {} iterations",
                    history.len()
                );
            } else {
                println!("pretraining disabled");
            }
            Ok(())
        }
        Command::Evaluate {
            ckpt,
            geometry,
            samples,
        } => {
            let stats = cmd_evaluate(&ckpt, &geometry, samples, None).map_err(|e| e.to_string())?;
            println!(
                "E = {:.6} +- {:.6} hartree (variance {:.6e}, {} samples)",
                stats.mean, stats.std_error, stats.variance, stats.n_samples
            );
            println!(
                "  = {:.4} +- {:.4} eV",
                stats.mean * HA_TO_EV,
                stats.std_error * HA_TO_EV
            );
            Ok(())
        }
        Command::Scan {
            ckpt,
            grid,
            out,
            samples,
        } => {
            let grid = parse_grid(&grid).map_err(|e| e.to_string())?;
            let points = cmd_scan(&ckpt, &grid, samples, Some(&out)).map_err(|e| e.to_string())?;
            let mut failures = 0;
            for point in &points {
                match &point.result {
                    Ok(stats) => println!(
                        "param {:.4}: E = {:.6} +- {:.6}",
                        point.param, stats.mean, stats.std_error
                    ),
                    Err(msg) => {
                        failures += 1;
                        println!("param {:.4}: FAILED ({msg})", point.param);
                    }
                }
            }
            println!("wrote {}", out.display());
            if failures > 0 {
                Err(format!("{failures} grid points failed"))
            } else {
                Ok(())
            }
        }
        Command::Check { config, quick } => {
            let seed = match config {
                Some(path) => load_config(&path)?.seed,
                None => 0,
            };
            let scale = if quick {
                CheckScale::quick()
            } else {
                CheckScale::default()
            };
            let outcomes = run_all_checks(scale, seed);
            let mut all_passed = true;
            for outcome in &outcomes {
                let status = if outcome.passed { "PASS" } else { "FAIL" };
                println!("{status}  {}: {}", outcome.name, outcome.detail);
                all_passed &= outcome.passed;
            }
            if all_passed {
                Ok(())
            } else {
                Err("one or more checks failed".into())
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
