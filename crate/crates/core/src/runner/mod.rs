//! Run orchestration: configuration, the training loop, evaluation, PES
//! scans, checkpointing, logging and the invariant self-check suite.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod log;
pub mod templates;
pub mod train;

pub use check::{run_all_checks, CheckOutcome, CheckScale};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use log::{EnergyLog, EnergyRecord, CSV_HEADER};
pub use templates::GeometrySource;
pub use train::{evaluate_with_model, Trainer};

use crate::error::RunnerError;
use crate::hamiltonian::EnergyStatistics;

/// `train` / `pretrain`: run the configured job, honoring `--resume`.
pub fn cmd_train(config: RunConfig, resume: Option<&std::path::Path>) -> Result<(), RunnerError> {
    let mut trainer = match resume {
        Some(path) => Trainer::resume(Checkpoint::load(path)?)?,
        None => Trainer::new(config)?,
    };
    let mut log = EnergyLog::create(std::path::Path::new(&trainer.config.run.log_path))?;
    trainer.train(&mut log)
}

/// `pretrain`: run only the supervised initialization, then checkpoint.
pub fn cmd_pretrain(config: RunConfig) -> Result<Vec<f64>, RunnerError> {
    let mut trainer = Trainer::new(config)?;
    let history = trainer.pretrain()?;
    trainer
        .checkpoint()
        .save(std::path::Path::new(&trainer.config.run.checkpoint_path))?;
    Ok(history)
}

/// One evaluation row of a scan.
#[derive(Debug, Clone)]
pub struct ScanPoint {
    pub param: f64,
    pub result: Result<EnergyStatistics, String>,
}

/// `evaluate`: statistics of one geometry under a trained checkpoint.
pub fn cmd_evaluate(
    checkpoint_path: &std::path::Path,
    geometry_spec: &str,
    samples_override: Option<usize>,
    seed_override: Option<u64>,
) -> Result<EnergyStatistics, RunnerError> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let trainer = Trainer::resume(checkpoint)?;
    let config = trainer.source.parse_spec(geometry_spec)?;
    let n_samples = samples_override.unwrap_or(trainer.config.evaluation.n_samples);
    let seed = seed_override.unwrap_or(trainer.config.seed.wrapping_add(0xE7A1));
    trainer.evaluate(&config, n_samples, seed)
}

/// `scan`: evaluate a parameter grid, continuing past failed points, and
/// write the CSV artifact.
pub fn cmd_scan(
    checkpoint_path: &std::path::Path,
    grid: &[f64],
    samples_override: Option<usize>,
    out_csv: Option<&std::path::Path>,
) -> Result<Vec<ScanPoint>, RunnerError> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let trainer = Trainer::resume(checkpoint)?;
    let n_samples = samples_override.unwrap_or(trainer.config.evaluation.n_samples);
    let mut points = Vec::with_capacity(grid.len());
    for (i, &param) in grid.iter().enumerate() {
        let result = trainer
            .source
            .realize(param)
            .map_err(RunnerError::from)
            .and_then(|config| {
                trainer.evaluate(
                    &config,
                    n_samples,
                    trainer.config.seed.wrapping_add(1000 + i as u64),
                )
            })
            .map_err(|e| e.to_string());
        points.push(ScanPoint { param, result });
    }
    if let Some(path) = out_csv {
        let mut text = String::from("param,energy_hartree,stderr_hartree,variance\n");
        for point in &points {
            match &point.result {
                Ok(stats) => text.push_str(&format!(
                    "{},{},{},{}\n",
                    point.param, stats.mean, stats.std_error, stats.variance
                )),
                Err(msg) => text.push_str(&format!(
                    "{},error,error,{}\n",
                    point.param,
                    msg.replace(',', ";")
                )),
            }
        }
        std::fs::write(path, text)?;
    }
    Ok(points)
}

/// Parses a `start:step:end` grid specification.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, RunnerError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let err = || RunnerError::Config(format!("grid spec '{spec}' is not start:step:end"));
    if parts.len() != 3 {
        return Err(err());
    }
    let start: f64 = parts[0].parse().map_err(|_| err())?;
    let step: f64 = parts[1].parse().map_err(|_| err())?;
    let end: f64 = parts[2].parse().map_err(|_| err())?;
    if step <= 0.0 || end < start {
        return Err(err());
    }
    let mut grid = Vec::new();
    let mut value = start;
    while value <= end + 1e-9 {
        grid.push(value);
        value += step;
    }
    Ok(grid)
}
