//! Trains the hydrogen-atom preset end to end and prints the energy as it
//! converges to the exact -0.5 hartree.
//!
//! Usage: cargo run --release -p vmc-core --example train_hydrogen [steps]

use vmc_core::runner::{EnergyLog, RunConfig, Trainer};

fn main() {
    let steps: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    let mut config = RunConfig::hydrogen_preset();
    config.seed = 7;
    config.optimizer.iterations = steps;
    config.pretraining.iterations = 150;
    config.run.checkpoint_path = std::env::temp_dir()
        .join("vmc_example_h.ckpt")
        .to_string_lossy()
        .into_owned();
    let mut trainer = Trainer::new(config).unwrap();
    let t0 = std::time::Instant::now();
    let history = trainer.pretrain().unwrap();
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!(
            "pretraining loss {first:.3e} -> {last:.3e} over {} iterations ({:.1?})",
            history.len(),
            t0.elapsed()
        );
    }
    let mut log = EnergyLog::memory();
    let t0 = std::time::Instant::now();
    trainer.train(&mut log).unwrap();
    for r in &log.records {
        if r.step % 25 == 0 || r.step as usize + 1 == steps {
            println!(
                "step {:4}  E = {:+.6}  Var[E_L] = {:.3e}  acceptance = {:.2}",
                r.step, r.energy, r.variance, r.acceptance
            );
        }
    }
    println!(
        "trained {} steps in {:.1?}; exact ground state is -0.5 hartree",
        steps,
        t0.elapsed()
    );
}
