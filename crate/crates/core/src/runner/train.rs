//! Training orchestration: optional pretraining, then the variational loop
//! of geometry stepping, sampling, local energies, clipping, the natural-
//! gradient update, logging and checkpointing.

use std::time::Instant;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::RunnerError;
use crate::geometry::MolecularConfiguration;
use crate::hamiltonian::{clip_local_energies, local_energy, EnergyStatistics, StreamingStats};
use crate::joint::JointModel;
use crate::optimizer::{apply_update, convergence_metric, vmc_gradient, GeometryBatch, TrainState};
use crate::pretraining::{pretrain_step, PretrainState, ReferenceOrbitalSet};
use crate::runner::checkpoint::Checkpoint;
use crate::runner::config::RunConfig;
use crate::runner::log::{EnergyLog, EnergyRecord};
use crate::runner::templates::GeometrySource;
use crate::sampler::{make_geometry_walkers, GeometryWalker, WalkerState};
use crate::wfmodel::WaveFunction;

/// Sweeps between pretraining gradient evaluations.
const PRETRAIN_SWEEPS: usize = 5;

pub struct Trainer {
    pub config: RunConfig,
    pub source: GeometrySource,
    pub state: TrainState,
    pub geometry_walkers: Vec<GeometryWalker>,
    pub samplers: Vec<WalkerState>,
    pub pretrain_done: bool,
    /// Trailing within-geometry variance, for the convergence criterion.
    pub last_convergence: Option<f64>,
    /// Diagnostics of the most recent natural-gradient update.
    pub last_update: Option<crate::optimizer::UpdateInfo>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Trainer, RunnerError> {
        config.validate()?;
        let source = GeometrySource::from_config(&config)?;
        if source.max_charge() > config.metagnn.max_charge {
            return Err(RunnerError::Config(format!(
                "geometry charge {} exceeds metagnn.max_charge {}",
                source.max_charge(),
                config.metagnn.max_charge
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = JointModel::init(
            config.wf_dims(source.n_nuclei()),
            config.gnn_dims(),
            config.basis_config(),
            &mut rng,
        );
        let state = TrainState {
            model,
            step: 0,
            config: config.optimizer_config(),
        };
        let geometry_walkers = if source.is_scanned() {
            make_geometry_walkers(
                config.geometry.param_min,
                config.geometry.param_max,
                config.geometry.n_walkers,
                config.seed,
            )
        } else {
            Vec::new()
        };
        let mut trainer = Trainer {
            config,
            source,
            state,
            geometry_walkers,
            samplers: Vec::new(),
            pretrain_done: false,
            last_convergence: None,
            last_update: None,
        };
        trainer.init_samplers()?;
        Ok(trainer)
    }

    /// Rebuilds a trainer from a checkpoint; the run continues bitwise
    /// identically.
    pub fn resume(checkpoint: Checkpoint) -> Result<Trainer, RunnerError> {
        let config = checkpoint.config.clone();
        config.validate()?;
        let source = GeometrySource::from_config(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = JointModel::init(
            config.wf_dims(source.n_nuclei()),
            config.gnn_dims(),
            config.basis_config(),
            &mut rng,
        );
        if model.n_params() != checkpoint.theta.len() {
            return Err(RunnerError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                checkpoint.theta.len(),
                model.n_params()
            )));
        }
        model.set_theta(&checkpoint.theta);
        let state = TrainState {
            model,
            step: checkpoint.step,
            config: config.optimizer_config(),
        };
        Ok(Trainer {
            config,
            source,
            state,
            geometry_walkers: checkpoint.geometry_walkers,
            samplers: checkpoint.samplers,
            pretrain_done: checkpoint.pretrain_done,
            last_convergence: None,
            last_update: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            theta: self.state.model.theta(),
            step: self.state.step,
            pretrain_done: self.pretrain_done,
            geometry_walkers: self.geometry_walkers.clone(),
            samplers: self.samplers.clone(),
        }
    }

    /// Current training geometries, in walker order.
    pub fn current_configs(&self) -> Result<Vec<MolecularConfiguration>, RunnerError> {
        match &self.source {
            GeometrySource::Fixed(configs) => Ok(configs.clone()),
            _ => self
                .geometry_walkers
                .iter()
                .map(|w| self.source.realize(w.current).map_err(RunnerError::from))
                .collect(),
        }
    }

    fn geometry_params(&self) -> Vec<f64> {
        match &self.source {
            GeometrySource::Fixed(configs) => (0..configs.len()).map(|i| i as f64).collect(),
            _ => self.geometry_walkers.iter().map(|w| w.current).collect(),
        }
    }

    fn init_samplers(&mut self) -> Result<(), RunnerError> {
        let configs = self.current_configs()?;
        let per_geom = self.config.per_geometry_batch(configs.len());
        let mut samplers = Vec::with_capacity(configs.len());
        for (g, config) in configs.iter().enumerate() {
            let ctx = self.state.model.bind(config)?;
            let mut state = WalkerState::init(
                config,
                &ctx,
                per_geom,
                self.config.sampler.step_size,
                self.config.seed.wrapping_add(7919 * (g as u64 + 1)),
            );
            state.run_chain(&ctx, self.config.sampler.burn_in);
            if self.config.sampler.adapt_step_size {
                state.adapt_step_size();
            }
            samplers.push(state);
        }
        self.samplers = samplers;
        Ok(())
    }

    /// Reference orbitals for pretraining: the analytic provider anchors one
    /// set per determinant spread over the scan range (or the fixed list),
    /// the external provider loads the coefficient file.
    fn pretrain_references(
        &self,
        configs: &[MolecularConfiguration],
    ) -> Result<Vec<ReferenceOrbitalSet>, RunnerError> {
        let n_orbitals = self
            .config
            .geometry
            .n_up
            .max(self.config.geometry.n_dn)
            .max(1);
        match self.config.pretraining.provider.as_str() {
            "analytic" => {
                let k = self.config.model.n_determinants;
                let anchor_configs: Vec<MolecularConfiguration> = if self.source.is_scanned() {
                    let (lo, hi) = (
                        self.config.geometry.param_min,
                        self.config.geometry.param_max,
                    );
                    (0..k)
                        .map(|i| {
                            let t = (i as f64 + 0.5) / k as f64;
                            self.source
                                .realize(lo + t * (hi - lo))
                                .map_err(RunnerError::from)
                        })
                        .collect::<Result<_, _>>()?
                } else {
                    configs.to_vec()
                };
                let refs = ReferenceOrbitalSet::analytic(&anchor_configs, n_orbitals);
                Ok(vec![refs; configs.len()])
            }
            "external" => {
                let text = std::fs::read_to_string(&self.config.pretraining.orbital_file)?;
                let file = crate::pretraining::OrbitalFile::from_toml(&text)?;
                configs
                    .iter()
                    .map(|c| file.reference_set(c).map_err(RunnerError::from))
                    .collect()
            }
            other => Err(RunnerError::Config(format!(
                "unknown pretraining provider '{other}'"
            ))),
        }
    }

    /// Supervised initialization pass; returns the loss history.
    pub fn pretrain(&mut self) -> Result<Vec<f64>, RunnerError> {
        if !self.config.pretraining.enabled || self.pretrain_done {
            return Ok(Vec::new());
        }
        let configs = self.source.initial_configs(&self.config.geometry)?;
        let refs = self.pretrain_references(&configs)?;
        let mut pstate = PretrainState::new(
            self.state.model.clone(),
            self.config.pretraining.learning_rate,
        );
        let mut history = Vec::with_capacity(self.config.pretraining.iterations);
        for it in 0..self.config.pretraining.iterations {
            let g = it % configs.len();
            let ctx = pstate.model.bind(&configs[g])?;
            let idx = g.min(self.samplers.len() - 1);
            let sampler = &mut self.samplers[idx];
            sampler.refresh_cache(&ctx);
            sampler.run_chain(&ctx, PRETRAIN_SWEEPS);
            let batch = sampler.batch();
            let loss = pretrain_step(&mut pstate, &ctx, &batch, &refs[g])?;
            history.push(loss);
        }
        self.state.model = pstate.model;
        self.pretrain_done = true;
        Ok(history)
    }

    /// One optimization step over all geometry walkers. Returns the records
    /// that go to the energy log.
    pub fn step(&mut self) -> Result<Vec<EnergyRecord>, RunnerError> {
        let start = Instant::now();
        // Advance the geometry walkers, then realize the configurations.
        if self.source.is_scanned() {
            let jitter = self.config.geometry.jitter_fraction;
            for walker in self.geometry_walkers.iter_mut() {
                walker.step(jitter);
            }
        }
        let configs = self.current_configs()?;
        let params = self.geometry_params();

        let mut batches = Vec::with_capacity(configs.len());
        let mut stats = Vec::with_capacity(configs.len());
        let mut acceptances = Vec::with_capacity(configs.len());
        let mut clipped_pool: Vec<f64> = Vec::new();
        for (g, config) in configs.iter().enumerate() {
            let ctx = self.state.model.bind(config)?;
            let sampler = &mut self.samplers[g];
            sampler.refresh_cache(&ctx);
            sampler.reset_acceptance();
            sampler.run_chain(&ctx, self.config.sampler.steps_between_updates);
            acceptances.push(sampler.acceptance());
            if self.config.sampler.adapt_step_size {
                sampler.adapt_step_size();
            }

            let results: Result<Vec<(f64, Array1<f64>)>, RunnerError> = sampler
                .walkers
                .par_iter()
                .map(|walker| {
                    let r = walker.positions.view();
                    let energy = local_energy(r, &ctx, config)?;
                    let (_, grad) = ctx.logpsi_and_theta_grad(r, &self.state.model)?;
                    Ok((energy, grad))
                })
                .collect();
            let results = results?;
            let raw: Vec<f64> = results.iter().map(|(e, _)| *e).collect();
            stats.push(EnergyStatistics::from_samples(&raw));
            let clipped = clip_local_energies(&raw, self.config.optimizer.clip_window);
            clipped_pool.extend(clipped.iter());
            let p = self.state.model.n_params();
            let mut grads = ndarray::Array2::zeros((results.len(), p));
            for (row, (_, g_vec)) in results.iter().enumerate() {
                grads.row_mut(row).assign(g_vec);
            }
            batches.push(GeometryBatch {
                local_energies: clipped,
                grads,
            });
        }

        let gradient = vmc_gradient(&batches)?;
        let pooled = EnergyStatistics::from_samples(&clipped_pool);
        let info = apply_update(&mut self.state, &gradient, &batches, pooled.variance.sqrt())?;
        self.last_update = Some(info);
        self.last_convergence = Some(convergence_metric(&stats));

        let seconds = start.elapsed().as_secs_f64();
        let step = self.state.step - 1;
        let records = stats
            .iter()
            .enumerate()
            .map(|(g, s)| EnergyRecord {
                step,
                geom_id: g,
                param: params[g],
                energy: s.mean,
                variance: s.variance,
                std_error: s.std_error,
                acceptance: acceptances[g],
                seconds,
            })
            .collect();
        Ok(records)
    }

    /// Full run: pretraining, then `iterations` steps with logging and
    /// periodic checkpoints. A numerical failure checkpoints before
    /// propagating.
    pub fn train(&mut self, log: &mut EnergyLog) -> Result<(), RunnerError> {
        self.pretrain()?;
        let total = self.config.optimizer.iterations;
        let interval = self.config.run.checkpoint_interval.max(1);
        let ckpt_path = std::path::PathBuf::from(&self.config.run.checkpoint_path);
        while (self.state.step as usize) < total {
            match self.step() {
                Ok(records) => {
                    for record in records {
                        log.push(record)?;
                    }
                }
                Err(err) => {
                    let _ = self.checkpoint().save(&ckpt_path);
                    log.flush()?;
                    return Err(err);
                }
            }
            if self.state.step as usize % interval == 0 {
                self.checkpoint().save(&ckpt_path)?;
                log.flush()?;
            }
            if let Some(target) = self.config.optimizer.target_variance {
                if self.last_convergence.is_some_and(|v| v < target) {
                    break;
                }
            }
        }
        self.checkpoint().save(&ckpt_path)?;
        log.flush()?;
        Ok(())
    }

    /// Monte-Carlo evaluation of one geometry: burn-in, then streaming
    /// statistics over the requested number of local-energy samples.
    pub fn evaluate(
        &self,
        config: &MolecularConfiguration,
        n_samples: usize,
        seed: u64,
    ) -> Result<EnergyStatistics, RunnerError> {
        evaluate_with_model(
            &self.state.model,
            config,
            n_samples,
            self.config.evaluation.mcmc_steps,
            self.config.evaluation.n_walkers,
            self.config.sampler.step_size,
            self.config.sampler.adapt_step_size,
            seed,
        )
    }
}

/// Evaluation loop shared by the trainer and the CLI.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with_model(
    model: &JointModel,
    config: &MolecularConfiguration,
    n_samples: usize,
    mcmc_steps: usize,
    n_walkers: usize,
    step_size: f64,
    adapt_step: bool,
    seed: u64,
) -> Result<EnergyStatistics, RunnerError> {
    let ctx = model.bind(config)?;
    let mut state = WalkerState::init(config, &ctx, n_walkers, step_size, seed);
    state.run_chain(&ctx, mcmc_steps);
    if adapt_step {
        state.adapt_step_size();
    }
    let mut stats = StreamingStats::default();
    while stats.count() < n_samples {
        state.mh_step(&ctx);
        let energies: Result<Vec<f64>, RunnerError> = state
            .walkers
            .par_iter()
            .map(|w| local_energy(w.positions.view(), &ctx, config).map_err(RunnerError::from))
            .collect();
        for e in energies? {
            stats.push(e);
            if stats.count() >= n_samples {
                break;
            }
        }
    }
    Ok(stats.finish())
}

/// Evaluation for an arbitrary wave function; used by the self-check suite.
pub fn evaluate_wave_function<W: WaveFunction>(
    wf: &W,
    config: &MolecularConfiguration,
    n_samples: usize,
    burn_in: usize,
    n_walkers: usize,
    step_size: f64,
    seed: u64,
) -> Result<EnergyStatistics, RunnerError> {
    let mut state = WalkerState::init(config, wf, n_walkers, step_size, seed);
    state.run_chain(wf, burn_in);
    let mut stats = StreamingStats::default();
    while stats.count() < n_samples {
        state.mh_step(wf);
        for w in &state.walkers {
            stats.push(local_energy(w.positions.view(), wf, config)?);
            if stats.count() >= n_samples {
                break;
            }
        }
    }
    Ok(stats.finish())
}
