//! Run configuration: a human-readable TOML schema whose defaults follow the
//! published hyperparameter table, with a desk-scale preset layered on top.

use serde::{Deserialize, Serialize};

use crate::error::RunnerError;
use crate::geometry::Vec3;
use crate::metagnn::{BasisConfig, GnnDims};
use crate::optimizer::{CgConfig, OptimizerConfig};
use crate::wfmodel::WfDims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub metagnn: MetaGnnSection,
    pub geometry: GeometrySection,
    pub sampler: SamplerSection,
    pub optimizer: OptimizerSection,
    pub pretraining: PretrainingSection,
    pub evaluation: EvaluationSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelSection::default(),
            metagnn: MetaGnnSection::default(),
            geometry: GeometrySection::default(),
            sampler: SamplerSection::default(),
            optimizer: OptimizerSection::default(),
            pretraining: PretrainingSection::default(),
            evaluation: EvaluationSection::default(),
            run: RunSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub single_width: usize,
    pub double_width: usize,
    pub n_layers: usize,
    pub n_determinants: usize,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            single_width: 256,
            double_width: 32,
            n_layers: 4,
            n_determinants: 16,
            embed_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaGnnSection {
    pub n_message_passing: usize,
    pub embedding_dim: usize,
    pub message_dim: usize,
    pub n_sbf: usize,
    pub n_rbf: usize,
    pub length_scale: f64,
    pub max_charge: u32,
}

impl Default for MetaGnnSection {
    fn default() -> Self {
        MetaGnnSection {
            n_message_passing: 2,
            embedding_dim: 64,
            message_dim: 32,
            n_sbf: 7,
            n_rbf: 6,
            length_scale: 10.0,
            max_charge: 10,
        }
    }
}

/// An explicitly listed geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedGeometry {
    pub positions: Vec<Vec3>,
    pub charges: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    /// Template name ("diatomic" or "hchain") scanned over one parameter;
    /// empty when `fixed` geometries are listed instead.
    pub template: String,
    pub charges: Vec<u32>,
    /// Atom count for the hydrogen-chain template.
    pub n_atoms: usize,
    pub n_up: usize,
    pub n_dn: usize,
    pub param_min: f64,
    pub param_max: f64,
    /// Number of geometry random walkers (= parameter bins).
    pub n_walkers: usize,
    /// Uniform jitter half-width as a fraction of the bin width.
    pub jitter_fraction: f64,
    pub fixed: Vec<FixedGeometry>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            template: "diatomic".into(),
            charges: vec![1, 1],
            n_atoms: 2,
            n_up: 1,
            n_dn: 1,
            param_min: 1.0,
            param_max: 2.0,
            n_walkers: 16,
            jitter_fraction: 0.1,
            fixed: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    /// Per-coordinate Gaussian proposal width (bohr).
    pub step_size: f64,
    pub steps_between_updates: usize,
    pub burn_in: usize,
    pub adapt_step_size: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            step_size: 0.02,
            steps_between_updates: 40,
            burn_in: 1000,
            // The published runs use the fixed proposal width; desk presets
            // turn adaptation on.
            adapt_step_size: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    /// Total samples per step, split evenly over the geometry walkers.
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub clip_window: f64,
    pub damping_factor: f64,
    pub cg_max_steps: usize,
    pub cg_tolerance: f64,
    pub cg_window: usize,
    pub norm_clip: f64,
    pub centered_fisher: bool,
    /// Optional early stop on the trailing local-energy variance.
    pub target_variance: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            batch_size: 4096,
            iterations: 60_000,
            learning_rate: 0.1,
            lr_decay: 1000.0,
            clip_window: 5.0,
            damping_factor: 1e-4,
            cg_max_steps: 100,
            cg_tolerance: 5e-4,
            cg_window: 10,
            norm_clip: 1.0,
            centered_fisher: false,
            target_variance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainingSection {
    pub enabled: bool,
    pub iterations: usize,
    pub learning_rate: f64,
    /// "analytic" or "external".
    pub provider: String,
    /// Orbital coefficient file for the external provider.
    pub orbital_file: String,
}

impl Default for PretrainingSection {
    fn default() -> Self {
        PretrainingSection {
            enabled: true,
            iterations: 2000,
            learning_rate: 0.003,
            provider: "analytic".into(),
            orbital_file: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub n_samples: usize,
    pub mcmc_steps: usize,
    pub n_walkers: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            n_samples: 1_000_000,
            mcmc_steps: 200,
            n_walkers: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub checkpoint_interval: usize,
    pub checkpoint_path: String,
    pub log_path: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            checkpoint_interval: 500,
            checkpoint_path: "checkpoint.vmc".into(),
            log_path: "energy.csv".into(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, RunnerError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let err = |msg: String| Err(RunnerError::Config(msg));
        if self.model.single_width == 0
            || self.model.double_width == 0
            || self.model.n_layers == 0
            || self.model.n_determinants == 0
            || self.model.embed_dim == 0
        {
            return err("model widths, layers and determinant count must be positive".into());
        }
        if self.metagnn.n_message_passing == 0
            || self.metagnn.embedding_dim == 0
            || self.metagnn.message_dim == 0
            || self.metagnn.n_sbf == 0
            || self.metagnn.n_rbf == 0
        {
            return err("generator dimensions must be positive".into());
        }
        if self.metagnn.length_scale <= 0.0 {
            return err("basis length scale must be positive".into());
        }
        if self.geometry.fixed.is_empty() {
            match self.geometry.template.as_str() {
                "diatomic" => {
                    if self.geometry.charges.len() != 2 {
                        return err("diatomic template needs exactly two charges".into());
                    }
                }
                "hchain" => {
                    if self.geometry.n_atoms < 2 {
                        return err("hchain template needs at least two atoms".into());
                    }
                }
                other => {
                    return err(format!(
                        "unknown geometry template '{other}' (expected diatomic or hchain)"
                    ))
                }
            }
            if !(self.geometry.param_max >= self.geometry.param_min
                && self.geometry.param_min > 0.0)
            {
                return err("geometry parameter range must satisfy 0 < min <= max".into());
            }
            if self.geometry.n_walkers == 0 {
                return err("need at least one geometry walker".into());
            }
        }
        if self.geometry.n_up < self.geometry.n_dn || self.geometry.n_up + self.geometry.n_dn == 0 {
            return err("spin counts must satisfy n_up >= n_dn and n_up + n_dn >= 1".into());
        }
        if self.sampler.step_size <= 0.0 {
            return err("sampler step size must be positive".into());
        }
        if self.sampler.steps_between_updates == 0 {
            return err("steps between updates must be positive".into());
        }
        if self.optimizer.batch_size == 0 || self.optimizer.iterations == 0 {
            return err("batch size and iteration count must be positive".into());
        }
        if self.optimizer.learning_rate <= 0.0
            || self.optimizer.lr_decay <= 0.0
            || self.optimizer.clip_window <= 0.0
            || self.optimizer.damping_factor <= 0.0
            || self.optimizer.norm_clip <= 0.0
            || self.optimizer.cg_max_steps == 0
        {
            return err("optimizer hyperparameters must be positive".into());
        }
        if self.pretraining.enabled
            && self.pretraining.provider != "analytic"
            && self.pretraining.provider != "external"
        {
            return err(format!(
                "unknown pretraining provider '{}'",
                self.pretraining.provider
            ));
        }
        if self.evaluation.n_samples == 0 || self.evaluation.n_walkers == 0 {
            return err("evaluation sample and walker counts must be positive".into());
        }
        Ok(())
    }

    pub fn wf_dims(&self, n_nuclei: usize) -> WfDims {
        WfDims {
            n_up: self.geometry.n_up,
            n_dn: self.geometry.n_dn,
            n_nuclei,
            single_width: self.model.single_width,
            double_width: self.model.double_width,
            embed_dim: self.model.embed_dim,
            n_dets: self.model.n_determinants,
            n_layers: self.model.n_layers,
        }
    }

    pub fn gnn_dims(&self) -> GnnDims {
        GnnDims {
            embedding_dim: self.metagnn.embedding_dim,
            message_dim: self.metagnn.message_dim,
            n_message_passing: self.metagnn.n_message_passing,
            max_charge: self.metagnn.max_charge,
        }
    }

    pub fn basis_config(&self) -> BasisConfig {
        BasisConfig {
            n_sbf: self.metagnn.n_sbf,
            n_rbf: self.metagnn.n_rbf,
            length_scale: self.metagnn.length_scale,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.optimizer.learning_rate,
            lr_decay: self.optimizer.lr_decay,
            norm_clip: self.optimizer.norm_clip,
            damping_factor: self.optimizer.damping_factor,
            cg: CgConfig {
                max_steps: self.optimizer.cg_max_steps,
                window: self.optimizer.cg_window,
                tolerance: self.optimizer.cg_tolerance,
            },
            centered_fisher: self.optimizer.centered_fisher,
        }
    }

    /// Samples per geometry walker: the batch splits evenly.
    pub fn per_geometry_batch(&self, n_geometries: usize) -> usize {
        (self.optimizer.batch_size / n_geometries.max(1)).max(1)
    }

    /// Desk-scale preset: small batch on top of the published defaults.
    pub fn desk_preset() -> RunConfig {
        let mut config = RunConfig::default();
        config.optimizer.batch_size = 512;
        config.optimizer.iterations = 5000;
        config
    }

    /// Hydrogen-atom preset: one electron, one determinant, a small model,
    /// and the desk batch size.
    pub fn hydrogen_preset() -> RunConfig {
        let mut config = RunConfig::desk_preset();
        config.model = ModelSection {
            single_width: 16,
            double_width: 4,
            n_layers: 2,
            n_determinants: 1,
            embed_dim: 8,
        };
        config.metagnn = MetaGnnSection {
            n_message_passing: 2,
            embedding_dim: 8,
            message_dim: 4,
            n_sbf: 3,
            n_rbf: 3,
            length_scale: 10.0,
            max_charge: 2,
        };
        config.geometry = GeometrySection {
            template: String::new(),
            charges: vec![1],
            n_atoms: 1,
            n_up: 1,
            n_dn: 0,
            param_min: 1.0,
            param_max: 1.0,
            n_walkers: 1,
            jitter_fraction: 0.0,
            fixed: vec![FixedGeometry {
                positions: vec![[0.0, 0.0, 0.0]],
                charges: vec![1],
            }],
        };
        config.sampler.step_size = 0.4;
        config.sampler.burn_in = 300;
        config.sampler.adapt_step_size = true;
        config.pretraining.iterations = 150;
        config.optimizer.iterations = 600;
        config.optimizer.cg_max_steps = 40;
        config
    }

    /// Small shared-model H2 bond-scan preset.
    pub fn h2_scan_preset() -> RunConfig {
        let mut config = RunConfig::desk_preset();
        config.model = ModelSection {
            single_width: 16,
            double_width: 4,
            n_layers: 2,
            n_determinants: 2,
            embed_dim: 8,
        };
        config.metagnn = MetaGnnSection {
            n_message_passing: 2,
            embedding_dim: 12,
            message_dim: 6,
            n_sbf: 3,
            n_rbf: 3,
            length_scale: 10.0,
            max_charge: 2,
        };
        config.geometry = GeometrySection {
            template: "diatomic".into(),
            charges: vec![1, 1],
            n_atoms: 2,
            n_up: 1,
            n_dn: 1,
            param_min: 1.0,
            param_max: 2.0,
            n_walkers: 5,
            jitter_fraction: 0.1,
            fixed: Vec::new(),
        };
        config.sampler.step_size = 0.3;
        config.sampler.burn_in = 300;
        config.sampler.adapt_step_size = true;
        config.pretraining.iterations = 200;
        config.optimizer.iterations = 1200;
        config.optimizer.cg_max_steps = 40;
        config
    }
}
