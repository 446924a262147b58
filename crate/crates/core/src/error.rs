//! Error types shared across the engine.

use thiserror::Error;

/// Errors raised while validating or constructing molecular geometries.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("configuration must contain at least one nucleus")]
    NoNuclei,
    #[error("nucleus {index} has non-finite position")]
    NonFinitePosition { index: usize },
    #[error("nucleus {index} has charge {charge}, charges must be >= 1")]
    InvalidCharge { index: usize, charge: u32 },
    #[error("nuclei {first} and {second} coincide (distance {distance:.3e} bohr)")]
    CoincidentNuclei {
        first: usize,
        second: usize,
        distance: f64,
    },
    #[error("invalid spin counts: n_up = {n_up}, n_dn = {n_dn} (need n_up >= n_dn >= 0 and n_up + n_dn >= 1)")]
    InvalidSpinCounts { n_up: usize, n_dn: usize },
}

/// Errors raised by wave-function evaluation and differentiation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WfError {
    #[error("wave function vanishes at this configuration; derivatives are undefined")]
    Node,
    #[error("electron {electron} coincides with nucleus {nucleus}; features are not differentiable there")]
    ElectronOnNucleus { electron: usize, nucleus: usize },
    #[error("electrons {i} and {j} coincide; features are not differentiable there")]
    CoincidentElectrons { i: usize, j: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Errors raised by the Hamiltonian / local-energy evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("electrons {i} and {j} coincide (distance {distance:.3e} bohr)")]
    ElectronElectronSingularity { i: usize, j: usize, distance: f64 },
    #[error("electron {electron} sits on nucleus {nucleus} (distance {distance:.3e} bohr)")]
    ElectronNucleusSingularity {
        electron: usize,
        nucleus: usize,
        distance: f64,
    },
    #[error(transparent)]
    Wf(#[from] WfError),
}

/// Errors raised by the MetaGNN.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaGnnError {
    #[error(
        "nuclear charge {charge} is not covered by the charge embedding table (max {max_charge})"
    )]
    UnknownCharge { charge: u32, max_charge: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Errors raised when binding the joint model to a geometry.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BindError {
    #[error("geometry has spin counts ({got_up}, {got_dn}) but the model was built for ({expected_up}, {expected_dn})")]
    SpinMismatch {
        expected_up: usize,
        expected_dn: usize,
        got_up: usize,
        got_dn: usize,
    },
    #[error(transparent)]
    MetaGnn(#[from] MetaGnnError),
}

/// Errors raised by the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("empty sample batch")]
    EmptyBatch,
    #[error("non-finite value encountered during CG at iteration {step}")]
    CgNonFinite { step: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Errors raised by pretraining reference-orbital providers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PretrainError {
    #[error("reference orbitals do not cover this geometry: {0}")]
    MissingGeometry(String),
    #[error("shape mismatch between model orbitals and targets: {0}")]
    ShapeMismatch(String),
    #[error("orbital file parse error: {0}")]
    Parse(String),
}

/// Top-level runner error.
#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Wf(#[from] WfError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    MetaGnn(#[from] MetaGnnError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
