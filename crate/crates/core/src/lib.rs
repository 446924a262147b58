//! A desk-scale variational Monte Carlo engine for the electronic
//! Schrödinger equation. A neural wave function is evaluated in an
//! equivariant coordinate frame, and a graph network over the nuclei
//! generates part of its parameters so one model covers many molecular
//! geometries at once.

pub mod error;
pub mod geometry;
pub mod hamiltonian;
pub mod joint;
pub mod linalg;
pub mod metagnn;
pub mod optimizer;
pub mod pretraining;
pub mod runner;
pub mod sampler;
pub mod stubs;
pub mod wfmodel;

pub use error::{
    GeometryError, HamiltonianError, MetaGnnError, OptimError, PretrainError, RunnerError, WfError,
};
pub use geometry::{build_frame, build_frame_detailed, equivariant_vector, geometric_center};
pub use geometry::{EquivariantFrame, MolecularConfiguration};
