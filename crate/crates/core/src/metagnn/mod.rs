//! Graph network over the nuclei that generates the geometry-dependent
//! subsets of the wave-function parameters.

pub mod basis;
pub mod generate;
pub mod params;

pub use basis::{BasisConfig, BasisTables};
pub use generate::{
    backward_generate, generate_params, generate_params_for, generate_params_traced,
    init_node_embeddings, message_passing_step, GnnTrace, ParameterAssignment,
};
pub use params::{GnnDims, Head, MetaGnnParams};
