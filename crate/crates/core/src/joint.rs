//! Joint model: shared wave-function parameters plus the generator network,
//! exposed as one flat parameter vector for the optimizer, and bound to a
//! geometry for evaluation.

use ndarray::{Array1, ArrayView2};
use rand::Rng;

use crate::error::{BindError, WfError};
use crate::geometry::{
    build_frame_detailed, EquivariantFrame, FrameDiagnostics, MolecularConfiguration,
};
use crate::metagnn::basis::BasisConfig;
use crate::metagnn::{
    backward_generate, generate_params_traced, GnnDims, GnnTrace, MetaGnnParams,
    ParameterAssignment,
};
use crate::wfmodel::backward::backward_params;
use crate::wfmodel::derivs::{derivatives, LogPsiDerivs};
use crate::wfmodel::forward::{evaluate_one, forward, SignedLogAmplitude};
use crate::wfmodel::params::{SlotTag, WaveFunctionParams, WfDims};
use crate::wfmodel::WaveFunction;

/// Free parameters of the whole system: the wave function's shared slots and
/// every generator parameter. The generated slots of the template are
/// placeholders that get overwritten on bind.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub wf_template: WaveFunctionParams,
    pub gnn: MetaGnnParams,
}

impl JointModel {
    pub fn init<R: Rng>(
        wf_dims: WfDims,
        gnn_dims: GnnDims,
        basis: BasisConfig,
        rng: &mut R,
    ) -> Self {
        let wf_template = WaveFunctionParams::init(wf_dims, rng);
        let gnn = MetaGnnParams::init(gnn_dims, wf_dims, basis, rng);
        JointModel { wf_template, gnn }
    }

    pub fn n_params(&self) -> usize {
        self.wf_template.n_params(Some(SlotTag::Shared)) + self.gnn.n_params()
    }

    /// Flat joint parameter vector: shared wave-function slots first, then
    /// the generator slots, both in canonical order.
    pub fn theta(&self) -> Array1<f64> {
        let mut flat = Vec::with_capacity(self.n_params());
        self.wf_template
            .flatten_into(Some(SlotTag::Shared), &mut flat);
        self.gnn.flatten_into(&mut flat);
        Array1::from_vec(flat)
    }

    pub fn set_theta(&mut self, theta: &Array1<f64>) {
        let data = theta.as_slice().expect("contiguous");
        let used = self.wf_template.unflatten_from(Some(SlotTag::Shared), data);
        let used2 = self.gnn.unflatten_from(&data[used..]);
        assert_eq!(used + used2, data.len(), "theta length mismatch");
    }

    /// Named segments of the flat parameter vector, in order. Segments act
    /// as the "layers" of layerwise optimizers and carry the pretraining
    /// trainability flag (shared wave-function slots plus the generator's
    /// final head biases).
    pub fn theta_layout(&self) -> Vec<ThetaSegment> {
        let mut segments = Vec::new();
        let mut offset = 0;
        for slot in self.wf_template.dims.slots() {
            if slot.tag() == SlotTag::Shared {
                let len = self.wf_template.slot(slot).len();
                segments.push(ThetaSegment {
                    name: slot.name(),
                    offset,
                    len,
                    pretrainable: true,
                });
                offset += len;
            }
        }
        let head_biases: std::collections::HashSet<String> =
            self.gnn.head_bias_slot_names().into_iter().collect();
        for (name, view) in self.gnn.slots() {
            let len = view.len();
            segments.push(ThetaSegment {
                pretrainable: head_biases.contains(&name),
                name,
                offset,
                len,
            });
            offset += len;
        }
        segments
    }

    /// Binds the model to one geometry: builds the frame, generates the
    /// per-geometry parameter assignment, and materializes a complete
    /// wave-function parameter set.
    pub fn bind(&self, config: &MolecularConfiguration) -> Result<GeometryContext, BindError> {
        let dims = self.wf_template.dims;
        if config.n_up() != dims.n_up || config.n_dn() != dims.n_dn {
            return Err(BindError::SpinMismatch {
                expected_up: dims.n_up,
                expected_dn: dims.n_dn,
                got_up: config.n_up(),
                got_dn: config.n_dn(),
            });
        }
        let (frame, frame_diag) = build_frame_detailed(config);
        let (assignment, trace) = generate_params_traced(config, &frame, &self.gnn)?;
        let mut wf_dims = dims;
        wf_dims.n_nuclei = config.n_nuclei();
        let mut wf = WaveFunctionParams::zeros(wf_dims);
        // Shared slots are geometry-independent shapes; copy from template.
        let mut shared = Vec::new();
        self.wf_template
            .flatten_into(Some(SlotTag::Shared), &mut shared);
        wf.unflatten_from(Some(SlotTag::Shared), &shared);
        assignment.apply_to(&mut wf);
        Ok(GeometryContext {
            config: config.clone(),
            frame,
            frame_diag,
            wf,
            assignment,
            trace,
        })
    }
}

/// One named contiguous range of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaSegment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Whether pretraining updates this segment.
    pub pretrainable: bool,
}

/// A geometry-bound evaluator: everything needed to evaluate, differentiate
/// and backpropagate at one molecular configuration.
pub struct GeometryContext {
    pub config: MolecularConfiguration,
    pub frame: EquivariantFrame,
    pub frame_diag: FrameDiagnostics,
    /// Complete per-geometry wave-function parameters.
    pub wf: WaveFunctionParams,
    pub assignment: ParameterAssignment,
    trace: GnnTrace,
}

impl GeometryContext {
    /// Per-sample log-amplitude and the gradient of log|psi| with respect to
    /// the flat joint parameter vector.
    pub fn logpsi_and_theta_grad(
        &self,
        r: ArrayView2<f64>,
        model: &JointModel,
    ) -> Result<(SignedLogAmplitude, Array1<f64>), WfError> {
        let fwd = forward(r, &self.config, &self.frame, &self.wf);
        let mut wf_grads = WaveFunctionParams::zeros(self.wf.dims);
        backward_params(&fwd, &self.config, &self.wf, &mut wf_grads)?;
        Ok((fwd.out, self.fold_theta_grads(&wf_grads, model)))
    }

    /// Folds a wave-function-shaped gradient into the flat joint gradient:
    /// shared slots pass through, generated slots chain through the
    /// generator's backward pass.
    pub(crate) fn fold_theta_grads(
        &self,
        wf_grads: &WaveFunctionParams,
        model: &JointModel,
    ) -> Array1<f64> {
        let mut flat = Vec::with_capacity(model.n_params());
        wf_grads.flatten_into(Some(SlotTag::Shared), &mut flat);
        let d_assignment = ParameterAssignment::from_wf_grads(wf_grads);
        let mut gnn_grads = model.gnn.zeros_like();
        backward_generate(
            &self.config,
            &model.gnn,
            &self.trace,
            &d_assignment,
            &mut gnn_grads,
        );
        gnn_grads.flatten_into(&mut flat);
        Array1::from_vec(flat)
    }
}

impl WaveFunction for GeometryContext {
    fn n_electrons(&self) -> usize {
        self.config.n_electrons()
    }

    fn signed_log(&self, r: ArrayView2<f64>) -> SignedLogAmplitude {
        evaluate_one(r, &self.config, &self.frame, &self.wf)
    }

    fn log_derivatives(&self, r: ArrayView2<f64>) -> Result<LogPsiDerivs, WfError> {
        derivatives(r, &self.config, &self.frame, &self.wf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(rng: &mut ChaCha8Rng) -> JointModel {
        let wf_dims = WfDims {
            n_up: 1,
            n_dn: 1,
            n_nuclei: 2,
            single_width: 6,
            double_width: 4,
            embed_dim: 5,
            n_dets: 2,
            n_layers: 2,
        };
        let gnn_dims = GnnDims {
            embedding_dim: 5,
            message_dim: 4,
            n_message_passing: 2,
            max_charge: 3,
        };
        let basis = BasisConfig {
            n_sbf: 2,
            n_rbf: 2,
            length_scale: 10.0,
        };
        let mut model = JointModel::init(wf_dims, gnn_dims, basis, rng);
        // Real head weights so the generator actually matters.
        model.gnn.reinit_head_weights(0.2, rng);
        model
    }

    fn h2_config(bond: f64) -> MolecularConfiguration {
        MolecularConfiguration::new(
            vec![[0.0, 0.0, -bond / 2.0], [0.0, 0.0, bond / 2.0]],
            vec![1, 1],
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn bind_rejects_spin_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = small_model(&mut rng);
        let config =
            MolecularConfiguration::new(vec![[0.0; 3], [0.0, 0.0, 1.4]], vec![1, 1], 2, 0).unwrap();
        assert!(matches!(
            model.bind(&config),
            Err(BindError::SpinMismatch { .. })
        ));
    }

    #[test]
    fn theta_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = small_model(&mut rng);
        let theta = model.theta();
        assert_eq!(theta.len(), model.n_params());
        let mut other = small_model(&mut rng);
        other.set_theta(&theta);
        assert_eq!(other.theta(), theta);
        // Generated slots of the template are irrelevant: a bound context
        // only depends on theta.
        let config = h2_config(1.4);
        let mut r = Array2::zeros((2, 3));
        r[(0, 2)] = -0.4;
        r[(1, 2)] = 0.6;
        r[(1, 0)] = 0.3;
        let a = model.bind(&config).unwrap().signed_log(r.view());
        let b = other.bind(&config).unwrap().signed_log(r.view());
        assert_eq!(a, b);
    }

    #[test]
    fn joint_theta_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = small_model(&mut rng);
        let config = h2_config(1.5);
        let ctx = model.bind(&config).unwrap();
        let mut r = Array2::zeros((2, 3));
        r[(0, 0)] = 0.31;
        r[(0, 2)] = -0.52;
        r[(1, 1)] = -0.27;
        r[(1, 2)] = 0.64;

        let (_, grad) = ctx.logpsi_and_theta_grad(r.view(), &model).unwrap();
        let theta = model.theta();
        let eval = |t: &Array1<f64>| -> f64 {
            let mut m = model.clone();
            m.set_theta(t);
            m.bind(&config).unwrap().signed_log(r.view()).log_abs
        };
        let h = 1e-6;
        let stride = (theta.len() / 80).max(1);
        let mut checked = 0;
        for idx in (0..theta.len()).step_by(stride) {
            let mut plus = theta.clone();
            plus[idx] += h;
            let mut minus = theta.clone();
            minus[idx] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            assert_relative_eq!(grad[idx], fd, max_relative = 2e-4, epsilon = 1e-8);
            checked += 1;
        }
        assert!(checked >= 50);
    }

    #[test]
    fn evaluation_at_unseen_geometry_succeeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = small_model(&mut rng);
        for bond in [0.9, 1.31, 2.7] {
            let ctx = model.bind(&h2_config(bond)).unwrap();
            let mut r = Array2::zeros((2, 3));
            r[(0, 2)] = -bond / 2.0 + 0.2;
            r[(1, 2)] = bond / 2.0 - 0.1;
            r[(1, 0)] = rng.random::<f64>();
            let out = ctx.signed_log(r.view());
            assert!(out.log_abs.is_finite());
        }
    }
}
