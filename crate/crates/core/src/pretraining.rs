//! Supervised initialization: regress the model's orbital matrices onto
//! reference single-particle orbitals with a layerwise-adaptive optimizer
//! before variational optimization begins.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{PretrainError, WfError};
use crate::geometry::{norm3, sub3, MolecularConfiguration, Vec3};
use crate::joint::{GeometryContext, JointModel};
use crate::wfmodel::backward::backward_from_orbitals;
use crate::wfmodel::forward::forward;
use crate::wfmodel::params::WaveFunctionParams;

/// One atom-centered exponential primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub center: Vec3,
    pub exponent: f64,
    pub norm: f64,
    /// Polynomial prefactor: 1, r, x, y or z relative to the center.
    pub kind: PrimitiveKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    S,
    Rs,
    Px,
    Py,
    Pz,
}

impl Primitive {
    pub fn eval(&self, point: &Vec3) -> f64 {
        let diff = sub3(point, &self.center);
        let r = norm3(&diff);
        let radial = self.norm * (-self.exponent * r).exp();
        match self.kind {
            PrimitiveKind::S => radial,
            PrimitiveKind::Rs => r * radial,
            PrimitiveKind::Px => diff[0] * radial,
            PrimitiveKind::Py => diff[1] * radial,
            PrimitiveKind::Pz => diff[2] * radial,
        }
    }
}

/// One reference configuration's occupied orbitals: each orbital is a linear
/// combination of primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorOrbitals {
    pub orbitals: Vec<Vec<(f64, Primitive)>>,
}

impl AnchorOrbitals {
    pub fn eval_orbital(&self, index: usize, point: &Vec3) -> f64 {
        self.orbitals[index]
            .iter()
            .map(|(c, p)| c * p.eval(point))
            .sum()
    }
}

/// A set of reference configurations; determinant k is matched against
/// anchor k mod len.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOrbitalSet {
    pub anchors: Vec<AnchorOrbitals>,
}

/// Slater-rule screening exponents for the occupied shells of a neutral
/// atom, plus hydrogenic exponents Z/n for shells beyond the occupation.
fn slater_shells(z: u32, needed: usize) -> Vec<(u32, char, f64)> {
    // Filling order with spatial-orbital counts per (n, l) block.
    let blocks = [
        (1u32, 's', 1usize),
        (2, 's', 1),
        (2, 'p', 3),
        (3, 's', 1),
        (3, 'p', 3),
        (4, 's', 1),
    ];
    // Electrons per block for the neutral atom.
    let mut remaining = z as i64;
    let mut occupancy = Vec::new();
    for &(n, l, spatial) in &blocks {
        let cap = 2 * spatial as i64;
        let take = remaining.clamp(0, cap);
        occupancy.push((n, l, spatial, take));
        remaining -= take;
    }
    let mut shells = Vec::new();
    for (idx, &(n, l, spatial, electrons)) in occupancy.iter().enumerate() {
        if shells.len() >= needed && electrons == 0 {
            break;
        }
        let zeta = if electrons > 0 {
            // Slater screening: same-group electrons 0.35 (0.30 in 1s),
            // n-1 shell 0.85, deeper shells 1.00.
            let mut sigma = 0.0;
            let same_group = group_electrons(&occupancy, idx) - 1;
            sigma += same_group as f64 * if n == 1 { 0.30 } else { 0.35 };
            for &(n2, _, _, e2) in &occupancy {
                if n2 + 1 == n {
                    sigma += 0.85 * e2 as f64;
                } else if n2 + 1 < n {
                    sigma += 1.0 * e2 as f64;
                }
            }
            ((z as f64 - sigma) / n as f64).max(0.3)
        } else {
            (z as f64 / n as f64).max(0.3)
        };
        for _ in 0..spatial {
            shells.push((n, l, zeta));
        }
    }
    shells
}

fn group_electrons(occupancy: &[(u32, char, usize, i64)], idx: usize) -> i64 {
    // 2s and 2p form one Slater group; likewise 3s3p.
    let (n, l, _, _) = occupancy[idx];
    occupancy
        .iter()
        .filter(|&&(n2, l2, _, _)| {
            n2 == n && (n == 1 || (l2 == 's' || l2 == 'p') == (l == 's' || l == 'p'))
        })
        .map(|&(_, _, _, e)| e)
        .sum()
}

fn shell_primitive(n: u32, l: char, axis: usize, zeta: f64, center: Vec3) -> Primitive {
    let pi = std::f64::consts::PI;
    match (n, l) {
        (1, 's') => Primitive {
            center,
            exponent: zeta,
            norm: (zeta.powi(3) / pi).sqrt(),
            kind: PrimitiveKind::S,
        },
        (_, 's') => Primitive {
            center,
            exponent: zeta,
            norm: (zeta.powi(5) / (3.0 * pi)).sqrt(),
            kind: PrimitiveKind::Rs,
        },
        (_, 'p') => Primitive {
            center,
            exponent: zeta,
            norm: (zeta.powi(5) / pi).sqrt(),
            kind: [PrimitiveKind::Px, PrimitiveKind::Py, PrimitiveKind::Pz][axis],
        },
        _ => unreachable!("unsupported shell"),
    }
}

impl ReferenceOrbitalSet {
    /// Analytic provider: single-exponent atomic orbitals with Slater
    /// screening-rule exponents, ordered by shell then by the canonical atom
    /// order. One anchor per supplied configuration.
    pub fn analytic(configs: &[MolecularConfiguration], n_orbitals: usize) -> ReferenceOrbitalSet {
        let anchors = configs
            .iter()
            .map(|config| {
                // Gather (shell_rank, atom_rank)-ordered atomic orbitals.
                let mut orbitals: Vec<(usize, usize, Primitive)> = Vec::new();
                for (atom_rank, &m) in config.canonical().iter().enumerate() {
                    let z = config.charges()[m];
                    let shells = slater_shells(z, n_orbitals);
                    let mut axis_counter = 0usize;
                    for (shell_rank, &(n, l, zeta)) in shells.iter().enumerate() {
                        let axis = if l == 'p' {
                            axis_counter += 1;
                            (axis_counter - 1) % 3
                        } else {
                            0
                        };
                        orbitals.push((
                            shell_rank,
                            atom_rank,
                            shell_primitive(n, l, axis, zeta, config.positions()[m]),
                        ));
                    }
                }
                orbitals.sort_by_key(|&(shell, atom, _)| (shell, atom));
                let picked = orbitals
                    .into_iter()
                    .take(n_orbitals)
                    .map(|(_, _, p)| vec![(1.0, p)])
                    .collect();
                AnchorOrbitals { orbitals: picked }
            })
            .collect();
        ReferenceOrbitalSet { anchors }
    }

    pub fn n_orbitals(&self) -> usize {
        self.anchors.first().map_or(0, |a| a.orbitals.len())
    }
}

/// External orbital-coefficient file: a basis of atom-centered exponentials
/// plus a coefficient matrix per geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitalFile {
    pub basis: Vec<BasisFunction>,
    pub geometry: Vec<GeometryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFunction {
    /// Nucleus index the primitive is centered on.
    pub center: usize,
    pub exponent: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryEntry {
    pub positions: Vec<Vec3>,
    /// Row = orbital, column = basis function.
    pub coefficients: Vec<Vec<f64>>,
}

impl OrbitalFile {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }

    pub fn from_toml(text: &str) -> Result<OrbitalFile, PretrainError> {
        toml::from_str(text).map_err(|e| PretrainError::Parse(e.to_string()))
    }

    /// Builds the reference set for a configuration. Every listed geometry
    /// becomes an anchor; the configuration must match one of them.
    pub fn reference_set(
        &self,
        config: &MolecularConfiguration,
    ) -> Result<ReferenceOrbitalSet, PretrainError> {
        let tol = 1e-6;
        let covered = self.geometry.iter().any(|entry| {
            entry.positions.len() == config.n_nuclei()
                && entry
                    .positions
                    .iter()
                    .zip(config.positions())
                    .all(|(a, b)| norm3(&sub3(a, b)) < tol)
        });
        if !covered {
            return Err(PretrainError::MissingGeometry(format!(
                "no entry matches the {}-atom configuration",
                config.n_nuclei()
            )));
        }
        let anchors = self
            .geometry
            .iter()
            .map(|entry| {
                let orbitals = entry
                    .coefficients
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(self.basis.iter())
                            .filter(|(c, _)| **c != 0.0)
                            .map(|(c, bf)| {
                                (
                                    *c,
                                    Primitive {
                                        center: entry.positions[bf.center],
                                        exponent: bf.exponent,
                                        norm: bf.norm,
                                        kind: PrimitiveKind::S,
                                    },
                                )
                            })
                            .collect()
                    })
                    .collect();
                AnchorOrbitals { orbitals }
            })
            .collect();
        Ok(ReferenceOrbitalSet { anchors })
    }
}

/// Evaluates the reference orbitals at the electron positions: K pairs of
/// target matrices shaped like the model's orbital matrices (rows =
/// orbitals, cols = electrons of the spin block). Determinants cycle through
/// the anchors.
pub fn target_orbitals(
    refs: &ReferenceOrbitalSet,
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    n_dets: usize,
) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>), PretrainError> {
    if refs.anchors.is_empty() {
        return Err(PretrainError::MissingGeometry("no anchors".into()));
    }
    let need = config.n_up().max(config.n_dn());
    if refs.n_orbitals() < need {
        return Err(PretrainError::MissingGeometry(format!(
            "{} reference orbitals cover fewer than {} electrons",
            refs.n_orbitals(),
            need
        )));
    }
    let mut up = Vec::with_capacity(n_dets);
    let mut dn = Vec::with_capacity(n_dets);
    for k in 0..n_dets {
        let anchor = &refs.anchors[k % refs.anchors.len()];
        up.push(block_targets(anchor, r, 0, config.n_up()));
        dn.push(block_targets(anchor, r, config.n_up(), config.n_dn()));
    }
    Ok((up, dn))
}

fn block_targets(
    anchor: &AnchorOrbitals,
    r: ArrayView2<f64>,
    offset: usize,
    n_alpha: usize,
) -> Array2<f64> {
    Array2::from_shape_fn((n_alpha, n_alpha), |(i, j)| {
        let point = [r[(offset + j, 0)], r[(offset + j, 1)], r[(offset + j, 2)]];
        anchor.eval_orbital(i, &point)
    })
}

/// Mean squared elementwise difference over all determinants, spins and
/// entries.
pub fn pretrain_loss(
    model_up: &[Array2<f64>],
    model_dn: &[Array2<f64>],
    target_up: &[Array2<f64>],
    target_dn: &[Array2<f64>],
) -> Result<f64, PretrainError> {
    if model_up.len() != target_up.len() || model_dn.len() != target_dn.len() {
        return Err(PretrainError::ShapeMismatch(format!(
            "{} model vs {} target determinants",
            model_up.len(),
            target_up.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (m, t) in model_up
        .iter()
        .zip(target_up)
        .chain(model_dn.iter().zip(target_dn))
    {
        if m.shape() != t.shape() {
            return Err(PretrainError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                m.shape(),
                t.shape()
            )));
        }
        total += (m - t).mapv(|x| x * x).sum();
        count += m.len();
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

/// Loss and joint-parameter gradient for one sample.
pub fn pretrain_sample_grad(
    ctx: &GeometryContext,
    model: &JointModel,
    r: ArrayView2<f64>,
    refs: &ReferenceOrbitalSet,
) -> Result<(f64, Array1<f64>), PretrainError> {
    let dims = ctx.wf.dims;
    let fwd = forward(r, &ctx.config, &ctx.frame, &ctx.wf);
    let model_up: Vec<Array2<f64>> = (0..dims.n_dets)
        .map(|k| fwd.orbitals[k][0].phi.clone())
        .collect();
    let model_dn: Vec<Array2<f64>> = (0..dims.n_dets)
        .map(|k| fwd.orbitals[k][1].phi.clone())
        .collect();
    let (target_up, target_dn) = target_orbitals(refs, r, &ctx.config, dims.n_dets)?;
    let loss = pretrain_loss(&model_up, &model_dn, &target_up, &target_dn)?;
    let count: usize = model_up.iter().map(|m| m.len()).sum::<usize>()
        + model_dn.iter().map(|m| m.len()).sum::<usize>();
    let scale = 2.0 / count.max(1) as f64;
    let d_up: Vec<Array2<f64>> = model_up
        .iter()
        .zip(&target_up)
        .map(|(m, t)| (m - t).mapv(|x| scale * x))
        .collect();
    let d_dn: Vec<Array2<f64>> = model_dn
        .iter()
        .zip(&target_dn)
        .map(|(m, t)| (m - t).mapv(|x| scale * x))
        .collect();
    let mut wf_grads = WaveFunctionParams::zeros(dims);
    backward_from_orbitals(&fwd, &ctx.config, &ctx.wf, &d_up, &d_dn, &mut wf_grads);
    let grads = ctx.fold_theta_grads(&wf_grads, model);
    Ok((loss, grads))
}

/// Layerwise-adaptive moment optimizer (the published Lamb rule) with a
/// trainability mask over the theta segments.
#[derive(Debug, Clone)]
pub struct LambOptimizer {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Array1<f64>,
    v: Array1<f64>,
    t: u64,
}

impl LambOptimizer {
    pub fn new(learning_rate: f64, n_params: usize) -> LambOptimizer {
        LambOptimizer {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
            weight_decay: 0.0,
            m: Array1::zeros(n_params),
            v: Array1::zeros(n_params),
            t: 0,
        }
    }

    /// One update: per trainable segment the parameter-to-update norm ratio
    /// scales the step. Untouched segments stay bitwise identical.
    pub fn step(
        &mut self,
        theta: &mut Array1<f64>,
        gradient: &Array1<f64>,
        segments: &[crate::joint::ThetaSegment],
    ) {
        assert_eq!(theta.len(), gradient.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for segment in segments.iter().filter(|s| s.pretrainable) {
            let range = segment.offset..segment.offset + segment.len;
            let mut norm_theta = 0.0;
            let mut norm_update = 0.0;
            let mut updates = Vec::with_capacity(segment.len);
            for idx in range.clone() {
                let g = gradient[idx];
                self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * g;
                self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[idx] / bc1;
                let v_hat = self.v[idx] / bc2;
                let u = m_hat / (v_hat.sqrt() + self.epsilon) + self.weight_decay * theta[idx];
                norm_theta += theta[idx] * theta[idx];
                norm_update += u * u;
                updates.push(u);
            }
            let norm_theta = norm_theta.sqrt();
            let norm_update = norm_update.sqrt();
            let trust = if norm_theta > 0.0 && norm_update > 0.0 {
                norm_theta / norm_update
            } else {
                1.0
            };
            for (u, idx) in updates.into_iter().zip(range) {
                theta[idx] -= self.learning_rate * trust * u;
            }
        }
    }
}

/// Carries the optimizer state through the pretraining loop.
pub struct PretrainState {
    pub model: JointModel,
    pub optimizer: LambOptimizer,
    pub step: u64,
}

impl PretrainState {
    pub fn new(model: JointModel, learning_rate: f64) -> PretrainState {
        let n = model.n_params();
        PretrainState {
            model,
            optimizer: LambOptimizer::new(learning_rate, n),
            step: 0,
        }
    }

    /// One pretraining update from an already-averaged gradient.
    pub fn apply_gradient(&mut self, gradient: &Array1<f64>) {
        let segments = self.model.theta_layout();
        let mut theta = self.model.theta();
        self.optimizer.step(&mut theta, gradient, &segments);
        self.model.set_theta(&theta);
        self.step += 1;
    }
}

/// Mean loss and gradient over a batch of samples, then one Lamb update.
pub fn pretrain_step(
    state: &mut PretrainState,
    ctx: &GeometryContext,
    batch: &crate::wfmodel::ElectronBatch,
    refs: &ReferenceOrbitalSet,
) -> Result<f64, PretrainError> {
    use rayon::prelude::*;
    let n = batch.len();
    assert!(n > 0);
    let results: Result<Vec<(f64, Array1<f64>)>, PretrainError> = (0..n)
        .into_par_iter()
        .map(|b| pretrain_sample_grad(ctx, &state.model, batch.sample(b), refs))
        .collect();
    let results = results?;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(state.model.n_params());
    for (l, g) in &results {
        loss += l;
        grad += g;
    }
    loss /= n as f64;
    grad /= n as f64;
    state.apply_gradient(&grad);
    Ok(loss)
}

impl From<WfError> for PretrainError {
    fn from(e: WfError) -> Self {
        PretrainError::ShapeMismatch(e.to_string())
    }
}
