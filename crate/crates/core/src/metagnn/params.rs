//! Parameters of the geometry-to-parameters network: charge embeddings,
//! message-passing layers and the multi-head readouts.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::metagnn::basis::{BasisConfig, BasisTables};
use crate::wfmodel::params::{Mlp2, WfDims, SOFTPLUS_INV_ONE};

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnDims {
    /// Node embedding width after each message-passing step.
    pub embedding_dim: usize,
    /// Message width.
    pub message_dim: usize,
    /// Number of message-passing steps.
    pub n_message_passing: usize,
    /// Rows of the charge embedding table (charges 1..=max_charge).
    pub max_charge: u32,
}

impl Default for GnnDims {
    fn default() -> Self {
        GnnDims {
            embedding_dim: 64,
            message_dim: 32,
            n_message_passing: 2,
            max_charge: 10,
        }
    }
}

/// A single linear readout head.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Named head kinds, in readout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeHeadKind {
    Embed,
    EnvPUp,
    EnvPDn,
    EnvSUp,
    EnvSDn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalHeadKind {
    BSingle(usize),
    BDouble(usize),
    OrbBUp,
    OrbBDn,
    DetWeights,
}

pub(crate) fn node_head_kinds() -> Vec<NodeHeadKind> {
    vec![
        NodeHeadKind::Embed,
        NodeHeadKind::EnvPUp,
        NodeHeadKind::EnvPDn,
        NodeHeadKind::EnvSUp,
        NodeHeadKind::EnvSDn,
    ]
}

pub(crate) fn global_head_kinds(wf: &WfDims) -> Vec<GlobalHeadKind> {
    let mut kinds = Vec::new();
    for t in 0..wf.n_layers {
        kinds.push(GlobalHeadKind::BSingle(t));
        kinds.push(GlobalHeadKind::BDouble(t));
    }
    kinds.push(GlobalHeadKind::OrbBUp);
    kinds.push(GlobalHeadKind::OrbBDn);
    kinds.push(GlobalHeadKind::DetWeights);
    kinds
}

fn node_head_len(kind: NodeHeadKind, wf: &WfDims) -> usize {
    match kind {
        NodeHeadKind::Embed => wf.embed_dim,
        NodeHeadKind::EnvPUp | NodeHeadKind::EnvSUp => wf.n_dets * wf.n_up,
        NodeHeadKind::EnvPDn | NodeHeadKind::EnvSDn => wf.n_dets * wf.n_dn,
    }
}

fn global_head_len(kind: GlobalHeadKind, wf: &WfDims) -> usize {
    match kind {
        GlobalHeadKind::BSingle(_) => wf.single_width,
        GlobalHeadKind::BDouble(_) => wf.double_width,
        GlobalHeadKind::OrbBUp => wf.n_dets * wf.n_up,
        GlobalHeadKind::OrbBDn => wf.n_dets * wf.n_dn,
        GlobalHeadKind::DetWeights => wf.n_dets,
    }
}

fn node_head_default_bias(kind: NodeHeadKind, wf: &WfDims) -> Array1<f64> {
    let len = node_head_len(kind, wf);
    match kind {
        NodeHeadKind::EnvSUp | NodeHeadKind::EnvSDn => Array1::from_elem(len, SOFTPLUS_INV_ONE),
        _ => Array1::zeros(len),
    }
}

fn global_head_default_bias(kind: GlobalHeadKind, wf: &WfDims) -> Array1<f64> {
    let len = global_head_len(kind, wf);
    match kind {
        GlobalHeadKind::DetWeights => Array1::from_elem(len, 1.0 / wf.n_dets as f64),
        _ => Array1::zeros(len),
    }
}

/// Full parameter set of the generator network.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGnnParams {
    pub dims: GnnDims,
    /// Wave-function dimensions the head shapes are tied to.
    pub wf_dims: WfDims,
    pub basis: BasisTables,
    /// (max_charge + 1) x embedding_dim, row 0 unused.
    pub charge_table: Array2<f64>,
    /// Message networks, one per step; inputs [l_m, l_n, e_mn].
    pub msg_nets: Vec<Mlp2>,
    /// Update networks, one per step; inputs [l_m, aggregated message].
    pub update_nets: Vec<Mlp2>,
    pub node_trunk: Mlp2,
    pub global_trunk: Mlp2,
    pub node_heads: Vec<Head>,
    pub global_heads: Vec<Head>,
}

impl MetaGnnParams {
    /// Node feature width entering message-passing step `t`.
    pub fn embed_in(&self, t: usize) -> usize {
        if t == 0 {
            self.dims.embedding_dim + self.basis.encoding_len()
        } else {
            self.dims.embedding_dim
        }
    }

    /// Near-zero scale of the readout head weights. Keeps generated
    /// assignments bias-dominated at initialization.
    pub const HEAD_INIT_SCALE: f64 = 1e-8;

    pub fn init<R: Rng>(dims: GnnDims, wf_dims: WfDims, basis: BasisConfig, rng: &mut R) -> Self {
        let tables = BasisTables::new(basis);
        let emb = dims.embedding_dim;
        let msg = dims.message_dim;
        let enc = tables.encoding_len();
        let n_rbf = tables.config.n_rbf;
        let charge_table = {
            let dist = Normal::new(0.0, 1.0).unwrap();
            Array2::from_shape_fn((dims.max_charge as usize + 1, emb), |_| dist.sample(rng))
        };
        let mut msg_nets = Vec::with_capacity(dims.n_message_passing);
        let mut update_nets = Vec::with_capacity(dims.n_message_passing);
        for t in 0..dims.n_message_passing {
            let e_in = if t == 0 { emb + enc } else { emb };
            msg_nets.push(Mlp2::init(2 * e_in + n_rbf, msg, msg, rng));
            update_nets.push(Mlp2::init(e_in + msg, emb, emb, rng));
        }
        let trunk_in = dims.n_message_passing * emb;
        let node_trunk = Mlp2::init(trunk_in, emb, emb, rng);
        let global_trunk = Mlp2::init(trunk_in, emb, emb, rng);
        let head_dist = Normal::new(0.0, Self::HEAD_INIT_SCALE).unwrap();
        let node_heads = node_head_kinds()
            .into_iter()
            .map(|kind| Head {
                w: Array2::from_shape_fn((node_head_len(kind, &wf_dims), emb), |_| {
                    head_dist.sample(rng)
                }),
                b: node_head_default_bias(kind, &wf_dims),
            })
            .collect();
        let global_heads = global_head_kinds(&wf_dims)
            .into_iter()
            .map(|kind| Head {
                w: Array2::from_shape_fn((global_head_len(kind, &wf_dims), emb), |_| {
                    head_dist.sample(rng)
                }),
                b: global_head_default_bias(kind, &wf_dims),
            })
            .collect();
        MetaGnnParams {
            dims,
            wf_dims,
            basis: tables,
            charge_table,
            msg_nets,
            update_nets,
            node_trunk,
            global_trunk,
            node_heads,
            global_heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut view) in z.slots_mut() {
            view.fill(0.0);
        }
        z
    }

    /// Named views of every parameter tensor, in canonical order.
    pub fn slots(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut v: Vec<(String, ArrayViewD<'_, f64>)> = Vec::new();
        v.push(("charge_table".into(), self.charge_table.view().into_dyn()));
        for (t, net) in self.msg_nets.iter().enumerate() {
            v.push((format!("msg_{t}_w1"), net.w1.view().into_dyn()));
            v.push((format!("msg_{t}_b1"), net.b1.view().into_dyn()));
            v.push((format!("msg_{t}_w2"), net.w2.view().into_dyn()));
            v.push((format!("msg_{t}_b2"), net.b2.view().into_dyn()));
        }
        for (t, net) in self.update_nets.iter().enumerate() {
            v.push((format!("upd_{t}_w1"), net.w1.view().into_dyn()));
            v.push((format!("upd_{t}_b1"), net.b1.view().into_dyn()));
            v.push((format!("upd_{t}_w2"), net.w2.view().into_dyn()));
            v.push((format!("upd_{t}_b2"), net.b2.view().into_dyn()));
        }
        for (name, net) in [
            ("node_trunk", &self.node_trunk),
            ("global_trunk", &self.global_trunk),
        ] {
            v.push((format!("{name}_w1"), net.w1.view().into_dyn()));
            v.push((format!("{name}_b1"), net.b1.view().into_dyn()));
            v.push((format!("{name}_w2"), net.w2.view().into_dyn()));
            v.push((format!("{name}_b2"), net.b2.view().into_dyn()));
        }
        for (i, head) in self.node_heads.iter().enumerate() {
            v.push((format!("node_head_{i}_w"), head.w.view().into_dyn()));
            v.push((format!("node_head_{i}_b"), head.b.view().into_dyn()));
        }
        for (i, head) in self.global_heads.iter().enumerate() {
            v.push((format!("global_head_{i}_w"), head.w.view().into_dyn()));
            v.push((format!("global_head_{i}_b"), head.b.view().into_dyn()));
        }
        v
    }

    pub fn slots_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut v: Vec<(String, ArrayViewMutD<'_, f64>)> = Vec::new();
        v.push((
            "charge_table".into(),
            self.charge_table.view_mut().into_dyn(),
        ));
        for (t, net) in self.msg_nets.iter_mut().enumerate() {
            v.push((format!("msg_{t}_w1"), net.w1.view_mut().into_dyn()));
            v.push((format!("msg_{t}_b1"), net.b1.view_mut().into_dyn()));
            v.push((format!("msg_{t}_w2"), net.w2.view_mut().into_dyn()));
            v.push((format!("msg_{t}_b2"), net.b2.view_mut().into_dyn()));
        }
        for (t, net) in self.update_nets.iter_mut().enumerate() {
            v.push((format!("upd_{t}_w1"), net.w1.view_mut().into_dyn()));
            v.push((format!("upd_{t}_b1"), net.b1.view_mut().into_dyn()));
            v.push((format!("upd_{t}_w2"), net.w2.view_mut().into_dyn()));
            v.push((format!("upd_{t}_b2"), net.b2.view_mut().into_dyn()));
        }
        for (name, net) in [
            ("node_trunk", &mut self.node_trunk),
            ("global_trunk", &mut self.global_trunk),
        ] {
            v.push((format!("{name}_w1"), net.w1.view_mut().into_dyn()));
            v.push((format!("{name}_b1"), net.b1.view_mut().into_dyn()));
            v.push((format!("{name}_w2"), net.w2.view_mut().into_dyn()));
            v.push((format!("{name}_b2"), net.b2.view_mut().into_dyn()));
        }
        for (i, head) in self.node_heads.iter_mut().enumerate() {
            v.push((format!("node_head_{i}_w"), head.w.view_mut().into_dyn()));
            v.push((format!("node_head_{i}_b"), head.b.view_mut().into_dyn()));
        }
        for (i, head) in self.global_heads.iter_mut().enumerate() {
            v.push((format!("global_head_{i}_w"), head.w.view_mut().into_dyn()));
            v.push((format!("global_head_{i}_b"), head.b.view_mut().into_dyn()));
        }
        v
    }

    pub fn n_params(&self) -> usize {
        self.slots().iter().map(|(_, view)| view.len()).sum()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (_, view) in self.slots() {
            out.extend(view.iter());
        }
    }

    pub fn unflatten_from(&mut self, data: &[f64]) -> usize {
        let mut offset = 0;
        for (_, mut view) in self.slots_mut() {
            let len = view.len();
            for (dst, src) in view.iter_mut().zip(&data[offset..offset + len]) {
                *dst = *src;
            }
            offset += len;
        }
        offset
    }

    /// Names of the final head bias slots, the only generator parameters
    /// updated during pretraining.
    pub fn head_bias_slot_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.node_heads.len() {
            names.push(format!("node_head_{i}_b"));
        }
        for i in 0..self.global_heads.len() {
            names.push(format!("global_head_{i}_b"));
        }
        names
    }

    /// Re-draws the head weights at a given scale; used by robustness tests.
    pub fn reinit_head_weights<R: Rng>(&mut self, scale: f64, rng: &mut R) {
        let dist = Normal::new(0.0, scale).unwrap();
        for head in self
            .node_heads
            .iter_mut()
            .chain(self.global_heads.iter_mut())
        {
            head.w.mapv_inplace(|_| dist.sample(rng));
        }
    }
}
