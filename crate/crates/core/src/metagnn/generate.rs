//! Forward generation of the per-geometry parameter assignment and the
//! matching backward pass for joint training.

use ndarray::{Array1, Array2, Array3};

use crate::error::MetaGnnError;
use crate::geometry::{build_frame, norm3, sub3, EquivariantFrame, MolecularConfiguration};
use crate::metagnn::params::{
    global_head_kinds, node_head_kinds, GlobalHeadKind, MetaGnnParams, NodeHeadKind,
};
use crate::wfmodel::params::{Mlp2, WaveFunctionParams};

/// Values for every generated slot of the wave function.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterAssignment {
    /// Per stream layer.
    pub b_single: Vec<Array1<f64>>,
    pub b_double: Vec<Array1<f64>>,
    /// K x n_alpha.
    pub orb_b_up: Array2<f64>,
    pub orb_b_dn: Array2<f64>,
    pub det_weights: Array1<f64>,
    /// M x embed_dim.
    pub nuclei_embed: Array2<f64>,
    /// K x n_alpha x M.
    pub env_p_up: Array3<f64>,
    pub env_p_dn: Array3<f64>,
    pub env_s_up: Array3<f64>,
    pub env_s_dn: Array3<f64>,
}

impl ParameterAssignment {
    pub fn zeros(params: &MetaGnnParams, n_nuclei: usize) -> Self {
        let wf = &params.wf_dims;
        ParameterAssignment {
            b_single: (0..wf.n_layers)
                .map(|_| Array1::zeros(wf.single_width))
                .collect(),
            b_double: (0..wf.n_layers)
                .map(|_| Array1::zeros(wf.double_width))
                .collect(),
            orb_b_up: Array2::zeros((wf.n_dets, wf.n_up)),
            orb_b_dn: Array2::zeros((wf.n_dets, wf.n_dn)),
            det_weights: Array1::zeros(wf.n_dets),
            nuclei_embed: Array2::zeros((n_nuclei, wf.embed_dim)),
            env_p_up: Array3::zeros((wf.n_dets, wf.n_up, n_nuclei)),
            env_p_dn: Array3::zeros((wf.n_dets, wf.n_dn, n_nuclei)),
            env_s_up: Array3::zeros((wf.n_dets, wf.n_up, n_nuclei)),
            env_s_dn: Array3::zeros((wf.n_dets, wf.n_dn, n_nuclei)),
        }
    }

    /// Writes the generated values into the matching wave-function slots.
    pub fn apply_to(&self, wf: &mut WaveFunctionParams) {
        for (t, layer) in wf.layers.iter_mut().enumerate() {
            layer.b_single.assign(&self.b_single[t]);
            layer.b_double.assign(&self.b_double[t]);
        }
        wf.orb_b_up.assign(&self.orb_b_up);
        wf.orb_b_dn.assign(&self.orb_b_dn);
        wf.det_weights.assign(&self.det_weights);
        wf.nuclei_embed.assign(&self.nuclei_embed);
        wf.env_p_up.assign(&self.env_p_up);
        wf.env_p_dn.assign(&self.env_p_dn);
        wf.env_s_up.assign(&self.env_s_up);
        wf.env_s_dn.assign(&self.env_s_dn);
    }

    /// Reads the generated-slot gradients out of a wave-function-shaped
    /// gradient holder.
    pub fn from_wf_grads(grads: &WaveFunctionParams) -> Self {
        ParameterAssignment {
            b_single: grads.layers.iter().map(|l| l.b_single.clone()).collect(),
            b_double: grads.layers.iter().map(|l| l.b_double.clone()).collect(),
            orb_b_up: grads.orb_b_up.clone(),
            orb_b_dn: grads.orb_b_dn.clone(),
            det_weights: grads.det_weights.clone(),
            nuclei_embed: grads.nuclei_embed.clone(),
            env_p_up: grads.env_p_up.clone(),
            env_p_dn: grads.env_p_dn.clone(),
            env_s_up: grads.env_s_up.clone(),
            env_s_dn: grads.env_s_dn.clone(),
        }
    }

    /// All global-slot values as one vector, in head order.
    pub fn global_concat(&self) -> Array1<f64> {
        let mut out = Vec::new();
        for t in 0..self.b_single.len() {
            out.extend(self.b_single[t].iter());
            out.extend(self.b_double[t].iter());
        }
        out.extend(self.orb_b_up.iter());
        out.extend(self.orb_b_dn.iter());
        out.extend(self.det_weights.iter());
        Array1::from_vec(out)
    }

    /// All node-slot values of nucleus `m` as one vector, in head order.
    pub fn node_row(&self, m: usize) -> Array1<f64> {
        let mut out = Vec::new();
        out.extend(self.nuclei_embed.row(m).iter());
        out.extend(self.env_p_up.slice(ndarray::s![.., .., m]).iter());
        out.extend(self.env_p_dn.slice(ndarray::s![.., .., m]).iter());
        out.extend(self.env_s_up.slice(ndarray::s![.., .., m]).iter());
        out.extend(self.env_s_dn.slice(ndarray::s![.., .., m]).iter());
        Array1::from_vec(out)
    }
}

/// Per-step message-passing record.
struct StepTrace {
    /// M x e_in node features entering the step.
    l_in: Array2<f64>,
    /// M x M x (2 e_in + n_rbf) message inputs (row m = receiver).
    msg_in: Array3<f64>,
    /// M x M x msg hidden and output activations of the message net.
    msg_t1: Array3<f64>,
    msg_t2: Array3<f64>,
    /// M x (e_in + msg) update inputs.
    upd_in: Array2<f64>,
    /// M x emb hidden / output activations of the update net.
    upd_t1: Array2<f64>,
    upd_t2: Array2<f64>,
    residual: bool,
}

/// Forward record for the backward pass.
pub struct GnnTrace {
    steps: Vec<StepTrace>,
    /// M x (L * emb) node readout inputs.
    node_in: Array2<f64>,
    /// L * emb global readout input.
    global_in: Array1<f64>,
    node_t1: Array2<f64>,
    node_t2: Array2<f64>,
    global_t1: Array1<f64>,
    global_t2: Array1<f64>,
}

/// Initial node embeddings: charge embedding concatenated with the
/// positional encoding of the frame-projected centered position.
pub fn init_node_embeddings(
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &MetaGnnParams,
) -> Result<Array2<f64>, MetaGnnError> {
    let m = config.n_nuclei();
    let emb = params.dims.embedding_dim;
    let enc_len = params.basis.encoding_len();
    let mut l0 = Array2::zeros((m, emb + enc_len));
    for mi in 0..m {
        let z = config.charges()[mi];
        if z > params.dims.max_charge {
            return Err(MetaGnnError::UnknownCharge {
                charge: z,
                max_charge: params.dims.max_charge,
            });
        }
        for c in 0..emb {
            l0[(mi, c)] = params.charge_table[(z as usize, c)];
        }
        let centered = sub3(&config.positions()[mi], &frame.center);
        let local = frame.project(&centered);
        let enc = params.basis.positional_encoding(&local);
        for (c, v) in enc.iter().enumerate() {
            l0[(mi, emb + c)] = *v;
        }
    }
    Ok(l0)
}

fn mlp_rows(net: &Mlp2, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    net.forward_rows(x)
}

/// One message-passing step over the fully connected nuclei graph,
/// self-edges excluded, messages accumulated in canonical nucleus order.
pub fn message_passing_step(
    l: &Array2<f64>,
    config: &MolecularConfiguration,
    params: &MetaGnnParams,
    step: usize,
) -> Array2<f64> {
    let (out, _) = message_passing_step_traced(l, config, params, step);
    out
}

fn message_passing_step_traced(
    l: &Array2<f64>,
    config: &MolecularConfiguration,
    params: &MetaGnnParams,
    step: usize,
) -> (Array2<f64>, StepTrace) {
    let m = config.n_nuclei();
    let e_in = l.ncols();
    let msg_dim = params.dims.message_dim;
    let emb = params.dims.embedding_dim;
    let n_rbf = params.basis.config.n_rbf;
    let msg_net = &params.msg_nets[step];
    let upd_net = &params.update_nets[step];

    // Message inputs for every ordered pair (receiver m, sender n).
    let mut msg_in = Array3::zeros((m, m, 2 * e_in + n_rbf));
    for mi in 0..m {
        for ni in 0..m {
            if mi == ni {
                continue;
            }
            for c in 0..e_in {
                msg_in[(mi, ni, c)] = l[(mi, c)];
                msg_in[(mi, ni, e_in + c)] = l[(ni, c)];
            }
            let d = norm3(&sub3(&config.positions()[mi], &config.positions()[ni]));
            let rbf = params.basis.radial_encoding(d);
            for c in 0..n_rbf {
                msg_in[(mi, ni, 2 * e_in + c)] = rbf[c];
            }
        }
    }
    let msg_in_flat = msg_in
        .view()
        .to_owned()
        .into_shape_with_order((m * m, 2 * e_in + n_rbf))
        .unwrap();
    let (t1_flat, t2_flat) = mlp_rows(msg_net, &msg_in_flat);
    let msg_t1 = t1_flat.into_shape_with_order((m, m, msg_dim)).unwrap();
    let msg_t2 = t2_flat.into_shape_with_order((m, m, msg_dim)).unwrap();

    // Aggregate messages in canonical sender order, skipping self-edges.
    let mut agg = Array2::zeros((m, msg_dim));
    for mi in 0..m {
        for &ni in config.canonical() {
            if ni == mi {
                continue;
            }
            for c in 0..msg_dim {
                agg[(mi, c)] += msg_t2[(mi, ni, c)];
            }
        }
    }

    let mut upd_in = Array2::zeros((m, e_in + msg_dim));
    for mi in 0..m {
        for c in 0..e_in {
            upd_in[(mi, c)] = l[(mi, c)];
        }
        for c in 0..msg_dim {
            upd_in[(mi, e_in + c)] = agg[(mi, c)];
        }
    }
    let (upd_t1, upd_t2) = mlp_rows(upd_net, &upd_in);
    let residual = e_in == emb;
    let l_out = if residual {
        &upd_t2 + l
    } else {
        upd_t2.clone()
    };
    (
        l_out,
        StepTrace {
            l_in: l.clone(),
            msg_in,
            msg_t1,
            msg_t2,
            upd_in,
            upd_t1,
            upd_t2,
            residual,
        },
    )
}

/// Runs the full generator: message passing, then the node- and global-level
/// readout heads. Also returns the trace for the backward pass.
pub fn generate_params_traced(
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &MetaGnnParams,
) -> Result<(ParameterAssignment, GnnTrace), MetaGnnError> {
    let m = config.n_nuclei();
    let emb = params.dims.embedding_dim;
    let l_gnn = params.dims.n_message_passing;
    let wf = &params.wf_dims;

    let mut l = init_node_embeddings(config, frame, params)?;
    let mut steps = Vec::with_capacity(l_gnn);
    let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(l_gnn);
    for t in 0..l_gnn {
        let (l_out, trace) = message_passing_step_traced(&l, config, params, t);
        steps.push(trace);
        outputs.push(l_out.clone());
        l = l_out;
    }

    // Readout inputs: per-node concatenation over steps, and the canonical
    // sums per step for the global level.
    let mut node_in = Array2::zeros((m, l_gnn * emb));
    let mut global_in = Array1::zeros(l_gnn * emb);
    for t in 0..l_gnn {
        for mi in 0..m {
            for c in 0..emb {
                node_in[(mi, t * emb + c)] = outputs[t][(mi, c)];
            }
        }
        for &mi in config.canonical() {
            for c in 0..emb {
                global_in[t * emb + c] += outputs[t][(mi, c)];
            }
        }
    }

    let (node_t1, node_t2) = mlp_rows(&params.node_trunk, &node_in);
    let g_in = global_in.clone().insert_axis(ndarray::Axis(0));
    let (g_t1, g_t2) = mlp_rows(&params.global_trunk, &g_in);
    let global_t1 = g_t1.index_axis(ndarray::Axis(0), 0).to_owned();
    let global_t2 = g_t2.index_axis(ndarray::Axis(0), 0).to_owned();

    let mut assignment = ParameterAssignment::zeros(params, m);
    for (head, kind) in params.node_heads.iter().zip(node_head_kinds()) {
        let out = node_t2.dot(&head.w.t()) + &head.b; // M x len
        for mi in 0..m {
            scatter_node_head(&mut assignment, kind, wf, mi, out.row(mi));
        }
    }
    for (head, kind) in params.global_heads.iter().zip(global_head_kinds(wf)) {
        let out = head.w.dot(&global_t2) + &head.b;
        scatter_global_head(&mut assignment, kind, wf, out.view());
    }

    Ok((
        assignment,
        GnnTrace {
            steps,
            node_in,
            global_in,
            node_t1,
            node_t2,
            global_t1,
            global_t2,
        },
    ))
}

/// Maps a molecular configuration to the generated parameter subsets.
pub fn generate_params(
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &MetaGnnParams,
) -> Result<ParameterAssignment, MetaGnnError> {
    generate_params_traced(config, frame, params).map(|(a, _)| a)
}

/// Convenience wrapper building the frame internally.
pub fn generate_params_for(
    config: &MolecularConfiguration,
    params: &MetaGnnParams,
) -> Result<ParameterAssignment, MetaGnnError> {
    let frame = build_frame(config);
    generate_params(config, &frame, params)
}

fn scatter_node_head(
    assignment: &mut ParameterAssignment,
    kind: NodeHeadKind,
    wf: &crate::wfmodel::params::WfDims,
    m: usize,
    row: ndarray::ArrayView1<f64>,
) {
    match kind {
        NodeHeadKind::Embed => {
            for c in 0..wf.embed_dim {
                assignment.nuclei_embed[(m, c)] = row[c];
            }
        }
        NodeHeadKind::EnvPUp => scatter_env(&mut assignment.env_p_up, wf.n_dets, wf.n_up, m, row),
        NodeHeadKind::EnvPDn => scatter_env(&mut assignment.env_p_dn, wf.n_dets, wf.n_dn, m, row),
        NodeHeadKind::EnvSUp => scatter_env(&mut assignment.env_s_up, wf.n_dets, wf.n_up, m, row),
        NodeHeadKind::EnvSDn => scatter_env(&mut assignment.env_s_dn, wf.n_dets, wf.n_dn, m, row),
    }
}

fn scatter_env(
    target: &mut Array3<f64>,
    k_count: usize,
    n_alpha: usize,
    m: usize,
    row: ndarray::ArrayView1<f64>,
) {
    for k in 0..k_count {
        for i in 0..n_alpha {
            target[(k, i, m)] = row[k * n_alpha + i];
        }
    }
}

fn scatter_global_head(
    assignment: &mut ParameterAssignment,
    kind: GlobalHeadKind,
    wf: &crate::wfmodel::params::WfDims,
    out: ndarray::ArrayView1<f64>,
) {
    match kind {
        GlobalHeadKind::BSingle(t) => assignment.b_single[t].assign(&out),
        GlobalHeadKind::BDouble(t) => assignment.b_double[t].assign(&out),
        GlobalHeadKind::OrbBUp => gather_matrix(&mut assignment.orb_b_up, wf.n_up, out),
        GlobalHeadKind::OrbBDn => gather_matrix(&mut assignment.orb_b_dn, wf.n_dn, out),
        GlobalHeadKind::DetWeights => assignment.det_weights.assign(&out),
    }
}

fn gather_matrix(target: &mut Array2<f64>, n_alpha: usize, out: ndarray::ArrayView1<f64>) {
    let k_count = target.nrows();
    for k in 0..k_count {
        for i in 0..n_alpha {
            target[(k, i)] = out[k * n_alpha + i];
        }
    }
}

/// Backward pass: folds assignment gradients into generator-parameter
/// gradients. `grads` must be a zeros_like clone of `params` (or an
/// accumulator across samples).
pub fn backward_generate(
    config: &MolecularConfiguration,
    params: &MetaGnnParams,
    trace: &GnnTrace,
    d_assignment: &ParameterAssignment,
    grads: &mut MetaGnnParams,
) {
    let m = config.n_nuclei();
    let emb = params.dims.embedding_dim;
    let wf = &params.wf_dims;
    let l_gnn = params.dims.n_message_passing;

    // Head backward: node level.
    let mut d_node_t2 = Array2::zeros((m, emb));
    for ((head, g_head), kind) in params
        .node_heads
        .iter()
        .zip(grads.node_heads.iter_mut())
        .zip(node_head_kinds())
    {
        let len = head.b.len();
        let mut d_out = Array2::zeros((m, len));
        for mi in 0..m {
            gather_node_head(d_assignment, kind, wf, mi, d_out.row_mut(mi));
        }
        for mi in 0..m {
            for c in 0..len {
                g_head.b[c] += d_out[(mi, c)];
            }
        }
        g_head.w += &d_out.t().dot(&trace.node_t2);
        d_node_t2 += &d_out.dot(&head.w);
    }

    // Head backward: global level.
    let mut d_global_t2 = Array1::zeros(emb);
    for ((head, g_head), kind) in params
        .global_heads
        .iter()
        .zip(grads.global_heads.iter_mut())
        .zip(global_head_kinds(wf))
    {
        let len = head.b.len();
        let mut d_out = Array1::zeros(len);
        gather_global_head(d_assignment, kind, wf, d_out.view_mut());
        g_head.b += &d_out;
        g_head.w += &outer(&d_out, &trace.global_t2);
        d_global_t2 += &head.w.t().dot(&d_out);
    }

    // Trunk backward.
    let mut d_node_in = Array2::zeros((m, l_gnn * emb));
    mlp_backward_rows(
        &params.node_trunk,
        &trace.node_in,
        &trace.node_t1,
        &trace.node_t2,
        &d_node_t2,
        &mut grads.node_trunk,
        &mut d_node_in,
    );
    let g_in = trace.global_in.clone().insert_axis(ndarray::Axis(0));
    let g_t1 = trace.global_t1.clone().insert_axis(ndarray::Axis(0));
    let g_t2 = trace.global_t2.clone().insert_axis(ndarray::Axis(0));
    let d_g_t2 = d_global_t2.insert_axis(ndarray::Axis(0));
    let mut d_global_in = Array2::zeros((1, l_gnn * emb));
    mlp_backward_rows(
        &params.global_trunk,
        &g_in,
        &g_t1,
        &g_t2,
        &d_g_t2,
        &mut grads.global_trunk,
        &mut d_global_in,
    );

    // Distribute readout-input gradients onto the per-step outputs.
    let mut d_outputs: Vec<Array2<f64>> = (0..l_gnn).map(|_| Array2::zeros((m, emb))).collect();
    for t in 0..l_gnn {
        for mi in 0..m {
            for c in 0..emb {
                d_outputs[t][(mi, c)] +=
                    d_node_in[(mi, t * emb + c)] + d_global_in[(0, t * emb + c)];
            }
        }
    }

    // Message-passing backward, last step first.
    let mut d_l_out = d_outputs.pop().unwrap();
    for t in (0..l_gnn).rev() {
        let step = &trace.steps[t];
        let e_in = step.l_in.ncols();
        let msg_dim = params.dims.message_dim;
        let mut d_l_in = Array2::zeros((m, e_in));
        if step.residual {
            d_l_in += &d_l_out;
        }
        // Update net backward.
        let mut d_upd_in = Array2::zeros((m, e_in + msg_dim));
        mlp_backward_rows(
            &params.update_nets[t],
            &step.upd_in,
            &step.upd_t1,
            &step.upd_t2,
            &d_l_out,
            &mut grads.update_nets[t],
            &mut d_upd_in,
        );
        let mut d_agg = Array2::zeros((m, msg_dim));
        for mi in 0..m {
            for c in 0..e_in {
                d_l_in[(mi, c)] += d_upd_in[(mi, c)];
            }
            for c in 0..msg_dim {
                d_agg[(mi, c)] = d_upd_in[(mi, e_in + c)];
            }
        }
        // Message net backward over all ordered pairs.
        let mut d_msg_out = Array3::zeros((m, m, msg_dim));
        for mi in 0..m {
            for ni in 0..m {
                if mi == ni {
                    continue;
                }
                for c in 0..msg_dim {
                    d_msg_out[(mi, ni, c)] = d_agg[(mi, c)];
                }
            }
        }
        let pair_dim = 2 * e_in + params.basis.config.n_rbf;
        let msg_in_flat = step
            .msg_in
            .view()
            .to_owned()
            .into_shape_with_order((m * m, pair_dim))
            .unwrap();
        let t1_flat = step
            .msg_t1
            .view()
            .to_owned()
            .into_shape_with_order((m * m, msg_dim))
            .unwrap();
        let t2_flat = step
            .msg_t2
            .view()
            .to_owned()
            .into_shape_with_order((m * m, msg_dim))
            .unwrap();
        let d_out_flat = d_msg_out.into_shape_with_order((m * m, msg_dim)).unwrap();
        let mut d_msg_in_flat = Array2::zeros((m * m, pair_dim));
        mlp_backward_rows(
            &params.msg_nets[t],
            &msg_in_flat,
            &t1_flat,
            &t2_flat,
            &d_out_flat,
            &mut grads.msg_nets[t],
            &mut d_msg_in_flat,
        );
        for mi in 0..m {
            for ni in 0..m {
                if mi == ni {
                    continue;
                }
                let row = mi * m + ni;
                for c in 0..e_in {
                    d_l_in[(mi, c)] += d_msg_in_flat[(row, c)];
                    d_l_in[(ni, c)] += d_msg_in_flat[(row, e_in + c)];
                }
            }
        }
        if t > 0 {
            d_l_out = &d_outputs.pop().unwrap() + &d_l_in;
        } else {
            // Initial embeddings: the first emb columns come from the
            // charge table; the positional encoding carries no parameters.
            for mi in 0..m {
                let z = config.charges()[mi] as usize;
                for c in 0..emb {
                    grads.charge_table[(z, c)] += d_l_in[(mi, c)];
                }
            }
        }
    }
}

fn gather_node_head(
    assignment: &ParameterAssignment,
    kind: NodeHeadKind,
    wf: &crate::wfmodel::params::WfDims,
    m: usize,
    mut row: ndarray::ArrayViewMut1<f64>,
) {
    match kind {
        NodeHeadKind::Embed => {
            for c in 0..wf.embed_dim {
                row[c] = assignment.nuclei_embed[(m, c)];
            }
        }
        NodeHeadKind::EnvPUp => gather_env(&assignment.env_p_up, wf.n_dets, wf.n_up, m, row),
        NodeHeadKind::EnvPDn => gather_env(&assignment.env_p_dn, wf.n_dets, wf.n_dn, m, row),
        NodeHeadKind::EnvSUp => gather_env(&assignment.env_s_up, wf.n_dets, wf.n_up, m, row),
        NodeHeadKind::EnvSDn => gather_env(&assignment.env_s_dn, wf.n_dets, wf.n_dn, m, row),
    }
}

fn gather_env(
    src: &Array3<f64>,
    k_count: usize,
    n_alpha: usize,
    m: usize,
    mut row: ndarray::ArrayViewMut1<f64>,
) {
    for k in 0..k_count {
        for i in 0..n_alpha {
            row[k * n_alpha + i] = src[(k, i, m)];
        }
    }
}

fn gather_global_head(
    assignment: &ParameterAssignment,
    kind: GlobalHeadKind,
    wf: &crate::wfmodel::params::WfDims,
    mut out: ndarray::ArrayViewMut1<f64>,
) {
    match kind {
        GlobalHeadKind::BSingle(t) => out.assign(&assignment.b_single[t]),
        GlobalHeadKind::BDouble(t) => out.assign(&assignment.b_double[t]),
        GlobalHeadKind::OrbBUp => {
            let k_count = assignment.orb_b_up.nrows();
            for k in 0..k_count {
                for i in 0..wf.n_up {
                    out[k * wf.n_up + i] = assignment.orb_b_up[(k, i)];
                }
            }
        }
        GlobalHeadKind::OrbBDn => {
            let k_count = assignment.orb_b_dn.nrows();
            for k in 0..k_count {
                for i in 0..wf.n_dn {
                    out[k * wf.n_dn + i] = assignment.orb_b_dn[(k, i)];
                }
            }
        }
        GlobalHeadKind::DetWeights => out.assign(&assignment.det_weights),
    }
}

/// Backward through a depth-2 tanh MLP applied to rows. Accumulates weight
/// gradients into `grads` and input gradients into `d_input`.
fn mlp_backward_rows(
    net: &Mlp2,
    input: &Array2<f64>,
    t1: &Array2<f64>,
    t2: &Array2<f64>,
    d_out: &Array2<f64>,
    grads: &mut Mlp2,
    d_input: &mut Array2<f64>,
) {
    let d_pre2 = d_out * &t2.mapv(|x| 1.0 - x * x);
    grads.b2 += &d_pre2.sum_axis(ndarray::Axis(0));
    grads.w2 += &d_pre2.t().dot(t1);
    let d_t1 = d_pre2.dot(&net.w2);
    let d_pre1 = &d_t1 * &t1.mapv(|x| 1.0 - x * x);
    grads.b1 += &d_pre1.sum_axis(ndarray::Axis(0));
    grads.w1 += &d_pre1.t().dot(input);
    *d_input += &d_pre1.dot(&net.w1);
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[(i, j)] = a[i] * b[j];
        }
    }
    out
}
