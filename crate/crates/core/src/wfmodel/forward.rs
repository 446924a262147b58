//! Forward evaluation of the wave function in the log domain.
//!
//! One traced implementation backs the public evaluation API and the
//! parameter-gradient backward pass.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::geometry::{norm3, sub3, EquivariantFrame, MolecularConfiguration};
use crate::linalg::{sign_log_det, SignLogDet};
use crate::wfmodel::params::{Spin, StreamLayer, WaveFunctionParams};

/// Natural log of |psi| plus the sign of psi. `sign == 0` marks a node and
/// pairs with the -inf sentinel in `log_abs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLogAmplitude {
    pub sign: i8,
    pub log_abs: f64,
}

impl SignedLogAmplitude {
    pub const ZERO: SignedLogAmplitude = SignedLogAmplitude {
        sign: 0,
        log_abs: f64::NEG_INFINITY,
    };

    pub fn is_node(&self) -> bool {
        self.sign == 0
    }
}

/// Batch of electron configurations, first `n_up` rows spin-up.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectronBatch {
    /// B x N x 3 coordinates in bohr.
    pub coords: Array3<f64>,
}

impl ElectronBatch {
    pub fn new(coords: Array3<f64>) -> Self {
        assert!(coords.iter().all(|x| x.is_finite()));
        ElectronBatch { coords }
    }

    pub fn len(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, b: usize) -> ArrayView2<'_, f64> {
        self.coords.index_axis(Axis(0), b)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Per-layer intermediates kept for the backward pass.
pub(crate) struct LayerTrace {
    /// N x (S + 2 * pair_in) concatenated single-stream input.
    pub single_in: Array2<f64>,
    /// 2S spin-pooled electron embeddings.
    pub pooled: Array1<f64>,
    /// N x S tanh output before the residual.
    pub h_tanh: Array2<f64>,
    /// N*N x P tanh output of the pair stream before any residual.
    pub g_tanh: Array2<f64>,
}

/// Orbital-side intermediates per determinant and spin.
pub(crate) struct OrbitalTrace {
    /// n x n linear part, rows = orbitals, cols = electrons of the spin.
    pub proj: Array2<f64>,
    /// n x n envelope factor.
    pub env: Array2<f64>,
    /// proj * env elementwise.
    pub phi: Array2<f64>,
    pub sld: SignLogDet,
}

/// Full forward record for one electron configuration.
pub(crate) struct Forward {
    /// N x M x 4 raw frame-projected features.
    pub feats: Array3<f64>,
    /// N x M x D projected features plus nuclear embedding.
    pub x: Array3<f64>,
    /// N x M x S hidden activation of the input MLP.
    pub t1: Array3<f64>,
    /// N x M x S output activation of the input MLP.
    pub t2: Array3<f64>,
    /// N x M electron-nucleus distances.
    pub dist_en: Array2<f64>,
    /// Stream states entering each layer; h_stack[t], g_stack[t] feed layer t.
    pub h_stack: Vec<Array2<f64>>,
    /// Pair states as flattened N*N x pair_dim rows (row = i * N + j).
    pub g_stack: Vec<Array2<f64>>,
    pub layers: Vec<LayerTrace>,
    /// Orbital traces indexed [k][spin 0 = up, 1 = dn].
    pub orbitals: Vec<[OrbitalTrace; 2]>,
    /// Signed weights t_k / psi of each determinant pair in the output.
    pub rho: Vec<f64>,
    pub out: SignedLogAmplitude,
}

fn spin_range(spin: Spin, n_up: usize, n: usize) -> std::ops::Range<usize> {
    match spin {
        Spin::Up => 0..n_up,
        Spin::Dn => n_up..n,
    }
}

/// Raw per-electron features and distances: frame-projected displacement to
/// every nucleus plus its norm.
fn electron_nucleus_features(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
) -> (Array3<f64>, Array2<f64>) {
    let n = r.nrows();
    let m = config.n_nuclei();
    let mut feats = Array3::zeros((n, m, 4));
    let mut dist = Array2::zeros((n, m));
    for i in 0..n {
        let ri = [r[(i, 0)], r[(i, 1)], r[(i, 2)]];
        for (mi, pos) in config.positions().iter().enumerate() {
            let diff = sub3(&ri, pos);
            let proj = frame.project(&diff);
            let d = norm3(&diff);
            feats[(i, mi, 0)] = proj[0];
            feats[(i, mi, 1)] = proj[1];
            feats[(i, mi, 2)] = proj[2];
            feats[(i, mi, 3)] = d;
            dist[(i, mi)] = d;
        }
    }
    (feats, dist)
}

/// Frame-projected pair features (i - j displacement plus norm), flattened to
/// N*N rows; the diagonal rows are zero.
fn pair_features(r: ArrayView2<f64>, frame: &EquivariantFrame) -> Array2<f64> {
    let n = r.nrows();
    let mut g = Array2::zeros((n * n, 4));
    for i in 0..n {
        let ri = [r[(i, 0)], r[(i, 1)], r[(i, 2)]];
        for j in 0..n {
            if i == j {
                continue;
            }
            let rj = [r[(j, 0)], r[(j, 1)], r[(j, 2)]];
            let diff = sub3(&ri, &rj);
            let proj = frame.project(&diff);
            let row = i * n + j;
            g[(row, 0)] = proj[0];
            g[(row, 1)] = proj[1];
            g[(row, 2)] = proj[2];
            g[(row, 3)] = norm3(&diff);
        }
    }
    g
}

/// Initial electron embeddings from the nucleus-summed input map, plus the
/// raw pair features.
pub fn electron_features(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &WaveFunctionParams,
) -> (Array2<f64>, Array3<f64>) {
    let fwd = forward(r, config, frame, params);
    let n = r.nrows();
    let g = fwd.g_stack[0]
        .clone()
        .into_shape_with_order((n, n, 4))
        .unwrap();
    (fwd.h_stack[0].clone(), g)
}

/// One stream update: spin-summed pair aggregation plus spin-pooled global
/// term on the single stream, an independent map on the pair stream, and
/// residual connections wherever the widths match.
pub fn update_layer(
    h: &Array2<f64>,
    g: &Array3<f64>,
    layer: &StreamLayer,
    n_up: usize,
) -> (Array2<f64>, Array3<f64>) {
    let n = h.nrows();
    let pair_in = g.shape()[2];
    let g_flat = g
        .view()
        .to_owned()
        .into_shape_with_order((n * n, pair_in))
        .unwrap();
    let (single_in, pooled) = assemble_single_input(h, &g_flat, n_up);
    let (h_tanh, g_tanh) = layer_tanh(layer, &single_in, &pooled, &g_flat);
    let h_out = &h_tanh + h;
    let p_out = g_tanh.ncols();
    let mut g_out = g_tanh;
    if pair_in == p_out {
        g_out = &g_out + &g_flat;
    }
    (h_out, g_out.into_shape_with_order((n, n, p_out)).unwrap())
}

fn assemble_single_input(
    h: &Array2<f64>,
    g_flat: &Array2<f64>,
    n_up: usize,
) -> (Array2<f64>, Array1<f64>) {
    let n = h.nrows();
    let s = h.ncols();
    let p = g_flat.ncols();
    let mut single_in = Array2::zeros((n, s + 2 * p));
    let mut pooled = Array1::zeros(2 * s);
    for i in 0..n {
        for c in 0..s {
            single_in[(i, c)] = h[(i, c)];
        }
        for spin_idx in 0..2 {
            let range = if spin_idx == 0 { 0..n_up } else { n_up..n };
            for j in range {
                let row = i * n + j;
                for c in 0..p {
                    single_in[(i, s + spin_idx * p + c)] += g_flat[(row, c)];
                }
            }
        }
    }
    for (spin_idx, range) in [(0, 0..n_up), (1, n_up..n)] {
        for j in range {
            for c in 0..s {
                pooled[spin_idx * s + c] += h[(j, c)];
            }
        }
    }
    (single_in, pooled)
}

fn layer_tanh(
    layer: &StreamLayer,
    single_in: &Array2<f64>,
    pooled: &Array1<f64>,
    g_flat: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let global_term = layer.w_global.dot(pooled);
    let mut h_pre = single_in.dot(&layer.w_single.t());
    h_pre += &layer.b_single;
    h_pre += &global_term;
    h_pre.mapv_inplace(f64::tanh);
    let mut g_pre = g_flat.dot(&layer.w_double.t());
    g_pre += &layer.b_double;
    g_pre.mapv_inplace(f64::tanh);
    (h_pre, g_pre)
}

/// Envelope factor for one determinant/spin: sum over nuclei of the gated
/// exponential decay, evaluated at the electron-nucleus distances.
fn envelope(
    params: &WaveFunctionParams,
    config: &MolecularConfiguration,
    spin: Spin,
    k: usize,
    dist_en: &Array2<f64>,
    n_up: usize,
) -> Array2<f64> {
    let n_alpha = params.dims.n_spin(spin);
    let n = dist_en.nrows();
    let p = params.env_p(spin);
    let s = params.env_s(spin);
    let mut env = Array2::zeros((n_alpha, n_alpha));
    let range = spin_range(spin, n_up, n);
    for i in 0..n_alpha {
        for (jj, j_glob) in range.clone().enumerate() {
            let mut total = 0.0;
            for &m in config.canonical() {
                let gate = sigmoid(p[(k, i, m)]);
                let decay = softplus(s[(k, i, m)]);
                total += gate * (-decay * dist_en[(j_glob, m)]).exp();
            }
            env[(i, jj)] = total;
        }
    }
    env
}

/// The K orbital matrix pairs: rows are orbitals, columns electrons of the
/// spin block, each entry a projected embedding times a nucleus-anchored
/// envelope.
pub fn orbitals(
    h_final: &Array2<f64>,
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    params: &WaveFunctionParams,
) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let (_, dist_en) = electron_nucleus_features(r, config, &identity_like(config));
    // Distances do not depend on the frame; reuse the helper with any frame.
    let mut out_up = Vec::with_capacity(params.dims.n_dets);
    let mut out_dn = Vec::with_capacity(params.dims.n_dets);
    for k in 0..params.dims.n_dets {
        let up = orbital_matrix(params, config, Spin::Up, k, h_final, &dist_en);
        let dn = orbital_matrix(params, config, Spin::Dn, k, h_final, &dist_en);
        out_up.push(up.phi);
        out_dn.push(dn.phi);
    }
    (out_up, out_dn)
}

fn identity_like(config: &MolecularConfiguration) -> EquivariantFrame {
    EquivariantFrame::identity(crate::geometry::geometric_center(config))
}

fn orbital_matrix(
    params: &WaveFunctionParams,
    config: &MolecularConfiguration,
    spin: Spin,
    k: usize,
    h_final: &Array2<f64>,
    dist_en: &Array2<f64>,
) -> OrbitalTrace {
    let dims = &params.dims;
    let n_alpha = dims.n_spin(spin);
    let n = h_final.nrows();
    let range = spin_range(spin, dims.n_up, n);
    let w = params.orb_w(spin);
    let b = params.orb_b(spin);
    let mut proj = Array2::zeros((n_alpha, n_alpha));
    for i in 0..n_alpha {
        for (jj, j_glob) in range.clone().enumerate() {
            let mut dot = b[(k, i)];
            for c in 0..dims.single_width {
                dot += w[(k, i, c)] * h_final[(j_glob, c)];
            }
            proj[(i, jj)] = dot;
        }
    }
    let env = envelope(params, config, spin, k, dist_en, dims.n_up);
    let phi = &proj * &env;
    let sld = sign_log_det(phi.view());
    OrbitalTrace {
        proj,
        env,
        phi,
        sld,
    }
}

/// Log-domain weighted sum of determinant pairs via signed log-sum-exp.
pub fn signed_logpsi(
    up: &[Array2<f64>],
    dn: &[Array2<f64>],
    det_weights: &Array1<f64>,
) -> SignedLogAmplitude {
    assert_eq!(up.len(), dn.len());
    assert_eq!(up.len(), det_weights.len());
    let slds: Vec<[SignLogDet; 2]> = up
        .iter()
        .zip(dn.iter())
        .map(|(u, d)| [sign_log_det(u.view()), sign_log_det(d.view())])
        .collect();
    combine_determinants(&slds, det_weights).0
}

/// Signed log-sum-exp over the K determinant products. Also returns the
/// signed weights rho_k = t_k / psi used by the gradients.
pub(crate) fn combine_determinants(
    slds: &[[SignLogDet; 2]],
    det_weights: &Array1<f64>,
) -> (SignedLogAmplitude, Vec<f64>) {
    let k_count = slds.len();
    let mut log_terms = vec![f64::NEG_INFINITY; k_count];
    let mut signs = vec![0i8; k_count];
    let mut max_log = f64::NEG_INFINITY;
    for k in 0..k_count {
        let w = det_weights[k];
        let [u, d] = slds[k];
        if w == 0.0 || u.sign == 0 || d.sign == 0 {
            continue;
        }
        let log_t = w.abs().ln() + u.log_abs + d.log_abs;
        let sign = (if w < 0.0 { -1i8 } else { 1i8 }) * u.sign * d.sign;
        log_terms[k] = log_t;
        signs[k] = sign;
        if log_t > max_log {
            max_log = log_t;
        }
    }
    if max_log == f64::NEG_INFINITY {
        return (SignedLogAmplitude::ZERO, vec![0.0; k_count]);
    }
    let mut total = 0.0;
    for k in 0..k_count {
        if signs[k] != 0 {
            total += signs[k] as f64 * (log_terms[k] - max_log).exp();
        }
    }
    if total == 0.0 {
        return (SignedLogAmplitude::ZERO, vec![0.0; k_count]);
    }
    let out = SignedLogAmplitude {
        sign: if total > 0.0 { 1 } else { -1 },
        log_abs: max_log + total.abs().ln(),
    };
    let rho = (0..k_count)
        .map(|k| {
            if signs[k] == 0 {
                0.0
            } else {
                signs[k] as f64 * (log_terms[k] - max_log).exp() / total
            }
        })
        .collect();
    (out, rho)
}

/// Full traced forward pass for a single electron configuration.
pub(crate) fn forward(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &WaveFunctionParams,
) -> Forward {
    let dims = &params.dims;
    let n = dims.n_electrons();
    assert_eq!(r.nrows(), n, "electron count mismatch");
    assert_eq!(config.n_nuclei(), dims.n_nuclei, "nucleus count mismatch");
    let m = dims.n_nuclei;
    let s_w = dims.single_width;
    let d_emb = dims.embed_dim;

    let (feats, dist_en) = electron_nucleus_features(r, config, frame);
    // Input map: project, add the nuclear embedding, run the shared MLP and
    // sum over nuclei in canonical order.
    let mut x = Array3::zeros((n, m, d_emb));
    for i in 0..n {
        for mi in 0..m {
            for c in 0..d_emb {
                let mut acc = params.nuclei_embed[(mi, c)];
                for f in 0..4 {
                    acc += params.input_proj[(c, f)] * feats[(i, mi, f)];
                }
                x[(i, mi, c)] = acc;
            }
        }
    }
    let x_flat = x
        .view()
        .to_owned()
        .into_shape_with_order((n * m, d_emb))
        .unwrap();
    let (t1_flat, t2_flat) = params.input_mlp.forward_rows(&x_flat);
    let t1 = t1_flat.into_shape_with_order((n, m, s_w)).unwrap();
    let t2 = t2_flat.into_shape_with_order((n, m, s_w)).unwrap();
    let mut h1 = Array2::zeros((n, s_w));
    for i in 0..n {
        for &mi in config.canonical() {
            for c in 0..s_w {
                h1[(i, c)] += t2[(i, mi, c)];
            }
        }
    }

    let g1 = pair_features(r, frame);
    let mut h_stack = vec![h1];
    let mut g_stack = vec![g1];
    let mut layer_traces = Vec::with_capacity(dims.n_layers);
    for layer in &params.layers {
        let h_in = h_stack.last().unwrap();
        let g_in = g_stack.last().unwrap();
        let (single_in, pooled) = assemble_single_input(h_in, g_in, dims.n_up);
        let (h_tanh, g_tanh) = layer_tanh(layer, &single_in, &pooled, g_in);
        let h_out = &h_tanh + h_in;
        let g_out = if g_in.ncols() == g_tanh.ncols() {
            &g_tanh + g_in
        } else {
            g_tanh.clone()
        };
        layer_traces.push(LayerTrace {
            single_in,
            pooled,
            h_tanh,
            g_tanh,
        });
        h_stack.push(h_out);
        g_stack.push(g_out);
    }

    let h_final = h_stack.last().unwrap().clone();
    let mut orbital_traces = Vec::with_capacity(dims.n_dets);
    for k in 0..dims.n_dets {
        let up = orbital_matrix(params, config, Spin::Up, k, &h_final, &dist_en);
        let dn = orbital_matrix(params, config, Spin::Dn, k, &h_final, &dist_en);
        orbital_traces.push([up, dn]);
    }
    let slds: Vec<[SignLogDet; 2]> = orbital_traces
        .iter()
        .map(|t| [t[0].sld, t[1].sld])
        .collect();
    let (out, rho) = combine_determinants(&slds, &params.det_weights);

    Forward {
        feats,
        x,
        t1,
        t2,
        dist_en,
        h_stack,
        g_stack,
        layers: layer_traces,
        orbitals: orbital_traces,
        rho,
        out,
    }
}

/// Signed log-amplitude of a single electron configuration.
///
/// A lean re-statement of the traced forward pass, for the sampling hot
/// path; a regression test pins the two against each other.
pub fn evaluate_one(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &WaveFunctionParams,
) -> SignedLogAmplitude {
    let dims = &params.dims;
    let n = dims.n_electrons();
    let m = dims.n_nuclei;
    let s_w = dims.single_width;
    debug_assert_eq!(r.nrows(), n);

    // Input map, accumulated per (electron, nucleus) without storing the
    // per-pair activations.
    let mlp = &params.input_mlp;
    let mut h = Array2::zeros((n, s_w));
    let mut dist_en = Array2::zeros((n, m));
    let mut x = vec![0.0; dims.embed_dim];
    let mut t1 = vec![0.0; s_w];
    for i in 0..n {
        let ri = [r[(i, 0)], r[(i, 1)], r[(i, 2)]];
        for &mi in config.canonical() {
            let diff = sub3(&ri, &config.positions()[mi]);
            let proj = frame.project(&diff);
            let d = norm3(&diff);
            dist_en[(i, mi)] = d;
            let feat = [proj[0], proj[1], proj[2], d];
            for (c, xc) in x.iter_mut().enumerate() {
                let mut acc = params.nuclei_embed[(mi, c)];
                for (f, fv) in feat.iter().enumerate() {
                    acc += params.input_proj[(c, f)] * fv;
                }
                *xc = acc;
            }
            for (hh, t) in t1.iter_mut().enumerate() {
                let mut acc = mlp.b1[hh];
                for (c, xc) in x.iter().enumerate() {
                    acc += mlp.w1[(hh, c)] * xc;
                }
                *t = acc.tanh();
            }
            for c in 0..s_w {
                let mut acc = mlp.b2[c];
                for (hh, t) in t1.iter().enumerate() {
                    acc += mlp.w2[(c, hh)] * t;
                }
                h[(i, c)] += acc.tanh();
            }
        }
    }

    let mut g = pair_features(r, frame);
    for layer in &params.layers {
        let (single_in, pooled) = assemble_single_input(&h, &g, dims.n_up);
        let (h_tanh, g_tanh) = layer_tanh(layer, &single_in, &pooled, &g);
        h += &h_tanh;
        if g.ncols() == g_tanh.ncols() {
            g += &g_tanh;
        } else {
            g = g_tanh;
        }
    }

    let mut slds: Vec<[SignLogDet; 2]> = Vec::with_capacity(dims.n_dets);
    for k in 0..dims.n_dets {
        let up = orbital_matrix(params, config, Spin::Up, k, &h, &dist_en);
        let dn = orbital_matrix(params, config, Spin::Dn, k, &h, &dist_en);
        slds.push([up.sld, dn.sld]);
    }
    combine_determinants(&slds, &params.det_weights).0
}

/// Batch evaluation; entries are independent and run in parallel.
pub fn evaluate(
    batch: &ElectronBatch,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &WaveFunctionParams,
) -> Vec<SignedLogAmplitude> {
    (0..batch.len())
        .into_par_iter()
        .map(|b| evaluate_one(batch.sample(b), config, frame, params))
        .collect()
}
