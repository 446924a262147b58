//! Reverse-mode gradient of log|psi| with respect to every parameter slot.
//!
//! Consumes the traced forward pass; the gradient holder has the same shape
//! as the parameters so slot-level plumbing (flattening, tagging) is reused.

use ndarray::{Array1, Array2};

use crate::error::WfError;
use crate::geometry::MolecularConfiguration;
use crate::linalg::Lu;
use crate::wfmodel::forward::{sigmoid, Forward};
use crate::wfmodel::params::{Spin, WaveFunctionParams};

/// Accumulates d log|psi| / d theta for one sample into `grads`.
///
/// Returns an error at a node of psi, where the gradient is undefined.
pub(crate) fn backward_params(
    fwd: &Forward,
    config: &MolecularConfiguration,
    params: &WaveFunctionParams,
    grads: &mut WaveFunctionParams,
) -> Result<(), WfError> {
    if fwd.out.is_node() {
        return Err(WfError::Node);
    }
    let dims = &params.dims;

    // Determinant weights: d log|psi| / d w_k = D_up D_dn / psi, computed in
    // the log domain so w_k = 0 stays well defined.
    for k in 0..dims.n_dets {
        let [up, dn] = &fwd.orbitals[k];
        if up.sld.sign == 0 || dn.sld.sign == 0 {
            continue;
        }
        let log_ratio = up.sld.log_abs + dn.sld.log_abs - fwd.out.log_abs;
        grads.det_weights[k] += (up.sld.sign * dn.sld.sign * fwd.out.sign) as f64 * log_ratio.exp();
    }

    // Orbital matrices: d log|psi| / d phi^{k a} = rho_k (phi^{k a})^{-T}.
    let mut d_phi_up: Vec<Array2<f64>> = Vec::with_capacity(dims.n_dets);
    let mut d_phi_dn: Vec<Array2<f64>> = Vec::with_capacity(dims.n_dets);
    for k in 0..dims.n_dets {
        for (si, spin) in Spin::BOTH.iter().enumerate() {
            let n_alpha = dims.n_spin(*spin);
            let trace = &fwd.orbitals[k][si];
            let d_phi = if fwd.rho[k] == 0.0 || n_alpha == 0 {
                Array2::zeros((n_alpha, n_alpha))
            } else {
                let lu = Lu::factor(trace.phi.view());
                match lu.inverse() {
                    Some(inv) => inv.t().mapv(|x| fwd.rho[k] * x),
                    None => Array2::zeros((n_alpha, n_alpha)),
                }
            };
            match spin {
                Spin::Up => d_phi_up.push(d_phi),
                Spin::Dn => d_phi_dn.push(d_phi),
            }
        }
    }
    backward_from_orbitals(fwd, config, params, &d_phi_up, &d_phi_dn, grads);
    Ok(())
}

/// Backward pass below the orbital matrices: given cotangents d L / d phi
/// for every determinant and spin (rows = orbitals, cols = electrons of the
/// spin block), accumulates gradients for the orbital projections,
/// envelopes, stream layers and input map.
pub(crate) fn backward_from_orbitals(
    fwd: &Forward,
    config: &MolecularConfiguration,
    params: &WaveFunctionParams,
    d_phi_up: &[Array2<f64>],
    d_phi_dn: &[Array2<f64>],
    grads: &mut WaveFunctionParams,
) {
    let dims = &params.dims;
    let n = dims.n_electrons();
    let m = dims.n_nuclei;
    let s_w = dims.single_width;

    let mut d_h_final: Array2<f64> = Array2::zeros((n, s_w));

    for k in 0..dims.n_dets {
        for (si, spin) in Spin::BOTH.iter().enumerate() {
            let trace = &fwd.orbitals[k][si];
            let n_alpha = dims.n_spin(*spin);
            if n_alpha == 0 {
                continue;
            }
            let d_phi = match spin {
                Spin::Up => &d_phi_up[k],
                Spin::Dn => &d_phi_dn[k],
            };
            let d_proj = d_phi * &trace.env;
            let d_env = d_phi * &trace.proj;

            let (orb_w, orb_b, env_p, env_s, grad_w, grad_b, grad_p, grad_s) = match spin {
                Spin::Up => (
                    &params.orb_w_up,
                    &params.orb_b_up,
                    &params.env_p_up,
                    &params.env_s_up,
                    &mut grads.orb_w_up,
                    &mut grads.orb_b_up,
                    &mut grads.env_p_up,
                    &mut grads.env_s_up,
                ),
                Spin::Dn => (
                    &params.orb_w_dn,
                    &params.orb_b_dn,
                    &params.env_p_dn,
                    &params.env_s_dn,
                    &mut grads.orb_w_dn,
                    &mut grads.orb_b_dn,
                    &mut grads.env_p_dn,
                    &mut grads.env_s_dn,
                ),
            };
            let _ = orb_b;
            let offset = match spin {
                Spin::Up => 0,
                Spin::Dn => dims.n_up,
            };
            let h_final = fwd.h_stack.last().unwrap();
            for i in 0..n_alpha {
                for jj in 0..n_alpha {
                    let j_glob = offset + jj;
                    let dp = d_proj[(i, jj)];
                    grad_b[(k, i)] += dp;
                    for c in 0..s_w {
                        grad_w[(k, i, c)] += dp * h_final[(j_glob, c)];
                        d_h_final[(j_glob, c)] += dp * orb_w[(k, i, c)];
                    }
                    // Envelope: split d_env over the nucleus terms.
                    let de = d_env[(i, jj)];
                    for mi in 0..m {
                        let p_val = env_p[(k, i, mi)];
                        let s_val = env_s[(k, i, mi)];
                        let gate = sigmoid(p_val);
                        let decay = crate::wfmodel::forward::softplus(s_val);
                        let dist = fwd.dist_en[(j_glob, mi)];
                        let e = (-decay * dist).exp();
                        grad_p[(k, i, mi)] += de * gate * (1.0 - gate) * e;
                        grad_s[(k, i, mi)] += de * gate * e * (-dist) * sigmoid(s_val);
                    }
                }
            }
        }
    }

    // Stream layers in reverse.
    let mut d_h = d_h_final;
    let mut d_g: Array2<f64> = Array2::zeros((n * n, dims.double_width));
    for (t, layer) in params.layers.iter().enumerate().rev() {
        let trace = &fwd.layers[t];
        let pair_in = dims.pair_in(t);
        let g_in = &fwd.g_stack[t];

        // Pair stream backward. Output residual exists when widths match.
        let d_g_tanh = d_g.clone();
        let d_pre_g = &d_g_tanh * &trace.g_tanh.mapv(|x| 1.0 - x * x);
        let mut d_g_in = if pair_in == dims.double_width {
            d_g.clone()
        } else {
            Array2::zeros((n * n, pair_in))
        };
        grads.layers[t].b_double += &d_pre_g.sum_axis(ndarray::Axis(0));
        grads.layers[t].w_double += &d_pre_g.t().dot(g_in);
        d_g_in += &d_pre_g.dot(&layer.w_double);

        // Single stream backward.
        let d_h_out = d_h;
        let d_pre_h = &d_h_out * &trace.h_tanh.mapv(|x| 1.0 - x * x);
        let mut d_h_in = d_h_out.clone(); // residual always present
        grads.layers[t].b_single += &d_pre_h.sum_axis(ndarray::Axis(0));
        grads.layers[t].w_single += &d_pre_h.t().dot(&trace.single_in);
        let d_pre_sum = d_pre_h.sum_axis(ndarray::Axis(0));
        grads.layers[t].w_global += &outer(&d_pre_sum, &trace.pooled);
        let d_pooled = layer.w_global.t().dot(&d_pre_sum);
        for (spin_idx, range) in [(0usize, 0..dims.n_up), (1, dims.n_up..n)] {
            for j in range {
                for c in 0..s_w {
                    d_h_in[(j, c)] += d_pooled[spin_idx * s_w + c];
                }
            }
        }
        let d_single_in = d_pre_h.dot(&layer.w_single);
        for i in 0..n {
            for c in 0..s_w {
                d_h_in[(i, c)] += d_single_in[(i, c)];
            }
            for (spin_idx, range) in [(0usize, 0..dims.n_up), (1, dims.n_up..n)] {
                for j in range {
                    let row = i * n + j;
                    for c in 0..pair_in {
                        d_g_in[(row, c)] += d_single_in[(i, s_w + spin_idx * pair_in + c)];
                    }
                }
            }
        }
        d_h = d_h_in;
        d_g = d_g_in;
    }

    // Input map backward: h1_i = sum_m mlp(x_im), x_im = W f_im + z_m.
    let d_h1 = d_h;
    let mlp = &params.input_mlp;
    for i in 0..n {
        for mi in 0..m {
            let row_t1: Vec<f64> = (0..s_w).map(|c| fwd.t1[(i, mi, c)]).collect();
            let row_t2: Vec<f64> = (0..s_w).map(|c| fwd.t2[(i, mi, c)]).collect();
            let d_pre2: Vec<f64> = (0..s_w)
                .map(|c| d_h1[(i, c)] * (1.0 - row_t2[c] * row_t2[c]))
                .collect();
            for c in 0..s_w {
                grads.input_mlp.b2[c] += d_pre2[c];
                for h in 0..s_w {
                    grads.input_mlp.w2[(c, h)] += d_pre2[c] * row_t1[h];
                }
            }
            let mut d_t1 = vec![0.0; s_w];
            for h in 0..s_w {
                let mut acc = 0.0;
                for c in 0..s_w {
                    acc += mlp.w2[(c, h)] * d_pre2[c];
                }
                d_t1[h] = acc;
            }
            let d_pre1: Vec<f64> = (0..s_w)
                .map(|h| d_t1[h] * (1.0 - row_t1[h] * row_t1[h]))
                .collect();
            for h in 0..s_w {
                grads.input_mlp.b1[h] += d_pre1[h];
                for c in 0..dims.embed_dim {
                    grads.input_mlp.w1[(h, c)] += d_pre1[h] * fwd.x[(i, mi, c)];
                }
            }
            for c in 0..dims.embed_dim {
                let mut dx = 0.0;
                for h in 0..s_w {
                    dx += mlp.w1[(h, c)] * d_pre1[h];
                }
                grads.nuclei_embed[(mi, c)] += dx;
                for f in 0..4 {
                    grads.input_proj[(c, f)] += dx * fwd.feats[(i, mi, f)];
                }
            }
        }
    }
    let _ = config;
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
