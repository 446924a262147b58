//! Exact first and second derivatives of log|psi| with respect to the
//! electron coordinates, computed in a single forward pass.
//!
//! Every intermediate tensor carries its value, its dense gradient over all
//! 3N coordinates, and the accumulated Laplacian. The chain rules close over
//! this triple: for unary f, lap(f(u)) = f'(u) lap(u) + f''(u) |grad u|^2,
//! and for products the cross term 2 grad(a).grad(b) appears.

use ndarray::{Array1, Array2, Array3, ArrayView2};

use crate::error::WfError;
use crate::geometry::{norm3, sub3, EquivariantFrame, MolecularConfiguration};
use crate::linalg::{Lu, SignLogDet};
use crate::wfmodel::forward::{combine_determinants, sigmoid, softplus, SignedLogAmplitude};
use crate::wfmodel::params::{Spin, WaveFunctionParams};

/// Value, coordinate gradient and Laplacian of log|psi|.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPsiDerivs {
    pub value: SignedLogAmplitude,
    /// N x 3 gradient of log|psi|.
    pub grad: Array2<f64>,
    /// Sum of all second derivatives of log|psi|.
    pub laplacian: f64,
}

/// Tensor of jets: value (R x C), gradient (D x R x C) and Laplacian (R x C).
struct JetMat {
    v: Array2<f64>,
    g: Array3<f64>,
    l: Array2<f64>,
}

impl JetMat {
    fn zeros(ndir: usize, rows: usize, cols: usize) -> Self {
        JetMat {
            v: Array2::zeros((rows, cols)),
            g: Array3::zeros((ndir, rows, cols)),
            l: Array2::zeros((rows, cols)),
        }
    }

    fn ndir(&self) -> usize {
        self.g.shape()[0]
    }

    /// y = x W^T, optionally plus a bias on the value.
    fn linear(&self, w: &Array2<f64>, bias: Option<&Array1<f64>>) -> JetMat {
        let (ndir, rows, cols) = (self.ndir(), self.v.nrows(), self.v.ncols());
        let out = w.nrows();
        let mut v = self.v.dot(&w.t());
        if let Some(b) = bias {
            v += b;
        }
        let g_flat = self
            .g
            .view()
            .into_shape_with_order((ndir * rows, cols))
            .unwrap();
        let g = g_flat
            .dot(&w.t())
            .into_shape_with_order((ndir, rows, out))
            .unwrap();
        let l = self.l.dot(&w.t());
        JetMat { v, g, l }
    }

    fn tanh(&self) -> JetMat {
        let t = self.v.mapv(f64::tanh);
        let deriv = t.mapv(|x| 1.0 - x * x);
        let ndir = self.ndir();
        let mut sum_g2 = Array2::zeros(self.v.raw_dim());
        let mut g = self.g.clone();
        for d in 0..ndir {
            let mut gd = g.index_axis_mut(ndarray::Axis(0), d);
            sum_g2 += &gd.mapv(|x| x * x);
            gd *= &deriv;
        }
        // f'' = -2 t (1 - t^2)
        let l = &deriv * &self.l + t.mapv(|x| -2.0 * x) * &deriv * &sum_g2;
        JetMat { v: t, g, l }
    }

    fn add(&self, other: &JetMat) -> JetMat {
        JetMat {
            v: &self.v + &other.v,
            g: &self.g + &other.g,
            l: &self.l + &other.l,
        }
    }

    fn mul(&self, other: &JetMat) -> JetMat {
        let ndir = self.ndir();
        let v = &self.v * &other.v;
        let mut g = Array3::zeros(self.g.raw_dim());
        let mut cross = Array2::zeros(self.v.raw_dim());
        for d in 0..ndir {
            let ga = self.g.index_axis(ndarray::Axis(0), d);
            let gb = other.g.index_axis(ndarray::Axis(0), d);
            let mut go = g.index_axis_mut(ndarray::Axis(0), d);
            go.assign(&(&ga * &other.v + &gb * &self.v));
            cross += &(&ga * &gb);
        }
        let l = &self.l * &other.v + &other.l * &self.v + cross.mapv(|x| 2.0 * x);
        JetMat { v, g, l }
    }
}

struct JetScalar {
    g: Array1<f64>,
    l: f64,
}

/// log|det A| of a jet matrix: gradient tr(A^-1 dA) per direction and
/// Laplacian tr(A^-1 L) - sum_d tr((A^-1 G_d)^2).
fn log_det_jet(a: &JetMat) -> (SignLogDet, Option<JetScalar>) {
    let n = a.v.nrows();
    let ndir = a.ndir();
    if n == 0 {
        return (
            SignLogDet::UNIT,
            Some(JetScalar {
                g: Array1::zeros(ndir),
                l: 0.0,
            }),
        );
    }
    let lu = Lu::factor(a.v.view());
    let sld = lu.sign_log_det();
    if sld.sign == 0 {
        return (sld, None);
    }
    let inv = lu.inverse().expect("nonsingular");
    let mut g = Array1::zeros(ndir);
    let mut lap = 0.0;
    for i in 0..n {
        for j in 0..n {
            lap += inv[(j, i)] * a.l[(i, j)];
        }
    }
    for d in 0..ndir {
        let gd = a.g.index_axis(ndarray::Axis(0), d);
        let m = inv.dot(&gd);
        let mut tr = 0.0;
        let mut tr_sq = 0.0;
        for i in 0..n {
            tr += m[(i, i)];
            for j in 0..n {
                tr_sq += m[(i, j)] * m[(j, i)];
            }
        }
        g[d] = tr;
        lap -= tr_sq;
    }
    (sld, Some(JetScalar { g, l: lap }))
}

/// Electron-nucleus feature jets plus distance jets.
///
/// Features are (frame-projected displacement, norm) per (electron, nucleus)
/// row; the distance entry has Laplacian 2/d.
fn en_feature_jets(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
) -> Result<(JetMat, JetMat), WfError> {
    let n = r.nrows();
    let m = config.n_nuclei();
    let ndir = 3 * n;
    let mut feats = JetMat::zeros(ndir, n * m, 4);
    let mut dist = JetMat::zeros(ndir, n, m);
    for i in 0..n {
        let ri = [r[(i, 0)], r[(i, 1)], r[(i, 2)]];
        for (mi, pos) in config.positions().iter().enumerate() {
            let diff = sub3(&ri, pos);
            let d = norm3(&diff);
            if d < 1e-12 {
                return Err(WfError::ElectronOnNucleus {
                    electron: i,
                    nucleus: mi,
                });
            }
            let proj = frame.project(&diff);
            let row = i * m + mi;
            for a in 0..3 {
                feats.v[(row, a)] = proj[a];
                for c in 0..3 {
                    feats.g[(3 * i + c, row, a)] = frame.axes[a][c];
                }
            }
            feats.v[(row, 3)] = d;
            dist.v[(i, mi)] = d;
            for c in 0..3 {
                let u = diff[c] / d;
                feats.g[(3 * i + c, row, 3)] = u;
                dist.g[(3 * i + c, i, mi)] = u;
            }
            feats.l[(row, 3)] = 2.0 / d;
            dist.l[(i, mi)] = 2.0 / d;
        }
    }
    Ok((feats, dist))
}

/// Pair feature jets, rows i*N + j; diagonal rows are identically zero.
fn pair_feature_jets(r: ArrayView2<f64>, frame: &EquivariantFrame) -> Result<JetMat, WfError> {
    let n = r.nrows();
    let ndir = 3 * n;
    let mut g = JetMat::zeros(ndir, n * n, 4);
    for i in 0..n {
        let ri = [r[(i, 0)], r[(i, 1)], r[(i, 2)]];
        for j in 0..n {
            if i == j {
                continue;
            }
            let rj = [r[(j, 0)], r[(j, 1)], r[(j, 2)]];
            let diff = sub3(&ri, &rj);
            let d = norm3(&diff);
            if d < 1e-12 {
                return Err(WfError::CoincidentElectrons { i, j });
            }
            let proj = frame.project(&diff);
            let row = i * n + j;
            for a in 0..3 {
                g.v[(row, a)] = proj[a];
                for c in 0..3 {
                    g.g[(3 * i + c, row, a)] = frame.axes[a][c];
                    g.g[(3 * j + c, row, a)] = -frame.axes[a][c];
                }
            }
            g.v[(row, 3)] = d;
            for c in 0..3 {
                let u = diff[c] / d;
                g.g[(3 * i + c, row, 3)] = u;
                g.g[(3 * j + c, row, 3)] = -u;
            }
            // d^2/dri^2 + d^2/drj^2 of |ri - rj| = 2/d + 2/d.
            g.l[(row, 3)] = 4.0 / d;
        }
    }
    Ok(g)
}

/// Spin-summed pair aggregation: rows (i, spin block sum over j).
fn spin_sum_pairs(g: &JetMat, n: usize, n_up: usize, spin: Spin) -> JetMat {
    let p = g.v.ncols();
    let ndir = g.ndir();
    let mut out = JetMat::zeros(ndir, n, p);
    let range = match spin {
        Spin::Up => 0..n_up,
        Spin::Dn => n_up..n,
    };
    for i in 0..n {
        for j in range.clone() {
            let row = i * n + j;
            for c in 0..p {
                out.v[(i, c)] += g.v[(row, c)];
                out.l[(i, c)] += g.l[(row, c)];
                for d in 0..ndir {
                    out.g[(d, i, c)] += g.g[(d, row, c)];
                }
            }
        }
    }
    out
}

/// Sum of the selected rows as a 1 x C jet.
fn sum_rows(x: &JetMat, rows: std::ops::Range<usize>) -> JetMat {
    let c = x.v.ncols();
    let ndir = x.ndir();
    let mut out = JetMat::zeros(ndir, 1, c);
    for r in rows {
        for cc in 0..c {
            out.v[(0, cc)] += x.v[(r, cc)];
            out.l[(0, cc)] += x.l[(r, cc)];
            for d in 0..ndir {
                out.g[(d, 0, cc)] += x.g[(d, r, cc)];
            }
        }
    }
    out
}

fn concat_cols(parts: &[&JetMat]) -> JetMat {
    let rows = parts[0].v.nrows();
    let ndir = parts[0].ndir();
    let total: usize = parts.iter().map(|p| p.v.ncols()).sum();
    let mut out = JetMat::zeros(ndir, rows, total);
    let mut offset = 0;
    for part in parts {
        let c = part.v.ncols();
        for r in 0..rows {
            for cc in 0..c {
                out.v[(r, offset + cc)] = part.v[(r, cc)];
                out.l[(r, offset + cc)] = part.l[(r, cc)];
                for d in 0..ndir {
                    out.g[(d, r, offset + cc)] = part.g[(d, r, cc)];
                }
            }
        }
        offset += c;
    }
    out
}

/// Adds a 1 x C jet row to every row.
fn broadcast_add_row(x: &JetMat, row: &JetMat) -> JetMat {
    let mut out = JetMat {
        v: x.v.clone(),
        g: x.g.clone(),
        l: x.l.clone(),
    };
    let rows = x.v.nrows();
    let c = x.v.ncols();
    for r in 0..rows {
        for cc in 0..c {
            out.v[(r, cc)] += row.v[(0, cc)];
            out.l[(r, cc)] += row.l[(0, cc)];
            for d in 0..x.ndir() {
                out.g[(d, r, cc)] += row.g[(d, 0, cc)];
            }
        }
    }
    out
}

/// Full derivative pass: value, gradient and Laplacian of log|psi|.
pub fn derivatives(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &WaveFunctionParams,
) -> Result<LogPsiDerivs, WfError> {
    let dims = &params.dims;
    let n = dims.n_electrons();
    assert_eq!(r.nrows(), n, "electron count mismatch");
    let m = dims.n_nuclei;
    let ndir = 3 * n;
    let s_w = dims.single_width;
    let d_emb = dims.embed_dim;

    let (feats, dist_en) = en_feature_jets(r, config, frame)?;

    // Input projection plus nuclear embedding, shared MLP, canonical sum.
    let mut x = feats.linear(&params.input_proj, None);
    for i in 0..n {
        for mi in 0..m {
            for c in 0..d_emb {
                x.v[(i * m + mi, c)] += params.nuclei_embed[(mi, c)];
            }
        }
    }
    let t1 = x
        .linear(&params.input_mlp.w1, Some(&params.input_mlp.b1))
        .tanh();
    let t2 = t1
        .linear(&params.input_mlp.w2, Some(&params.input_mlp.b2))
        .tanh();
    let mut h = JetMat::zeros(ndir, n, s_w);
    for i in 0..n {
        for &mi in config.canonical() {
            let row = i * m + mi;
            for c in 0..s_w {
                h.v[(i, c)] += t2.v[(row, c)];
                h.l[(i, c)] += t2.l[(row, c)];
                for d in 0..ndir {
                    h.g[(d, i, c)] += t2.g[(d, row, c)];
                }
            }
        }
    }

    let mut g = pair_feature_jets(r, frame)?;
    for layer in &params.layers {
        let sum_up = spin_sum_pairs(&g, n, dims.n_up, Spin::Up);
        let sum_dn = spin_sum_pairs(&g, n, dims.n_up, Spin::Dn);
        let single_in = concat_cols(&[&h, &sum_up, &sum_dn]);
        let pooled_up = sum_rows(&h, 0..dims.n_up);
        let pooled_dn = sum_rows(&h, dims.n_up..n);
        let pooled = concat_cols(&[&pooled_up, &pooled_dn]);
        let glob = pooled.linear(&layer.w_global, None);
        let pre = broadcast_add_row(
            &single_in.linear(&layer.w_single, Some(&layer.b_single)),
            &glob,
        );
        let h_tanh = pre.tanh();
        let h_out = h_tanh.add(&h);
        let g_tanh = g.linear(&layer.w_double, Some(&layer.b_double)).tanh();
        let g_out = if g.v.ncols() == g_tanh.v.ncols() {
            g_tanh.add(&g)
        } else {
            g_tanh
        };
        h = h_out;
        g = g_out;
    }

    // Orbitals: projected embeddings times nucleus-anchored envelopes, in
    // electron-row x orbital-column orientation (determinants are
    // transpose-invariant).
    let mut slds: Vec<[SignLogDet; 2]> = Vec::with_capacity(dims.n_dets);
    let mut log_dets: Vec<[Option<JetScalar>; 2]> = Vec::with_capacity(dims.n_dets);
    for k in 0..dims.n_dets {
        let mut per_spin_sld = [SignLogDet::UNIT, SignLogDet::UNIT];
        let mut per_spin_jet: [Option<JetScalar>; 2] = [None, None];
        for (si, spin) in Spin::BOTH.iter().enumerate() {
            let n_alpha = dims.n_spin(*spin);
            let range = match spin {
                Spin::Up => 0..dims.n_up,
                Spin::Dn => dims.n_up..n,
            };
            let w = params.orb_w(*spin);
            let b = params.orb_b(*spin);
            let p = params.env_p(*spin);
            let s = params.env_s(*spin);
            let mut phi = JetMat::zeros(ndir, n_alpha, n_alpha);
            if n_alpha > 0 {
                // proj[j_block, i] = w_i . h_j + b_i
                let mut proj = JetMat::zeros(ndir, n_alpha, n_alpha);
                for (jj, j_glob) in range.clone().enumerate() {
                    for i in 0..n_alpha {
                        let mut acc = b[(k, i)];
                        for c in 0..s_w {
                            acc += w[(k, i, c)] * h.v[(j_glob, c)];
                        }
                        proj.v[(jj, i)] = acc;
                        let mut lacc = 0.0;
                        for c in 0..s_w {
                            lacc += w[(k, i, c)] * h.l[(j_glob, c)];
                        }
                        proj.l[(jj, i)] = lacc;
                        for d in 0..ndir {
                            let mut gacc = 0.0;
                            for c in 0..s_w {
                                gacc += w[(k, i, c)] * h.g[(d, j_glob, c)];
                            }
                            proj.g[(d, jj, i)] = gacc;
                        }
                    }
                }
                // env[j_block, i] = sum_m gate * exp(-decay * dist)
                let mut env = JetMat::zeros(ndir, n_alpha, n_alpha);
                for (jj, j_glob) in range.clone().enumerate() {
                    for i in 0..n_alpha {
                        let mut v = 0.0;
                        let mut lap = 0.0;
                        let mut grad = [0.0; 3];
                        for &mi in config.canonical() {
                            let gate = sigmoid(p[(k, i, mi)]);
                            let decay = softplus(s[(k, i, mi)]);
                            let dval = dist_en.v[(j_glob, mi)];
                            let e = gate * (-decay * dval).exp();
                            v += e;
                            // d/dx e = -decay * e * grad(dist); the dist
                            // gradient lives on electron j's coordinates.
                            let mut norm_g2 = 0.0;
                            for c in 0..3 {
                                let gd = dist_en.g[(3 * j_glob + c, j_glob, mi)];
                                grad[c] += -decay * e * gd;
                                norm_g2 += gd * gd;
                            }
                            lap += e * (decay * decay * norm_g2 - decay * dist_en.l[(j_glob, mi)]);
                        }
                        env.v[(jj, i)] = v;
                        env.l[(jj, i)] = lap;
                        for c in 0..3 {
                            env.g[(3 * j_glob + c, jj, i)] = grad[c];
                        }
                    }
                }
                phi = proj.mul(&env);
            }
            let (sld, jet) = log_det_jet(&phi);
            per_spin_sld[si] = sld;
            per_spin_jet[si] = jet;
        }
        slds.push(per_spin_sld);
        log_dets.push(per_spin_jet);
    }

    let (out, rho) = combine_determinants(&slds, &params.det_weights);
    if out.is_node() {
        return Err(WfError::Node);
    }

    // grad log|psi| = sum_k rho_k grad a_k, with a_k the log-magnitude of
    // the k-th product; lap = sum_k rho_k (lap a_k + |grad a_k|^2) - |G|^2.
    let mut grad = Array1::zeros(ndir);
    let mut lap_terms = 0.0;
    for k in 0..dims.n_dets {
        if rho[k] == 0.0 {
            continue;
        }
        let mut a_g = Array1::zeros(ndir);
        let mut a_l = 0.0;
        for jet in log_dets[k].iter().flatten() {
            a_g += &jet.g;
            a_l += jet.l;
        }
        let norm_sq = a_g.dot(&a_g);
        grad.scaled_add(rho[k], &a_g);
        lap_terms += rho[k] * (a_l + norm_sq);
    }
    let laplacian = lap_terms - grad.dot(&grad);
    let grad = grad.into_shape_with_order((n, 3)).unwrap();
    Ok(LogPsiDerivs {
        value: out,
        grad,
        laplacian,
    })
}

/// Exact gradient of log|psi| with respect to each electron coordinate.
pub fn grad_logpsi(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &WaveFunctionParams,
) -> Result<Array2<f64>, WfError> {
    derivatives(r, config, frame, params).map(|d| d.grad)
}

/// Exact Laplacian of log|psi| summed over all electron coordinates.
pub fn laplacian_logpsi(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
    frame: &EquivariantFrame,
    params: &WaveFunctionParams,
) -> Result<f64, WfError> {
    derivatives(r, config, frame, params).map(|d| d.laplacian)
}
