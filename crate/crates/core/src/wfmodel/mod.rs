//! Neural wave function: signed log-amplitude evaluation plus exact first
//! and second derivatives with respect to the electron coordinates.

pub mod backward;
pub mod derivs;
pub mod forward;
pub mod params;

pub use derivs::{derivatives, grad_logpsi, laplacian_logpsi, LogPsiDerivs};
pub use forward::{
    electron_features, evaluate, evaluate_one, orbitals, signed_logpsi, ElectronBatch,
    SignedLogAmplitude,
};
pub use params::{Mlp2, SlotTag, Spin, StreamLayer, WaveFunctionParams, WfDims, WfSlot};

use crate::error::WfError;
use ndarray::ArrayView2;

/// Anything that can be sampled from and differentiated like a wave
/// function: the neural model, or analytic stubs in tests and checks.
pub trait WaveFunction: Sync {
    fn n_electrons(&self) -> usize;

    /// Signed log-amplitude at one configuration.
    fn signed_log(&self, r: ArrayView2<f64>) -> SignedLogAmplitude;

    /// Value, coordinate gradient and Laplacian of log|psi|.
    fn log_derivatives(&self, r: ArrayView2<f64>) -> Result<LogPsiDerivs, WfError>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_frame, MolecularConfiguration};
    use approx::assert_relative_eq;
    use ndarray::{array, Array1, Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_dims(n_up: usize, n_dn: usize, m: usize) -> WfDims {
        WfDims {
            n_up,
            n_dn,
            n_nuclei: m,
            single_width: 8,
            double_width: 4,
            embed_dim: 6,
            n_dets: 2,
            n_layers: 2,
        }
    }

    fn random_system(
        rng: &mut ChaCha8Rng,
        n_up: usize,
        n_dn: usize,
        m: usize,
    ) -> (MolecularConfiguration, WaveFunctionParams, Array2<f64>) {
        let positions: Vec<[f64; 3]> = (0..m)
            .map(|i| {
                [
                    1.6 * i as f64 + 0.3 * rng.random::<f64>(),
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ]
            })
            .collect();
        let charges: Vec<u32> = (0..m).map(|_| rng.random_range(1..=3)).collect();
        let config = MolecularConfiguration::new(positions, charges, n_up, n_dn).unwrap();
        let params = WaveFunctionParams::init(small_dims(n_up, n_dn, m), rng);
        let r = separated_electrons(rng, &config);
        (config, params, r)
    }

    /// Electron positions near the nuclei but clear of every cusp, so the
    /// finite-difference oracles stay in their validity domain.
    fn separated_electrons(rng: &mut ChaCha8Rng, config: &MolecularConfiguration) -> Array2<f64> {
        let n = config.n_electrons();
        let m = config.n_nuclei();
        loop {
            let mut r = Array2::zeros((n, 3));
            for e in 0..n {
                let base = config.positions()[e % m];
                for c in 0..3 {
                    r[(e, c)] = base[c] + 1.4 * (rng.random::<f64>() - 0.5);
                }
            }
            let mut ok = true;
            for e in 0..n {
                let re = [r[(e, 0)], r[(e, 1)], r[(e, 2)]];
                for pos in config.positions() {
                    if crate::geometry::norm3(&crate::geometry::sub3(&re, pos)) < 0.3 {
                        ok = false;
                    }
                }
                for e2 in e + 1..n {
                    let r2 = [r[(e2, 0)], r[(e2, 1)], r[(e2, 2)]];
                    if crate::geometry::norm3(&crate::geometry::sub3(&re, &r2)) < 0.3 {
                        ok = false;
                    }
                }
            }
            if ok {
                return r;
            }
        }
    }

    #[test]
    fn pair_features_are_antisymmetric_4dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (config, params, r) = random_system(&mut rng, 2, 1, 2);
        let frame = build_frame(&config);
        let (_, g1) = electron_features(r.view(), &config, &frame, &params);
        assert_eq!(g1.shape(), &[3, 3, 4]);
        for i in 0..3 {
            for j in 0..3 {
                for c in 0..3 {
                    assert_relative_eq!(g1[(i, j, c)], -g1[(j, i, c)], epsilon = 1e-15);
                }
                assert_relative_eq!(g1[(i, j, 3)], g1[(j, i, 3)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn input_features_invariant_to_nucleus_reindexing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (config, mut params, r) = random_system(&mut rng, 2, 1, 3);
        // Give each nucleus a distinct embedding so the permutation matters.
        for mi in 0..3 {
            for c in 0..params.dims.embed_dim {
                params.nuclei_embed[(mi, c)] = rng.random::<f64>() - 0.5;
            }
        }
        let frame = build_frame(&config);
        let (h1, _) = electron_features(r.view(), &config, &frame, &params);

        let perm = vec![2usize, 0, 1];
        let config_p = config.permuted(&perm).unwrap();
        let frame_p = build_frame(&config_p);
        let mut params_p = params.clone();
        for (new_m, &old_m) in perm.iter().enumerate() {
            for c in 0..params.dims.embed_dim {
                params_p.nuclei_embed[(new_m, c)] = params.nuclei_embed[(old_m, c)];
            }
            for k in 0..params.dims.n_dets {
                for i in 0..params.dims.n_up {
                    params_p.env_p_up[(k, i, new_m)] = params.env_p_up[(k, i, old_m)];
                    params_p.env_s_up[(k, i, new_m)] = params.env_s_up[(k, i, old_m)];
                }
                for i in 0..params.dims.n_dn {
                    params_p.env_p_dn[(k, i, new_m)] = params.env_p_dn[(k, i, old_m)];
                    params_p.env_s_dn[(k, i, new_m)] = params.env_s_dn[(k, i, old_m)];
                }
            }
        }
        let (h1_p, _) = electron_features(r.view(), &config_p, &frame_p, &params_p);
        // Bitwise identical thanks to canonical-order accumulation.
        assert_eq!(h1, h1_p);
    }

    #[test]
    fn update_layer_dimensions_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut dims = small_dims(2, 2, 2);
        dims.double_width = 6; // first pair layer is 4 -> 6: no residual
        let params = WaveFunctionParams::init(dims, &mut rng);
        let h = Array2::from_shape_fn((4, dims.single_width), |_| rng.random::<f64>() - 0.5);
        let g = Array3::from_shape_fn((4, 4, 4), |_| rng.random::<f64>() - 0.5);
        let (h2, g2) = forward::update_layer(&h, &g, &params.layers[0], 2);
        assert_eq!(h2.shape(), &[4, dims.single_width]);
        assert_eq!(g2.shape(), &[4, 4, dims.double_width]);
        // Pre-residual tanh output lies strictly inside (-1, 1).
        for v in g2.iter() {
            assert!(v.abs() < 1.0);
        }
        // Single stream has a residual: h2 - h must lie inside (-1, 1).
        for (a, b) in h2.iter().zip(h.iter()) {
            assert!((a - b).abs() < 1.0);
        }
    }

    #[test]
    fn update_layer_same_spin_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = small_dims(2, 1, 2);
        let params = WaveFunctionParams::init(dims, &mut rng);
        let n = 3;
        let h = Array2::from_shape_fn((n, dims.single_width), |_| rng.random::<f64>() - 0.5);
        let g = Array3::from_shape_fn((n, n, 4), |_| rng.random::<f64>() - 0.5);
        let (h2, g2) = forward::update_layer(&h, &g, &params.layers[0], 2);

        // Swap the two spin-up electrons (rows 0 and 1).
        let swap = |i: usize| match i {
            0 => 1,
            1 => 0,
            x => x,
        };
        let mut h_s = h.clone();
        for c in 0..dims.single_width {
            h_s[(0, c)] = h[(1, c)];
            h_s[(1, c)] = h[(0, c)];
        }
        let g_s = Array3::from_shape_fn((n, n, 4), |(i, j, c)| g[(swap(i), swap(j), c)]);
        let (h2_s, g2_s) = forward::update_layer(&h_s, &g_s, &params.layers[0], 2);
        for c in 0..dims.single_width {
            assert_relative_eq!(h2_s[(0, c)], h2[(1, c)], epsilon = 1e-12);
            assert_relative_eq!(h2_s[(1, c)], h2[(0, c)], epsilon = 1e-12);
        }
        for i in 0..n {
            for j in 0..n {
                for c in 0..dims.double_width {
                    assert_relative_eq!(
                        g2_s[(i, j, c)],
                        g2[(swap(i), swap(j), c)],
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn orbital_envelope_positive_and_decaying() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (config, params, r) = random_system(&mut rng, 2, 1, 2);
        let frame = build_frame(&config);
        let fwd = forward::forward(r.view(), &config, &frame, &params);
        for k in 0..params.dims.n_dets {
            for t in &fwd.orbitals[k] {
                for v in t.env.iter() {
                    assert!(*v > 0.0);
                }
            }
        }
        // Push one electron far away: its orbital column tends to zero.
        let mut far = r.clone();
        far[(0, 0)] += 60.0;
        let h_final = fwd.h_stack.last().unwrap().clone();
        let _ = h_final;
        let (up, _) = orbitals(
            forward::forward(far.view(), &config, &frame, &params)
                .h_stack
                .last()
                .unwrap(),
            far.view(),
            &config,
            &params,
        );
        for k in 0..params.dims.n_dets {
            for i in 0..params.dims.n_up {
                assert!(up[k][(i, 0)].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn envelope_at_zero_preactivations() {
        assert_relative_eq!(forward::sigmoid(0.0), 0.5);
        assert_relative_eq!(forward::softplus(0.0), 2.0f64.ln());
    }

    #[test]
    fn signed_logpsi_scalar_case() {
        let up = vec![array![[2.0]]];
        let dn = vec![array![[3.0]]];
        let w = Array1::from_vec(vec![1.0]);
        let out = signed_logpsi(&up, &dn, &w);
        assert_eq!(out.sign, 1);
        assert_relative_eq!(out.log_abs, 6.0f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn signed_logpsi_column_swap_flips_sign() {
        let up = vec![array![[1.0, 2.0], [3.0, 4.5]]];
        let dn = vec![array![[1.0, 0.2], [0.1, 2.0]]];
        let w = Array1::from_vec(vec![0.7]);
        let out = signed_logpsi(&up, &dn, &w);
        let up_swapped = vec![array![[2.0, 1.0], [4.5, 3.0]]];
        let swapped = signed_logpsi(&up_swapped, &dn, &w);
        assert_eq!(swapped.sign, -out.sign);
        assert_relative_eq!(swapped.log_abs, out.log_abs, max_relative = 1e-12);
    }

    #[test]
    fn signed_logpsi_exact_cancellation() {
        let up = vec![array![[2.0]], array![[2.0]]];
        let dn = vec![array![[3.0]], array![[3.0]]];
        let w = Array1::from_vec(vec![1.0, -1.0]);
        let out = signed_logpsi(&up, &dn, &w);
        assert!(out.is_node());
        assert_eq!(out.log_abs, f64::NEG_INFINITY);
    }

    #[test]
    fn signed_logpsi_survives_extreme_magnitudes() {
        // Determinant log-magnitudes near +-600 must not overflow.
        let up = vec![
            array![[1e260, 0.0], [0.0, 1e260]],
            array![[1e-260, 0.0], [0.0, 1e-260]],
        ];
        let dn = vec![array![[1e40]], array![[1e-40]]];
        let w = Array1::from_vec(vec![1.0, 1.0]);
        let out = signed_logpsi(&up, &dn, &w);
        assert!(out.log_abs.is_finite());
        assert_eq!(out.sign, 1);
        let expect = (1e260f64.ln() * 2.0 + 1e40f64.ln()).max(0.0);
        assert_relative_eq!(out.log_abs, expect, max_relative = 1e-10);
    }

    #[test]
    fn evaluate_antisymmetry_same_spin_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (config, params, r) = random_system(&mut rng, 2, 1, 2);
            let frame = build_frame(&config);
            let a = evaluate_one(r.view(), &config, &frame, &params);
            let mut swapped = r.clone();
            for c in 0..3 {
                swapped[(0, c)] = r[(1, c)];
                swapped[(1, c)] = r[(0, c)];
            }
            let b = evaluate_one(swapped.view(), &config, &frame, &params);
            assert_eq!(b.sign, -a.sign);
            assert_relative_eq!(b.log_abs, a.log_abs, max_relative = 1e-12);
        }
    }

    #[test]
    fn evaluate_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (config, params, r) = random_system(&mut rng, 2, 1, 2);
        let frame = build_frame(&config);
        let a = evaluate_one(r.view(), &config, &frame, &params);
        let shift = [0.7, -1.3, 2.4];
        let moved: Vec<[f64; 3]> = config
            .positions()
            .iter()
            .map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]])
            .collect();
        let config_t = MolecularConfiguration::new(moved, config.charges().to_vec(), 2, 1).unwrap();
        let frame_t = build_frame(&config_t);
        let mut r_t = r.clone();
        for e in 0..3 {
            for c in 0..3 {
                r_t[(e, c)] += shift[c];
            }
        }
        let b = evaluate_one(r_t.view(), &config_t, &frame_t, &params);
        assert_eq!(a.sign, b.sign);
        assert_relative_eq!(a.log_abs, b.log_abs, max_relative = 1e-12);
    }

    #[test]
    fn grad_scale_invariance_in_det_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (config, mut params, r) = random_system(&mut rng, 2, 1, 2);
        let frame = build_frame(&config);
        let g1 = grad_logpsi(r.view(), &config, &frame, &params).unwrap();
        params.det_weights.mapv_inplace(|w| 3.5 * w);
        let g2 = grad_logpsi(r.view(), &config, &frame, &params).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for case in 0..8 {
            let n_up = 1 + case % 2;
            let n_dn = case % 2;
            let m = 1 + case % 3;
            let (config, params, r) = random_system(&mut rng, n_up, n_dn, m);
            let frame = build_frame(&config);
            let derivs = derivatives(r.view(), &config, &frame, &params).unwrap();
            let n = n_up + n_dn;

            let f = |r_mod: &Array2<f64>| -> f64 {
                evaluate_one(r_mod.view(), &config, &frame, &params).log_abs
            };
            let h = 1e-4;
            let mut lap_fd = 0.0;
            for e in 0..n {
                for c in 0..3 {
                    let mut plus = r.clone();
                    plus[(e, c)] += h;
                    let mut minus = r.clone();
                    minus[(e, c)] -= h;
                    let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                    assert_relative_eq!(
                        derivs.grad[(e, c)],
                        fd,
                        max_relative = 1e-5,
                        epsilon = 1e-8
                    );
                }
            }
            let h2 = 1e-3;
            let f0 = f(&r);
            for e in 0..n {
                for c in 0..3 {
                    let mut plus = r.clone();
                    plus[(e, c)] += h2;
                    let mut minus = r.clone();
                    minus[(e, c)] -= h2;
                    lap_fd += (f(&plus) - 2.0 * f0 + f(&minus)) / (h2 * h2);
                }
            }
            assert_relative_eq!(
                derivs.laplacian,
                lap_fd,
                max_relative = 1e-4,
                epsilon = 1e-6
            );
            assert_eq!(
                derivs.value.sign,
                evaluate_one(r.view(), &config, &frame, &params).sign
            );
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (config, params, r) = random_system(&mut rng, 2, 1, 2);
        let frame = build_frame(&config);

        let fwd = forward::forward(r.view(), &config, &frame, &params);
        let mut grads = WaveFunctionParams::zeros(params.dims);
        backward::backward_params(&fwd, &config, &params, &mut grads).unwrap();

        let mut flat = Vec::new();
        params.flatten_into(None, &mut flat);
        let mut grad_flat = Vec::new();
        grads.flatten_into(None, &mut grad_flat);

        let eval_flat = |theta: &[f64]| -> f64 {
            let mut p = WaveFunctionParams::zeros(params.dims);
            p.unflatten_from(None, theta);
            evaluate_one(r.view(), &config, &frame, &p).log_abs
        };

        let h = 1e-6;
        let mut checked = 0;
        let stride = (flat.len() / 60).max(1);
        for idx in (0..flat.len()).step_by(stride) {
            let mut plus = flat.clone();
            plus[idx] += h;
            let mut minus = flat.clone();
            minus[idx] -= h;
            let fd = (eval_flat(&plus) - eval_flat(&minus)) / (2.0 * h);
            assert_relative_eq!(grad_flat[idx], fd, max_relative = 2e-4, epsilon = 1e-7);
            checked += 1;
        }
        assert!(checked > 30);
    }

    #[test]
    fn node_reports_error() {
        let dims = small_dims(1, 1, 1);
        let mut params = WaveFunctionParams::zeros(dims);
        params.det_weights.fill(0.0);
        let config = MolecularConfiguration::new(vec![[0.0; 3]], vec![1], 1, 1).unwrap();
        let frame = build_frame(&config);
        let r = array![[0.5, 0.0, 0.0], [-0.5, 0.2, 0.0]];
        let out = evaluate_one(r.view(), &config, &frame, &params);
        assert!(out.is_node());
        assert!(matches!(
            derivatives(r.view(), &config, &frame, &params),
            Err(WfError::Node)
        ));
    }

    #[test]
    fn lean_path_matches_traced_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for case in 0..12 {
            let n_up = 1 + case % 2;
            let n_dn = case % 3 % 2;
            let m = 1 + case % 3;
            let (config, params, r) = random_system(&mut rng, n_up, n_dn, m);
            let frame = build_frame(&config);
            let lean = evaluate_one(r.view(), &config, &frame, &params);
            let traced = forward::forward(r.view(), &config, &frame, &params).out;
            assert_eq!(lean.sign, traced.sign);
            assert_relative_eq!(lean.log_abs, traced.log_abs, max_relative = 1e-12);
        }
    }

    #[test]
    fn batch_evaluate_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (config, params, r) = random_system(&mut rng, 1, 1, 2);
        let frame = build_frame(&config);
        let mut coords = Array3::zeros((3, 2, 3));
        for b in 0..3 {
            for e in 0..2 {
                for c in 0..3 {
                    coords[(b, e, c)] = r[(e, c)] + 0.1 * b as f64;
                }
            }
        }
        let batch = ElectronBatch::new(coords.clone());
        let out = evaluate(&batch, &config, &frame, &params);
        for b in 0..3 {
            let single = evaluate_one(batch.sample(b), &config, &frame, &params);
            assert_eq!(out[b], single);
        }
    }
}
