//! Property tests over arbitrary inputs: frame construction invariants,
//! clipping monotonicity, and log-domain stability of the determinant sum.

use ndarray::{array, Array1};
use proptest::prelude::*;
use vmc_core::geometry::{build_frame, MolecularConfiguration};
use vmc_core::hamiltonian::clip_local_energies;
use vmc_core::wfmodel::signed_logpsi;

fn arb_positions(m: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    proptest::collection::vec(
        (-4.0f64..4.0, -4.0f64..4.0, -4.0f64..4.0).prop_map(|(x, y, z)| [x, y, z]),
        m,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The frame is orthonormal, deterministic and bitwise invariant to
    /// nucleus reindexing for every valid configuration.
    #[test]
    fn frame_invariants(
        positions in (2usize..5).prop_flat_map(arb_positions),
        charges_seed in 0u32..1000,
    ) {
        let m = positions.len();
        let charges: Vec<u32> = (0..m)
            .map(|i| 1 + (charges_seed.wrapping_mul(31).wrapping_add(i as u32)) % 3)
            .collect();
        let config = match MolecularConfiguration::new(positions, charges, 2, 1) {
            Ok(config) => config,
            Err(_) => return Ok(()), // coincident draw; nothing to test
        };
        let frame = build_frame(&config);
        prop_assert!(frame.orthonormality_defect() < 1e-12);
        prop_assert!((frame.determinant().abs() - 1.0).abs() < 1e-12);
        prop_assert_eq!(&frame, &build_frame(&config));
        // Reversal permutation.
        let perm: Vec<usize> = (0..m).rev().collect();
        let permuted = config.permuted(&perm).unwrap();
        prop_assert_eq!(&frame, &build_frame(&permuted));
    }

    /// Clipping clamps into the batch window, preserves componentwise order
    /// and leaves in-window batches untouched.
    #[test]
    fn clip_window_properties(
        values in proptest::collection::vec(-50.0f64..50.0, 1..40),
        window in 0.5f64..8.0,
    ) {
        let clipped = clip_local_energies(&values, window);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mad = values.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
        for (raw, out) in values.iter().zip(&clipped) {
            prop_assert!(*out >= mean - window * mad - 1e-12);
            prop_assert!(*out <= mean + window * mad + 1e-12);
            // Values already inside the window pass through bitwise.
            if (mean - window * mad..=mean + window * mad).contains(raw) {
                prop_assert_eq!(raw, out);
            }
        }
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] <= values[j] {
                    prop_assert!(clipped[i] <= clipped[j] + 1e-12);
                }
            }
        }
    }

    /// The signed log-sum-exp over determinant pairs never overflows for
    /// log-magnitudes up to +-600.
    #[test]
    fn determinant_sum_is_stable_at_extreme_scales(
        log_a in -600.0f64..600.0,
        log_b in -600.0f64..600.0,
        w0 in 0.1f64..2.0,
        w1 in -2.0f64..-0.1,
    ) {
        let up = vec![array![[log_a.exp().min(1e290).max(1e-290)]],
                      array![[log_b.exp().min(1e290).max(1e-290)]]];
        let dn = vec![array![[1.0]], array![[1.0]]];
        let w = Array1::from_vec(vec![w0, w1]);
        let out = signed_logpsi(&up, &dn, &w);
        prop_assert!(out.log_abs.is_finite() || out.is_node());
        prop_assert!(out.sign == 1 || out.sign == -1 || out.is_node());
    }
}
