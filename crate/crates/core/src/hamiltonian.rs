//! Molecular Hamiltonian: Coulomb potential, local energy and the robust
//! local-energy clip.

use ndarray::ArrayView2;

use crate::error::HamiltonianError;
use crate::geometry::{norm3, sub3, MolecularConfiguration};
use crate::wfmodel::WaveFunction;

/// Distance below which two point charges count as coincident.
pub const SINGULARITY_GUARD: f64 = 1e-12;

/// Batch statistics of the local energy samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStatistics {
    /// Mean local energy (hartree).
    pub mean: f64,
    /// Sample variance (hartree^2).
    pub variance: f64,
    /// sqrt(variance / n).
    pub std_error: f64,
    pub n_samples: usize,
}

impl EnergyStatistics {
    pub fn from_samples(values: &[f64]) -> EnergyStatistics {
        let n = values.len();
        assert!(n > 0, "empty sample set");
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
        } else {
            0.0
        };
        EnergyStatistics {
            mean,
            variance,
            std_error: (variance / n as f64).sqrt(),
            n_samples: n,
        }
    }
}

/// Streaming Welford accumulator for the evaluation loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct StreamingStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl StreamingStats {
    pub fn push(&mut self, value: f64) {
        self.n += 1;
        let delta = value - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn finish(&self) -> EnergyStatistics {
        assert!(self.n > 0, "empty sample set");
        let variance = if self.n > 1 {
            self.m2 / (self.n as f64 - 1.0)
        } else {
            0.0
        };
        EnergyStatistics {
            mean: self.mean,
            variance,
            std_error: (variance / self.n as f64).sqrt(),
            n_samples: self.n,
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }
}

/// Coulomb potential: electron-electron repulsion, electron-nucleus
/// attraction and nucleus-nucleus repulsion over strict pairs.
pub fn potential_energy(
    r: ArrayView2<f64>,
    config: &MolecularConfiguration,
) -> Result<f64, HamiltonianError> {
    let n = r.nrows();
    let mut v = 0.0;
    for i in 0..n {
        let ri = [r[(i, 0)], r[(i, 1)], r[(i, 2)]];
        for j in i + 1..n {
            let rj = [r[(j, 0)], r[(j, 1)], r[(j, 2)]];
            let d = norm3(&sub3(&ri, &rj));
            if d <= SINGULARITY_GUARD {
                return Err(HamiltonianError::ElectronElectronSingularity { i, j, distance: d });
            }
            v += 1.0 / d;
        }
        for (m, pos) in config.positions().iter().enumerate() {
            let d = norm3(&sub3(&ri, pos));
            if d <= SINGULARITY_GUARD {
                return Err(HamiltonianError::ElectronNucleusSingularity {
                    electron: i,
                    nucleus: m,
                    distance: d,
                });
            }
            v -= config.charges()[m] as f64 / d;
        }
    }
    let positions = config.positions();
    for m in 0..positions.len() {
        for nn in m + 1..positions.len() {
            let d = norm3(&sub3(&positions[m], &positions[nn]));
            v += (config.charges()[m] * config.charges()[nn]) as f64 / d;
        }
    }
    Ok(v)
}

/// Local energy: -1/2 (lap log|psi| + |grad log|psi||^2) + V.
pub fn local_energy<W: WaveFunction + ?Sized>(
    r: ArrayView2<f64>,
    wf: &W,
    config: &MolecularConfiguration,
) -> Result<f64, HamiltonianError> {
    let v = potential_energy(r, config)?;
    let derivs = wf.log_derivatives(r)?;
    let grad_sq: f64 = derivs.grad.iter().map(|g| g * g).sum();
    Ok(-0.5 * (derivs.laplacian + grad_sq) + v)
}

/// Clamps each value to mean +- window * mean-absolute-deviation of the
/// batch. Degenerate batches (all equal) pass through unchanged.
pub fn clip_local_energies(values: &[f64], window: f64) -> Vec<f64> {
    assert!(!values.is_empty(), "empty batch");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mad = values.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    let lo = mean - window * mad;
    let hi = mean + window * mad;
    values.iter().map(|v| v.clamp(lo, hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stubs::ExponentialStub;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_attraction_term() {
        let config = MolecularConfiguration::new(vec![[0.0; 3]], vec![1], 1, 0).unwrap();
        let r = array![[0.0, 0.0, 2.0]];
        let v = potential_energy(r.view(), &config).unwrap();
        assert_relative_eq!(v, -0.5, epsilon = 1e-14);
    }

    #[test]
    fn h2_hand_evaluation() {
        let config =
            MolecularConfiguration::new(vec![[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]], vec![1, 1], 1, 1)
                .unwrap();
        let r = array![[0.0, 0.0, -1.0], [0.0, 0.0, 2.0]];
        let v = potential_energy(r.view(), &config).unwrap();
        // 1/3 - 1 - 1/2 - 1/2 - 1 + 1 = -5/3
        assert_relative_eq!(v, -5.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn electron_on_nucleus_is_singular() {
        let config = MolecularConfiguration::new(vec![[0.0; 3]], vec![1], 1, 0).unwrap();
        let r = array![[0.0, 0.0, 0.0]];
        assert!(matches!(
            potential_energy(r.view(), &config),
            Err(HamiltonianError::ElectronNucleusSingularity { .. })
        ));
    }

    #[test]
    fn potential_symmetric_under_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = MolecularConfiguration::new(
            vec![[0.0; 3], [1.3, 0.2, -0.4], [-0.7, 0.9, 0.5]],
            vec![1, 2, 3],
            2,
            1,
        )
        .unwrap();
        let r = Array2::from_shape_fn((3, 3), |_| 2.0 * rng.random::<f64>() - 1.0);
        let v0 = potential_energy(r.view(), &config).unwrap();
        // Swap two electrons.
        let mut r_swap = r.clone();
        for c in 0..3 {
            r_swap[(0, c)] = r[(1, c)];
            r_swap[(1, c)] = r[(0, c)];
        }
        assert_relative_eq!(
            potential_energy(r_swap.view(), &config).unwrap(),
            v0,
            epsilon = 1e-12
        );
        // Permute nuclei.
        let config_p = config.permuted(&[2, 0, 1]).unwrap();
        assert_relative_eq!(
            potential_energy(r.view(), &config_p).unwrap(),
            v0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hydrogen_stub_local_energy_is_exact() {
        let config = MolecularConfiguration::new(vec![[0.0; 3]], vec![1], 1, 0).unwrap();
        let stub = ExponentialStub::hydrogen_1s();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r = Array2::from_shape_fn((1, 3), |_| 4.0 * rng.random::<f64>() - 2.0);
            let d = (r[(0, 0)].powi(2) + r[(0, 1)].powi(2) + r[(0, 2)].powi(2)).sqrt();
            if d < 0.05 {
                continue;
            }
            let e = local_energy(r.view(), &stub, &config).unwrap();
            assert_relative_eq!(e, -0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn local_energy_matches_direct_psi_finite_differences() {
        // E_L = -1/2 (lap psi)/psi + V via central differences of psi itself.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let config =
            MolecularConfiguration::new(vec![[0.0; 3], [1.5, 0.0, 0.0]], vec![1, 2], 1, 1).unwrap();
        let frame = crate::geometry::build_frame(&config);
        let params = crate::wfmodel::WaveFunctionParams::init(
            crate::wfmodel::WfDims {
                n_up: 1,
                n_dn: 1,
                n_nuclei: 2,
                single_width: 6,
                double_width: 4,
                embed_dim: 5,
                n_dets: 2,
                n_layers: 2,
            },
            &mut rng,
        );
        struct Neural<'a> {
            config: &'a MolecularConfiguration,
            frame: &'a crate::geometry::EquivariantFrame,
            params: &'a crate::wfmodel::WaveFunctionParams,
        }
        impl crate::wfmodel::WaveFunction for Neural<'_> {
            fn n_electrons(&self) -> usize {
                2
            }
            fn signed_log(&self, r: ArrayView2<f64>) -> crate::wfmodel::SignedLogAmplitude {
                crate::wfmodel::evaluate_one(r, self.config, self.frame, self.params)
            }
            fn log_derivatives(
                &self,
                r: ArrayView2<f64>,
            ) -> Result<crate::wfmodel::LogPsiDerivs, crate::error::WfError> {
                crate::wfmodel::derivatives(r, self.config, self.frame, self.params)
            }
        }
        let wf = Neural {
            config: &config,
            frame: &frame,
            params: &params,
        };
        let r = array![[0.4, 0.3, -0.2], [1.9, -0.4, 0.35]];
        let e = local_energy(r.view(), &wf, &config).unwrap();

        // psi itself from the signed log.
        let psi = |rr: &Array2<f64>| -> f64 {
            let out = wf.signed_log(rr.view());
            out.sign as f64 * out.log_abs.exp()
        };
        let h = 1e-3;
        let psi0 = psi(&r);
        let mut lap_psi = 0.0;
        for e_idx in 0..2 {
            for c in 0..3 {
                let mut plus = r.clone();
                plus[(e_idx, c)] += h;
                let mut minus = r.clone();
                minus[(e_idx, c)] -= h;
                lap_psi += (psi(&plus) - 2.0 * psi0 + psi(&minus)) / (h * h);
            }
        }
        let v = potential_energy(r.view(), &config).unwrap();
        let e_fd = -0.5 * lap_psi / psi0 + v;
        assert_relative_eq!(e, e_fd, max_relative = 1e-4);
    }

    #[test]
    fn clip_examples() {
        // All equal: unchanged.
        let out = clip_local_energies(&[2.5, 2.5, 2.5], 5.0);
        assert_eq!(out, vec![2.5, 2.5, 2.5]);
        // Worked case: mu = 2, mad = 3, window 1 -> [-1, 5].
        let out = clip_local_energies(&[0.0, 0.0, 0.0, 8.0], 1.0);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 5.0]);
        // Inside the window: identity.
        let vals = vec![1.0, 1.1, 0.9, 1.05];
        let out = clip_local_energies(&vals, 5.0);
        assert_eq!(out, vals);
    }

    #[test]
    fn clip_is_monotone_and_stable_on_typical_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let values: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let clipped = clip_local_energies(&values, 5.0);
        // Order preserved componentwise.
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] <= values[j] {
                    assert!(clipped[i] <= clipped[j] + 1e-15);
                }
            }
        }
        // A clip that was a no-op stays a no-op when repeated.
        let again = clip_local_energies(&clipped, 5.0);
        assert_eq!(clipped, again);
    }

    #[test]
    fn stats_definitions() {
        let stats = EnergyStatistics::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(stats.mean, 2.5);
        assert_relative_eq!(stats.std_error, (stats.variance / 4.0).sqrt());
        let mut stream = StreamingStats::default();
        for v in [1.0, 2.0, 3.0, 4.0] {
            stream.push(v);
        }
        let s2 = stream.finish();
        assert_relative_eq!(s2.mean, stats.mean, epsilon = 1e-14);
        assert_relative_eq!(s2.variance, stats.variance, epsilon = 1e-14);
    }

    #[test]
    fn zero_variance_for_exact_eigenfunction() {
        let config = MolecularConfiguration::new(vec![[0.0; 3]], vec![1], 1, 0).unwrap();
        let stub = ExponentialStub::hydrogen_1s();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut values = Vec::new();
        for _ in 0..1000 {
            let r = Array2::from_shape_fn((1, 3), |_| 3.0 * rng.random::<f64>() - 1.5);
            let d = (r[(0, 0)].powi(2) + r[(0, 1)].powi(2) + r[(0, 2)].powi(2)).sqrt();
            if d < 0.05 {
                continue;
            }
            values.push(local_energy(r.view(), &stub, &config).unwrap());
        }
        let stats = EnergyStatistics::from_samples(&values);
        assert!(stats.variance < 1e-12);
    }
}
