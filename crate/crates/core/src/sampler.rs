//! Metropolis-Hastings sampling of psi^2 with all-electron Gaussian moves,
//! plus the per-bin geometry random walkers that expose training to a
//! continuous slice of the potential energy surface.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::GeometryError;
use crate::geometry::MolecularConfiguration;
use crate::wfmodel::{ElectronBatch, SignedLogAmplitude, WaveFunction};

/// Acceptance probability for a symmetric proposal on psi^2:
/// min(1, exp(2 * (log|psi'| - log|psi|))).
pub fn acceptance_probability(delta_log_abs: f64) -> f64 {
    (2.0 * delta_log_abs).exp().min(1.0)
}

/// One electron-configuration walker with its cached amplitude and RNG
/// stream.
#[derive(Debug, Clone)]
pub struct Walker {
    pub positions: Array2<f64>,
    pub cached: SignedLogAmplitude,
    pub rng: ChaCha8Rng,
}

/// A batch of walkers sampling one geometry.
#[derive(Debug, Clone)]
pub struct WalkerState {
    pub walkers: Vec<Walker>,
    /// Per-coordinate standard deviation of the Gaussian proposal (bohr).
    pub step_size: f64,
    pub(crate) accepted: u64,
    pub(crate) proposed: u64,
}

impl WalkerState {
    /// Places electrons at nuclei (round-robin over the canonical nucleus
    /// order, weighted by charge) plus unit Gaussian noise, then caches the
    /// amplitudes.
    pub fn init<W: WaveFunction>(
        config: &MolecularConfiguration,
        wf: &W,
        n_walkers: usize,
        step_size: f64,
        seed: u64,
    ) -> WalkerState {
        let n = config.n_electrons();
        // Expanded nucleus list: each nucleus repeated by its charge.
        let mut anchors = Vec::new();
        for &m in config.canonical() {
            for _ in 0..config.charges()[m] {
                anchors.push(m);
            }
        }
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut walkers = Vec::with_capacity(n_walkers);
        for w in 0..n_walkers {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(w as u64 + 1);
            let mut positions = Array2::zeros((n, 3));
            for e in 0..n {
                let anchor = config.positions()[anchors[e % anchors.len()]];
                for c in 0..3 {
                    positions[(e, c)] = anchor[c] + normal.sample(&mut rng);
                }
            }
            let cached = wf.signed_log(positions.view());
            walkers.push(Walker {
                positions,
                cached,
                rng,
            });
        }
        WalkerState {
            walkers,
            step_size,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn n_walkers(&self) -> usize {
        self.walkers.len()
    }

    /// Electron positions as a batch (B x N x 3).
    pub fn batch(&self) -> ElectronBatch {
        let b = self.walkers.len();
        let n = self.walkers[0].positions.nrows();
        let mut coords = Array3::zeros((b, n, 3));
        for (w, walker) in self.walkers.iter().enumerate() {
            for e in 0..n {
                for c in 0..3 {
                    coords[(w, e, c)] = walker.positions[(e, c)];
                }
            }
        }
        ElectronBatch::new(coords)
    }

    /// Acceptance fraction since the last counter reset.
    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_acceptance(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    /// Recomputes the cached amplitudes; call after any parameter change.
    pub fn refresh_cache<W: WaveFunction>(&mut self, wf: &W) {
        let results: Vec<SignedLogAmplitude> = self
            .walkers
            .par_iter()
            .map(|w| wf.signed_log(w.positions.view()))
            .collect();
        for (walker, cached) in self.walkers.iter_mut().zip(results) {
            walker.cached = cached;
        }
    }

    /// One sweep: every walker proposes an all-electron Gaussian move and
    /// accepts with min(1, exp(2 delta log|psi|)). Proposals landing on a
    /// node are rejected outright.
    pub fn mh_step<W: WaveFunction>(&mut self, wf: &W) {
        let step = self.step_size;
        let accepted: u64 = self
            .walkers
            .par_iter_mut()
            .map(|walker| {
                let n = walker.positions.nrows();
                let normal = Normal::new(0.0, step).unwrap();
                let mut proposal = walker.positions.clone();
                for e in 0..n {
                    for c in 0..3 {
                        proposal[(e, c)] += normal.sample(&mut walker.rng);
                    }
                }
                let new = wf.signed_log(proposal.view());
                let accept = if new.is_node() {
                    let _: f64 = walker.rng.random();
                    false
                } else {
                    let u: f64 = walker.rng.random();
                    u < acceptance_probability(new.log_abs - walker.cached.log_abs)
                };
                if accept {
                    walker.positions = proposal;
                    walker.cached = new;
                    1
                } else {
                    0
                }
            })
            .sum();
        self.accepted += accepted;
        self.proposed += self.walkers.len() as u64;
    }

    /// Applies `n_steps` sweeps; deterministic given the walker RNG states.
    pub fn run_chain<W: WaveFunction>(&mut self, wf: &W, n_steps: usize) {
        for _ in 0..n_steps {
            self.mh_step(wf);
        }
    }

    /// Multiplicatively nudges the proposal width toward a 0.5 acceptance
    /// fraction, clamped to [1e-4, 1.0] bohr.
    pub fn adapt_step_size(&mut self) {
        let acc = self.acceptance();
        self.step_size = (self.step_size * (0.5 * (acc - 0.5)).exp()).clamp(1e-4, 1.0);
    }
}

/// A random walker confined to one bin of the scanned geometry parameter.
#[derive(Debug, Clone)]
pub struct GeometryWalker {
    pub lo: f64,
    pub hi: f64,
    pub current: f64,
    pub rng: ChaCha8Rng,
}

impl GeometryWalker {
    pub fn new(lo: f64, hi: f64, seed: u64, stream: u64) -> GeometryWalker {
        assert!(hi >= lo);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GeometryWalker {
            lo,
            hi,
            current: 0.5 * (lo + hi),
            rng,
        }
    }

    /// Adds uniform jitter of half-width `jitter_fraction * (hi - lo)`,
    /// reflecting at the bin boundaries.
    pub fn step(&mut self, jitter_fraction: f64) -> f64 {
        let width = self.hi - self.lo;
        let jitter = jitter_fraction * width;
        let delta = if jitter > 0.0 {
            self.rng.random_range(-jitter..jitter)
        } else {
            let _: f64 = self.rng.random();
            0.0
        };
        let mut next = self.current + delta;
        for _ in 0..64 {
            if next > self.hi {
                next = 2.0 * self.hi - next;
            } else if next < self.lo {
                next = 2.0 * self.lo - next;
            } else {
                break;
            }
        }
        self.current = next.clamp(self.lo, self.hi);
        self.current
    }
}

/// Splits `[lo, hi]` into `n` equal bins, one walker per bin.
pub fn make_geometry_walkers(lo: f64, hi: f64, n: usize, seed: u64) -> Vec<GeometryWalker> {
    assert!(n >= 1);
    let width = (hi - lo) / n as f64;
    (0..n)
        .map(|i| {
            GeometryWalker::new(
                lo + width * i as f64,
                lo + width * (i + 1) as f64,
                seed,
                0x47656f + i as u64,
            )
        })
        .collect()
}

/// Advances every geometry walker and realizes the configurations through
/// the registered template.
pub fn step_geometry_walkers<F>(
    walkers: &mut [GeometryWalker],
    jitter_fraction: f64,
    template: F,
) -> Result<Vec<MolecularConfiguration>, GeometryError>
where
    F: Fn(f64) -> Result<MolecularConfiguration, GeometryError>,
{
    walkers
        .iter_mut()
        .map(|w| template(w.step(jitter_fraction)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::EnergyStatistics;
    use crate::stubs::ExponentialStub;
    use approx::assert_relative_eq;

    fn hydrogen_config() -> MolecularConfiguration {
        MolecularConfiguration::new(vec![[0.0; 3]], vec![1], 1, 0).unwrap()
    }

    #[test]
    fn acceptance_rule_examples() {
        assert_relative_eq!(acceptance_probability(0.0), 1.0);
        assert_relative_eq!(acceptance_probability(-1.0), (-2.0f64).exp());
        assert_relative_eq!(acceptance_probability(3.0), 1.0);
    }

    #[test]
    fn zero_steps_is_identity() {
        let config = hydrogen_config();
        let stub = ExponentialStub::hydrogen_1s();
        let mut state = WalkerState::init(&config, &stub, 8, 0.5, 42);
        let before = state.batch();
        state.run_chain(&stub, 0);
        assert_eq!(state.batch(), before);
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let config = hydrogen_config();
        let stub = ExponentialStub::hydrogen_1s();
        let mut a = WalkerState::init(&config, &stub, 8, 0.5, 7);
        let mut b = WalkerState::init(&config, &stub, 8, 0.5, 7);
        a.run_chain(&stub, 25);
        b.run_chain(&stub, 25);
        assert_eq!(a.batch(), b.batch());
        assert_eq!(a.acceptance(), b.acceptance());
    }

    #[test]
    fn cache_stays_coherent() {
        let config = hydrogen_config();
        let stub = ExponentialStub::hydrogen_1s();
        let mut state = WalkerState::init(&config, &stub, 16, 0.4, 3);
        state.run_chain(&stub, 50);
        for w in &state.walkers {
            let fresh = stub.signed_log(w.positions.view());
            assert_relative_eq!(w.cached.log_abs, fresh.log_abs, max_relative = 1e-12);
            assert_eq!(w.cached.sign, fresh.sign);
        }
    }

    #[test]
    fn hydrogen_radial_moment() {
        // E[r] under r^2 e^{-2r} is 3/2. A reduced version of the full
        // sampler-moments acceptance check.
        let config = hydrogen_config();
        let stub = ExponentialStub::hydrogen_1s();
        let mut state = WalkerState::init(&config, &stub, 256, 0.5, 11);
        state.run_chain(&stub, 300); // burn-in
        let mut values = Vec::new();
        for _ in 0..800 {
            state.mh_step(&stub);
            for w in &state.walkers {
                let r = (w.positions[(0, 0)].powi(2)
                    + w.positions[(0, 1)].powi(2)
                    + w.positions[(0, 2)].powi(2))
                .sqrt();
                values.push(r);
            }
        }
        let stats = EnergyStatistics::from_samples(&values);
        assert!(
            (stats.mean - 1.5).abs() < 0.03,
            "E[r] = {} over {} samples",
            stats.mean,
            values.len()
        );
    }

    #[test]
    fn adapt_step_size_rules() {
        let config = hydrogen_config();
        let stub = ExponentialStub::hydrogen_1s();
        let mut state = WalkerState::init(&config, &stub, 4, 0.02, 5);
        // Exactly 0.5 acceptance: unchanged.
        state.accepted = 2;
        state.proposed = 4;
        state.adapt_step_size();
        assert_eq!(state.step_size, 0.02);
        // Full acceptance: grows.
        state.accepted = 4;
        state.adapt_step_size();
        assert!(state.step_size > 0.02);
        // Zero acceptance: shrinks, never below the floor.
        state.accepted = 0;
        state.step_size = 1.2e-4;
        state.adapt_step_size();
        assert!(state.step_size >= 1e-4);
    }

    #[test]
    fn node_proposals_are_rejected() {
        // A stub that vanishes in the half-space x > 0.
        struct HalfSpace;
        impl WaveFunction for HalfSpace {
            fn n_electrons(&self) -> usize {
                1
            }
            fn signed_log(&self, r: ndarray::ArrayView2<f64>) -> SignedLogAmplitude {
                if r[(0, 0)] > 0.0 {
                    SignedLogAmplitude::ZERO
                } else {
                    SignedLogAmplitude {
                        sign: 1,
                        log_abs: -r[(0, 0)].abs(),
                    }
                }
            }
            fn log_derivatives(
                &self,
                _r: ndarray::ArrayView2<f64>,
            ) -> Result<crate::wfmodel::LogPsiDerivs, crate::error::WfError> {
                unimplemented!()
            }
        }
        let config = hydrogen_config();
        let mut state = WalkerState::init(&config, &HalfSpace, 32, 0.8, 9);
        // Force all walkers into the support.
        for w in state.walkers.iter_mut() {
            w.positions[(0, 0)] = -w.positions[(0, 0)].abs() - 0.1;
        }
        state.refresh_cache(&HalfSpace);
        state.run_chain(&HalfSpace, 100);
        for w in &state.walkers {
            assert!(w.positions[(0, 0)] <= 0.0);
        }
    }

    #[test]
    fn geometry_walkers_stay_in_bins() {
        let mut walkers = make_geometry_walkers(1.0, 2.0, 5, 77);
        for w in walkers.iter() {
            assert!(w.current >= w.lo && w.current <= w.hi);
        }
        for _ in 0..10_000 {
            for w in walkers.iter_mut() {
                let v = w.step(0.1);
                assert!(v >= w.lo && v <= w.hi);
            }
        }
    }

    #[test]
    fn zero_jitter_keeps_configurations() {
        let mut walkers = make_geometry_walkers(1.0, 2.0, 3, 5);
        let before: Vec<f64> = walkers.iter().map(|w| w.current).collect();
        let configs = step_geometry_walkers(&mut walkers, 0.0, |b| {
            MolecularConfiguration::new(
                vec![[0.0, 0.0, -b / 2.0], [0.0, 0.0, b / 2.0]],
                vec![1, 1],
                1,
                1,
            )
        })
        .unwrap();
        let after: Vec<f64> = walkers.iter().map(|w| w.current).collect();
        assert_eq!(before, after);
        assert_eq!(configs.len(), 3);
    }
}
