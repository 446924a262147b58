//! Natural-gradient optimization: the covariance-form VMC gradient, a
//! matrix-free damped Fisher preconditioner solved by conjugate gradients,
//! and the parameter update with norm clipping and the decaying learning
//! rate.

use ndarray::{Array1, Array2};

use crate::error::OptimError;
use crate::hamiltonian::EnergyStatistics;
use crate::joint::JointModel;

/// Per-geometry sample data entering one optimization step.
#[derive(Debug, Clone)]
pub struct GeometryBatch {
    /// Clipped local energies, one per sample.
    pub local_energies: Vec<f64>,
    /// S x P per-sample gradients of log|psi| with respect to theta.
    pub grads: Array2<f64>,
}

/// Covariance-form gradient: per geometry the centered-energy-weighted mean
/// of the log-derivative, averaged over geometries.
pub fn vmc_gradient(batches: &[GeometryBatch]) -> Result<Array1<f64>, OptimError> {
    if batches.is_empty() || batches.iter().any(|b| b.local_energies.is_empty()) {
        return Err(OptimError::EmptyBatch);
    }
    let p = batches[0].grads.ncols();
    let mut total = Array1::zeros(p);
    for batch in batches {
        let s = batch.local_energies.len();
        if batch.grads.nrows() != s || batch.grads.ncols() != p {
            return Err(OptimError::DimensionMismatch(format!(
                "batch grads {}x{}, expected {}x{}",
                batch.grads.nrows(),
                batch.grads.ncols(),
                s,
                p
            )));
        }
        let mean_e = batch.local_energies.iter().sum::<f64>() / s as f64;
        let weights =
            Array1::from_iter(batch.local_energies.iter().map(|e| (e - mean_e) / s as f64));
        total += &batch.grads.t().dot(&weights);
    }
    total /= batches.len() as f64;
    Ok(total)
}

/// Matrix-free damped Fisher-vector product over the pooled samples:
/// (1/S) sum_s g_s (g_s . x) + damping * x. The optional centered form
/// subtracts the mean log-derivative first.
pub struct FisherContext<'a> {
    batches: &'a [GeometryBatch],
    damping: f64,
    mean_grad: Option<Array1<f64>>,
    n_samples: usize,
}

impl<'a> FisherContext<'a> {
    pub fn new(batches: &'a [GeometryBatch], damping: f64, centered: bool) -> FisherContext<'a> {
        let n_samples: usize = batches.iter().map(|b| b.grads.nrows()).sum();
        let mean_grad = if centered {
            let p = batches[0].grads.ncols();
            let mut mean = Array1::zeros(p);
            for b in batches {
                mean += &b.grads.sum_axis(ndarray::Axis(0));
            }
            mean /= n_samples as f64;
            Some(mean)
        } else {
            None
        };
        FisherContext {
            batches,
            damping,
            mean_grad,
            n_samples,
        }
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut y = x.mapv(|v| v * self.damping);
        let inv_s = 1.0 / self.n_samples as f64;
        for b in self.batches {
            let t = b.grads.dot(x);
            y.scaled_add(inv_s, &b.grads.t().dot(&t));
        }
        if let Some(mean) = &self.mean_grad {
            let c = mean.dot(x);
            y.scaled_add(-c, mean);
        }
        y
    }
}

/// Standalone Fisher-vector product for a single sample matrix.
pub fn fisher_vector_product(grads: &Array2<f64>, x: &Array1<f64>, damping: f64) -> Array1<f64> {
    let batch = GeometryBatch {
        local_energies: vec![0.0; grads.nrows()],
        grads: grads.clone(),
    };
    let batches = [batch];
    FisherContext::new(&batches, damping, false).apply(x)
}

/// CG termination settings; the quadratic error phi(x) = 1/2 x'Ax - b'x
/// stops the iteration once its trailing-window decrease stalls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub max_steps: usize,
    pub window: usize,
    pub tolerance: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            max_steps: 100,
            window: 10,
            tolerance: 5e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Conjugate gradients on a symmetric positive-definite operator.
pub fn cg_solve<F>(apply_a: F, b: &Array1<f64>, config: &CgConfig) -> Result<CgSolution, OptimError>
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    let mut x = Array1::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let b_norm_sq = rs;
    if b_norm_sq == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual_norm: 0.0,
        });
    }
    let mut phi_history: Vec<f64> = Vec::with_capacity(config.max_steps + 1);
    let mut iterations = 0;
    for k in 0..config.max_steps {
        let ap = apply_a(&p);
        let p_ap = p.dot(&ap);
        if !p_ap.is_finite() || p_ap <= 0.0 {
            if p_ap == 0.0 {
                break;
            }
            return Err(OptimError::CgNonFinite { step: k });
        }
        let alpha = rs / p_ap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rs_new = r.dot(&r);
        if !rs_new.is_finite() {
            return Err(OptimError::CgNonFinite { step: k });
        }
        iterations = k + 1;
        // phi = -1/2 x'(b + r)
        let phi = -0.5 * (x.dot(b) + x.dot(&r));
        phi_history.push(phi);
        if rs_new <= 1e-28 * b_norm_sq {
            rs = rs_new;
            break;
        }
        let w = config.window;
        if phi_history.len() > w {
            let prev = phi_history[phi_history.len() - 1 - w];
            let cur = phi;
            if (prev - cur) < config.tolerance * cur.abs() {
                rs = rs_new;
                break;
            }
        }
        let beta = rs_new / rs;
        rs = rs_new;
        p = &r + &p.mapv(|v| beta * v);
    }
    Ok(CgSolution {
        x,
        iterations,
        residual_norm: rs.sqrt(),
    })
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Initial learning rate eta_0; eta(t) = eta_0 / (1 + t / decay).
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Norm cap on the preconditioned step.
    pub norm_clip: f64,
    /// Damping = damping_factor times the local-energy standard deviation.
    pub damping_factor: f64,
    pub cg: CgConfig,
    /// Use the centered Fisher estimate instead of the plain second moment.
    pub centered_fisher: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            lr_decay: 1000.0,
            norm_clip: 1.0,
            damping_factor: 1e-4,
            cg: CgConfig::default(),
            centered_fisher: false,
        }
    }
}

impl OptimizerConfig {
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        self.learning_rate / (1.0 + step as f64 / self.lr_decay)
    }
}

/// Mutable training state: the joint parameters plus the step counter.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: JointModel,
    pub step: u64,
    pub config: OptimizerConfig,
}

/// Record of one natural-gradient update.
#[derive(Debug, Clone, Copy)]
pub struct UpdateInfo {
    pub learning_rate: f64,
    pub damping: f64,
    pub cg_iterations: usize,
    pub step_norm: f64,
    pub clipped: bool,
}

/// Solves the damped Fisher system for the raw gradient, clips the step
/// norm, and applies theta <- theta - eta(t) * delta.
pub fn apply_update(
    state: &mut TrainState,
    gradient: &Array1<f64>,
    batches: &[GeometryBatch],
    energy_std: f64,
) -> Result<UpdateInfo, OptimError> {
    let damping = (state.config.damping_factor * energy_std).max(1e-10);
    let fisher = FisherContext::new(batches, damping, state.config.centered_fisher);
    let solution = cg_solve(|v| fisher.apply(v), gradient, &state.config.cg)?;
    let (delta, norm, clipped) = clip_norm(solution.x, state.config.norm_clip);
    let lr = state.config.learning_rate_at(state.step);
    let mut theta = state.model.theta();
    theta.scaled_add(-lr, &delta);
    state.model.set_theta(&theta);
    state.step += 1;
    Ok(UpdateInfo {
        learning_rate: lr,
        damping,
        cg_iterations: solution.iterations,
        step_norm: norm.min(state.config.norm_clip),
        clipped,
    })
}

/// Rescales a step onto the norm ball of radius `max_norm` when it exceeds
/// it. Returns (step, original norm, whether clipping fired).
pub fn clip_norm(mut delta: Array1<f64>, max_norm: f64) -> (Array1<f64>, f64, bool) {
    let norm = delta.dot(&delta).sqrt();
    let clipped = norm > max_norm;
    if clipped {
        delta.mapv_inplace(|v| v * max_norm / norm);
    }
    (delta, norm, clipped)
}

/// Convergence criterion: mean over geometries of the within-geometry
/// local-energy variance; zero at an exact eigenfunction.
pub fn convergence_metric(stats: &[EnergyStatistics]) -> f64 {
    assert!(!stats.is_empty(), "need at least one geometry batch");
    stats.iter().map(|s| s.variance).sum::<f64>() / stats.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dense_solve;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_zero_when_energies_equal() {
        let batch = GeometryBatch {
            local_energies: vec![1.3; 5],
            grads: Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64),
        };
        let g = vmc_gradient(&[batch]).unwrap();
        for v in g.iter() {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_averages_over_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| GeometryBatch {
            local_energies: (0..6).map(|_| rng.random::<f64>()).collect(),
            grads: Array2::from_shape_fn((6, 4), |_| rng.random::<f64>() - 0.5),
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let ga = vmc_gradient(std::slice::from_ref(&a)).unwrap();
        let gb = vmc_gradient(std::slice::from_ref(&b)).unwrap();
        let gab = vmc_gradient(&[a, b]).unwrap();
        for i in 0..4 {
            assert_relative_eq!(gab[i], 0.5 * (ga[i] + gb[i]), epsilon = 1e-14);
        }
    }

    #[test]
    fn gradient_rejects_empty() {
        assert_eq!(vmc_gradient(&[]), Err(OptimError::EmptyBatch));
    }

    #[test]
    fn fvp_examples() {
        let grads = array![[1.0, 2.0]];
        let x = array![1.0, 0.0];
        let y = fisher_vector_product(&grads, &x, 0.0);
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(y[1], 2.0, epsilon = 1e-14);

        let zero = Array1::zeros(2);
        let y0 = fisher_vector_product(&grads, &zero, 0.3);
        assert_eq!(y0, zero);
    }

    #[test]
    fn fvp_is_positive_semidefinite_plus_damping() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grads = Array2::from_shape_fn((7, 4), |_| rng.random::<f64>() - 0.5);
        let damping = 0.05;
        for _ in 0..20 {
            let x = Array1::from_shape_fn(4, |_| rng.random::<f64>() - 0.5);
            let y = fisher_vector_product(&grads, &x, damping);
            let quad = x.dot(&y);
            assert!(quad >= damping * x.dot(&x) - 1e-12);
        }
    }

    #[test]
    fn cg_diagonal_solve() {
        let apply = |x: &Array1<f64>| array![2.0 * x[0], 3.0 * x[1]];
        let b = array![2.0, 3.0];
        let sol = cg_solve(apply, &b, &CgConfig::default()).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn cg_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 5;
        let m = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let mut a = m.t().dot(&m);
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        let b = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let tight = CgConfig {
            max_steps: 50,
            window: 10,
            tolerance: 1e-14,
        };
        let sol = cg_solve(|x| a.dot(x), &b, &tight).unwrap();
        let direct = dense_solve(a.view(), b.view());
        let num = (&sol.x - &direct).mapv(|v| v * v).sum().sqrt();
        let den = direct.mapv(|v| v * v).sum().sqrt();
        assert!(num / den < 1e-6, "rel err {}", num / den);
    }

    #[test]
    fn cg_finite_termination() {
        // Exact arithmetic converges within dim(b) iterations; allow the
        // tiny numerical slack of one extra step before the residual check.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [2usize, 4, 8] {
            let m = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
            let mut a = m.t().dot(&m);
            for i in 0..n {
                a[(i, i)] += 1.0;
            }
            let b = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
            let tight = CgConfig {
                max_steps: 4 * n,
                window: 4 * n,
                tolerance: 0.0,
            };
            let sol = cg_solve(|x| a.dot(x), &b, &tight).unwrap();
            assert!(
                sol.iterations <= n + 1,
                "n = {n}, iterations = {}",
                sol.iterations
            );
            let resid = (&a.dot(&sol.x) - &b).mapv(|v| v * v).sum().sqrt();
            assert!(resid < 1e-10);
        }
    }

    #[test]
    fn norm_clipping_examples() {
        // Below the threshold: unchanged.
        let (d, _, clipped) = clip_norm(array![0.3, 0.4], 1.0);
        assert!(!clipped);
        assert_eq!(d, array![0.3, 0.4]);
        // Twice the threshold: rescaled to exactly the threshold norm.
        let (d, norm, clipped) = clip_norm(array![1.2, 1.6], 1.0);
        assert!(clipped);
        assert_relative_eq!(norm, 2.0, epsilon = 1e-14);
        assert_relative_eq!(d.dot(&d).sqrt(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(d[0], 0.6, epsilon = 1e-14);
        assert_relative_eq!(d[1], 0.8, epsilon = 1e-14);
    }

    #[test]
    fn learning_rate_schedule() {
        let config = OptimizerConfig::default();
        assert_relative_eq!(config.learning_rate_at(0), 0.1);
        assert_relative_eq!(config.learning_rate_at(1000), 0.05);
    }

    #[test]
    fn convergence_metric_examples() {
        let s = |variance: f64| EnergyStatistics {
            mean: 0.0,
            variance,
            std_error: 0.0,
            n_samples: 10,
        };
        assert_relative_eq!(convergence_metric(&[s(0.4)]), 0.4);
        assert_relative_eq!(convergence_metric(&[s(0.4), s(0.2)]), 0.3);
    }
}
