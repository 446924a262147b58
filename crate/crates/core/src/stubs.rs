//! Analytic reference wave functions used by self-checks and tests.

use ndarray::{Array2, ArrayView2};

use crate::error::WfError;
use crate::geometry::{norm3, sub3, Vec3};
use crate::wfmodel::derivs::LogPsiDerivs;
use crate::wfmodel::forward::SignedLogAmplitude;
use crate::wfmodel::WaveFunction;

/// Product of single-particle exponentials: log|psi| = -alpha sum_i |r_i - c|.
///
/// With alpha = 1 and a unit charge at the center this is the exact hydrogen
/// ground state, so its local energy is -1/2 everywhere (zero variance).
#[derive(Debug, Clone)]
pub struct ExponentialStub {
    pub center: Vec3,
    pub alpha: f64,
    pub n_electrons: usize,
}

impl ExponentialStub {
    pub fn hydrogen_1s() -> Self {
        ExponentialStub {
            center: [0.0; 3],
            alpha: 1.0,
            n_electrons: 1,
        }
    }
}

impl WaveFunction for ExponentialStub {
    fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    fn signed_log(&self, r: ArrayView2<f64>) -> SignedLogAmplitude {
        let mut log_abs = 0.0;
        for i in 0..r.nrows() {
            let p = [r[(i, 0)], r[(i, 1)], r[(i, 2)]];
            log_abs -= self.alpha * norm3(&sub3(&p, &self.center));
        }
        SignedLogAmplitude { sign: 1, log_abs }
    }

    fn log_derivatives(&self, r: ArrayView2<f64>) -> Result<LogPsiDerivs, WfError> {
        let n = r.nrows();
        let mut grad = Array2::zeros((n, 3));
        let mut laplacian = 0.0;
        for i in 0..n {
            let p = [r[(i, 0)], r[(i, 1)], r[(i, 2)]];
            let diff = sub3(&p, &self.center);
            let d = norm3(&diff);
            if d < 1e-12 {
                return Err(WfError::ElectronOnNucleus {
                    electron: i,
                    nucleus: 0,
                });
            }
            for c in 0..3 {
                grad[(i, c)] = -self.alpha * diff[c] / d;
            }
            laplacian -= 2.0 * self.alpha / d;
        }
        Ok(LogPsiDerivs {
            value: self.signed_log(r),
            grad,
            laplacian,
        })
    }
}

/// Wraps a wave function and destroys its antisymmetry by forcing the sign
/// positive. A negative fixture for the self-check suite.
pub struct SignCorrupted<W>(pub W);

impl<W: WaveFunction> WaveFunction for SignCorrupted<W> {
    fn n_electrons(&self) -> usize {
        self.0.n_electrons()
    }

    fn signed_log(&self, r: ArrayView2<f64>) -> SignedLogAmplitude {
        let mut out = self.0.signed_log(r);
        if out.sign != 0 {
            out.sign = 1;
        }
        out
    }

    fn log_derivatives(&self, r: ArrayView2<f64>) -> Result<LogPsiDerivs, WfError> {
        let mut d = self.0.log_derivatives(r)?;
        if d.value.sign != 0 {
            d.value.sign = 1;
        }
        Ok(d)
    }
}
