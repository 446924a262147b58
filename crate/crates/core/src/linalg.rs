//! Small dense linear-algebra kernels: pivoted LU for signed log-determinants
//! and inverses, a 3x3 symmetric Jacobi eigensolver, and a dense SPD solver
//! used as a test oracle.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Sign and natural log of the absolute determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignLogDet {
    /// -1, 0 or +1. Zero means the matrix is singular.
    pub sign: i8,
    /// ln |det|; `f64::NEG_INFINITY` iff `sign == 0`.
    pub log_abs: f64,
}

impl SignLogDet {
    pub const ZERO: SignLogDet = SignLogDet {
        sign: 0,
        log_abs: f64::NEG_INFINITY,
    };

    /// Determinant of the empty (0x0) matrix is 1.
    pub const UNIT: SignLogDet = SignLogDet {
        sign: 1,
        log_abs: 0.0,
    };
}

/// LU factorization with partial pivoting, kept around for determinant and
/// inverse queries on the small orbital matrices.
pub struct Lu {
    lu: Array2<f64>,
    pivots: Vec<usize>,
    swaps: usize,
    singular: bool,
}

impl Lu {
    pub fn factor(a: ArrayView2<f64>) -> Lu {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU requires a square matrix");
        let mut lu = a.to_owned();
        let mut pivots = Vec::with_capacity(n);
        let mut swaps = 0usize;
        let mut singular = false;
        for col in 0..n {
            // Pivot: largest magnitude in the remaining column.
            let mut p = col;
            let mut best = lu[(col, col)].abs();
            for row in col + 1..n {
                let v = lu[(row, col)].abs();
                if v > best {
                    best = v;
                    p = row;
                }
            }
            pivots.push(p);
            if best == 0.0 {
                singular = true;
                continue;
            }
            if p != col {
                swaps += 1;
                for k in 0..n {
                    let tmp = lu[(col, k)];
                    lu[(col, k)] = lu[(p, k)];
                    lu[(p, k)] = tmp;
                }
            }
            let inv_piv = 1.0 / lu[(col, col)];
            for row in col + 1..n {
                let factor = lu[(row, col)] * inv_piv;
                lu[(row, col)] = factor;
                for k in col + 1..n {
                    lu[(row, k)] -= factor * lu[(col, k)];
                }
            }
        }
        Lu {
            lu,
            pivots,
            swaps,
            singular,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn sign_log_det(&self) -> SignLogDet {
        if self.singular {
            return SignLogDet::ZERO;
        }
        let n = self.lu.nrows();
        if n == 0 {
            return SignLogDet::UNIT;
        }
        let mut sign = if self.swaps % 2 == 0 { 1i8 } else { -1i8 };
        let mut log_abs = 0.0;
        for i in 0..n {
            let d = self.lu[(i, i)];
            if d < 0.0 {
                sign = -sign;
            }
            log_abs += d.abs().ln();
        }
        if !log_abs.is_finite() && log_abs < 0.0 {
            return SignLogDet::ZERO;
        }
        SignLogDet { sign, log_abs }
    }

    /// Solve A x = b in place.
    pub fn solve_into(&self, b: &mut Array1<f64>) {
        let n = self.lu.nrows();
        debug_assert!(!self.singular);
        for i in 0..n {
            let p = self.pivots[i];
            if p != i {
                b.swap(i, p);
            }
            for k in 0..i {
                let f = self.lu[(i, k)];
                b[i] -= f * b[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                b[i] -= self.lu[(i, k)] * b[k];
            }
            b[i] /= self.lu[(i, i)];
        }
    }

    pub fn inverse(&self) -> Option<Array2<f64>> {
        if self.singular {
            return None;
        }
        let n = self.lu.nrows();
        let mut inv = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::zeros(n);
            e[j] = 1.0;
            self.solve_into(&mut e);
            inv.column_mut(j).assign(&e);
        }
        Some(inv)
    }
}

/// Sign and log|det| of a square matrix. The empty matrix yields (+1, 0).
pub fn sign_log_det(a: ArrayView2<f64>) -> SignLogDet {
    if a.nrows() == 0 {
        return SignLogDet::UNIT;
    }
    Lu::factor(a).sign_log_det()
}

/// Eigen-decomposition of a symmetric 3x3 matrix via cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
pub fn symmetric_eigen_3x3(mat: &[[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = *mat;
    // v starts as identity; columns accumulate the eigenvectors.
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for p in 0..2 {
            for q in p + 1..3 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let rotate = |m: &mut [[f64; 3]; 3], row_based: bool| {
                    for k in 0..3 {
                        let (mkp, mkq) = if row_based {
                            (m[k][p], m[k][q])
                        } else {
                            (m[p][k], m[q][k])
                        };
                        let new_p = c * mkp - s * mkq;
                        let new_q = s * mkp + c * mkq;
                        if row_based {
                            m[k][p] = new_p;
                            m[k][q] = new_q;
                        } else {
                            m[p][k] = new_p;
                            m[q][k] = new_q;
                        }
                    }
                };
                rotate(&mut a, false);
                rotate(&mut a, true);
                rotate(&mut v, true);
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Dense symmetric positive-definite solve via Gaussian elimination with
/// partial pivoting. Used as the oracle against the matrix-free CG path.
pub fn dense_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let lu = Lu::factor(a);
    assert!(!lu.is_singular(), "dense_solve: singular system");
    let mut x = b.to_owned();
    lu.solve_into(&mut x);
    x
}
