//! Spherical Fourier-Bessel positional encoding and the Bessel radial basis
//! for inter-nuclear distances. No cutoff envelope: the nuclei graph is fully
//! connected.

use crate::geometry::Vec3;

/// Basis hyperparameters shared by the positional encoding and edge features.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisConfig {
    /// Number of spherical orders l = 0..n_sbf-1.
    pub n_sbf: usize,
    /// Number of radial roots n = 1..n_rbf per order.
    pub n_rbf: usize,
    /// Length scale c in bohr.
    pub length_scale: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            n_sbf: 7,
            n_rbf: 6,
            length_scale: 10.0,
        }
    }
}

/// Precomputed roots and normalizations for the spherical basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTables {
    pub config: BasisConfig,
    /// roots[l][n-1] = n-th positive root of j_l.
    roots: Vec<Vec<f64>>,
    /// norms[l][n-1] = sqrt(2 / (c^3 * j_{l+1}(z_{l,n})^2)).
    norms: Vec<Vec<f64>>,
}

impl BasisTables {
    pub fn new(config: BasisConfig) -> Self {
        assert!(config.n_sbf >= 1 && config.n_rbf >= 1 && config.length_scale > 0.0);
        let roots = bessel_roots(config.n_sbf - 1, config.n_rbf);
        let c = config.length_scale;
        let norms = roots
            .iter()
            .enumerate()
            .map(|(l, row)| {
                row.iter()
                    .map(|&z| (2.0 / (c.powi(3) * spherical_jl(l + 1, z).powi(2))).sqrt())
                    .collect()
            })
            .collect();
        BasisTables {
            config,
            roots,
            norms,
        }
    }

    /// Output length of the positional encoding.
    pub fn encoding_len(&self) -> usize {
        self.config.n_sbf * self.config.n_rbf
    }

    /// Single spherical basis function: normalized j_l at the scaled radius
    /// times the zonal spherical harmonic of the polar angle.
    pub fn sbf(&self, l: usize, n: usize, d: f64, cos_angle: f64) -> f64 {
        let z = self.roots[l][n - 1];
        let radial = self.norms[l][n - 1] * spherical_jl(l, z * d / self.config.length_scale);
        let angular =
            ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).sqrt() * legendre_pl(l, cos_angle);
        radial * angular
    }

    /// Positional encoding f_pos of a vector already expressed in frame
    /// coordinates: for each (l, n) the basis is evaluated at the angle of x
    /// to each of the three frame axes and summed. The zero vector takes the
    /// d -> 0 limit, where only l = 0 survives.
    pub fn positional_encoding(&self, x_frame: &Vec3) -> Vec<f64> {
        let d =
            (x_frame[0] * x_frame[0] + x_frame[1] * x_frame[1] + x_frame[2] * x_frame[2]).sqrt();
        let mut out = vec![0.0; self.encoding_len()];
        if d == 0.0 {
            for n in 1..=self.config.n_rbf {
                // cos factor from Y_0^0 is angle-independent.
                out[n - 1] = 3.0 * self.sbf(0, n, 0.0, 1.0);
            }
            return out;
        }
        for axis in 0..3 {
            let cos_angle = (x_frame[axis] / d).clamp(-1.0, 1.0);
            let mut idx = 0;
            for l in 0..self.config.n_sbf {
                for n in 1..=self.config.n_rbf {
                    out[idx] += self.sbf(l, n, d, cos_angle);
                    idx += 1;
                }
            }
        }
        out
    }

    /// Radial Bessel basis for an inter-nuclear distance:
    /// sqrt(2/c) * sin(n pi d / c) / d for n = 1..n_rbf.
    pub fn radial_encoding(&self, d: f64) -> Vec<f64> {
        let c = self.config.length_scale;
        let prefactor = (2.0 / c).sqrt();
        (1..=self.config.n_rbf)
            .map(|n| {
                let k = n as f64 * std::f64::consts::PI / c;
                if d == 0.0 {
                    prefactor * k
                } else {
                    prefactor * (k * d).sin() / d
                }
            })
            .collect()
    }
}

/// Spherical Bessel function of the first kind j_l(x).
///
/// Ascending series near the origin (upward recurrence loses accuracy for
/// x < l), three-term recurrence elsewhere.
pub fn spherical_jl(l: usize, x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < l as f64 + 1.5 {
        return jl_series(l, x);
    }
    let j0 = x.sin() / x;
    if l == 0 {
        return j0;
    }
    let j1 = x.sin() / (x * x) - x.cos() / x;
    if l == 1 {
        return j1;
    }
    let mut prev = j0;
    let mut cur = j1;
    for k in 1..l {
        let next = (2 * k + 1) as f64 / x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn jl_series(l: usize, x: f64) -> f64 {
    // j_l(x) = x^l / (2l+1)!! * sum_k (-x^2/2)^k / (k! (2l+2k+1)!!ratio)
    // with the k-th term obeying t_{k+1} = t_k * (-x^2/2) / (k+1) / (2l+2k+3).
    let mut double_fact = 1.0;
    for i in 0..l {
        double_fact *= (2 * i + 3) as f64;
    }
    let lead = if l == 0 { 1.0 } else { x.powi(l as i32) } / double_fact;
    let mut term = 1.0;
    let mut sum = 1.0;
    let half_x2 = 0.5 * x * x;
    for k in 0..64 {
        term *= -half_x2 / ((k + 1) as f64 * (2 * l + 2 * k + 3) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    lead * sum
}

/// Legendre polynomial P_l(x) via the Bonnet recurrence.
pub fn legendre_pl(l: usize, x: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for k in 1..l {
                let next = ((2 * k + 1) as f64 * x * cur - k as f64 * prev) / (k + 1) as f64;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Positive roots of j_l for l = 0..=l_max, n_roots each, by bracketed
/// bisection. Roots of consecutive orders interlace, which provides the
/// brackets.
pub fn bessel_roots(l_max: usize, n_roots: usize) -> Vec<Vec<f64>> {
    // j_0 roots are exactly n*pi. Order l roots interlace order l-1 roots:
    // z_{l-1,n} < z_{l,n} < z_{l-1,n+1}, so each level needs one extra root
    // of the previous level.
    let mut all: Vec<Vec<f64>> = Vec::with_capacity(l_max + 1);
    let base: Vec<f64> = (1..=(n_roots + l_max))
        .map(|n| n as f64 * std::f64::consts::PI)
        .collect();
    all.push(base);
    for l in 1..=l_max {
        let prev = &all[l - 1];
        let needed = n_roots + l_max - l;
        let mut row = Vec::with_capacity(needed);
        for n in 0..needed {
            let lo = prev[n];
            let hi = prev[n + 1];
            row.push(bisect_root(|x| spherical_jl(l, x), lo, hi));
        }
        all.push(row);
    }
    for row in all.iter_mut() {
        row.truncate(n_roots);
    }
    all
}

fn bisect_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    // Nudge off the bracket endpoints, which are roots of the previous order.
    let width = hi - lo;
    lo += 1e-9 * width;
    hi -= 1e-9 * width;
    let mut flo = f(lo);
    debug_assert!(flo * f(hi) <= 0.0, "root bracket invalid");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return mid;
        }
        if flo * fmid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fmid;
        }
        if hi - lo < 1e-15 * hi.abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}
