//! Molecular geometries and the equivariant coordinate frame.
//!
//! The frame axes are the principal components of the centered nuclear
//! coordinates with signs resolved by an equivariant vector, so the frame
//! rotates and reflects with the molecule. Degenerate spectra fall back to a
//! deterministic construction on stretched pseudo-coordinates.

use crate::error::GeometryError;
use crate::linalg::symmetric_eigen_3x3;

pub type Vec3 = [f64; 3];

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

/// Nuclear positions and charges plus the electron spin partition.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularConfiguration {
    positions: Vec<Vec3>,
    charges: Vec<u32>,
    n_up: usize,
    n_dn: usize,
    canonical: Vec<usize>,
}

impl MolecularConfiguration {
    /// Minimal pairwise nuclear separation accepted as distinct.
    pub const MIN_NUCLEAR_SEPARATION: f64 = 1e-10;

    pub fn new(
        positions: Vec<Vec3>,
        charges: Vec<u32>,
        n_up: usize,
        n_dn: usize,
    ) -> Result<Self, GeometryError> {
        if positions.is_empty() {
            return Err(GeometryError::NoNuclei);
        }
        assert_eq!(
            positions.len(),
            charges.len(),
            "positions and charges must have equal length"
        );
        for (index, p) in positions.iter().enumerate() {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(GeometryError::NonFinitePosition { index });
            }
        }
        for (index, &charge) in charges.iter().enumerate() {
            if charge < 1 {
                return Err(GeometryError::InvalidCharge { index, charge });
            }
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                let d = norm3(&sub3(&positions[i], &positions[j]));
                if d <= Self::MIN_NUCLEAR_SEPARATION {
                    return Err(GeometryError::CoincidentNuclei {
                        first: i,
                        second: j,
                        distance: d,
                    });
                }
            }
        }
        if n_up < n_dn || n_up + n_dn < 1 {
            return Err(GeometryError::InvalidSpinCounts { n_up, n_dn });
        }
        let canonical = canonical_order(&positions, &charges);
        Ok(Self {
            positions,
            charges,
            n_up,
            n_dn,
            canonical,
        })
    }

    pub fn n_nuclei(&self) -> usize {
        self.positions.len()
    }

    pub fn n_electrons(&self) -> usize {
        self.n_up + self.n_dn
    }

    pub fn n_up(&self) -> usize {
        self.n_up
    }

    pub fn n_dn(&self) -> usize {
        self.n_dn
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn charges(&self) -> &[u32] {
        &self.charges
    }

    /// Nucleus indices sorted by spatial position (lexicographic), then
    /// charge. Accumulating sums in this order makes every reduction over
    /// nuclei bitwise invariant to reindexing.
    pub fn canonical(&self) -> &[usize] {
        &self.canonical
    }

    /// Applies a permutation to the nuclei: entry `i` of the result is the
    /// old nucleus `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GeometryError> {
        assert_eq!(perm.len(), self.n_nuclei());
        let positions = perm.iter().map(|&m| self.positions[m]).collect();
        let charges = perm.iter().map(|&m| self.charges[m]).collect();
        Self::new(positions, charges, self.n_up, self.n_dn)
    }
}

fn canonical_order(positions: &[Vec3], charges: &[u32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..positions.len()).collect();
    idx.sort_by(|&a, &b| {
        let pa = &positions[a];
        let pb = &positions[b];
        pa[0]
            .total_cmp(&pb[0])
            .then(pa[1].total_cmp(&pb[1]))
            .then(pa[2].total_cmp(&pb[2]))
            .then(charges[a].cmp(&charges[b]))
    });
    idx
}

/// Orthonormal axes (columns `e_1, e_2, e_3`) plus the geometric center.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivariantFrame {
    /// Column-major axes: `axes[c]` is the c-th axis vector.
    pub axes: [Vec3; 3],
    pub center: Vec3,
}

impl EquivariantFrame {
    pub fn identity(center: Vec3) -> Self {
        EquivariantFrame {
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            center,
        }
    }

    /// Projects a displacement vector onto the frame axes.
    pub fn project(&self, v: &Vec3) -> Vec3 {
        [
            dot3(v, &self.axes[0]),
            dot3(v, &self.axes[1]),
            dot3(v, &self.axes[2]),
        ]
    }

    /// Max-norm deviation of `E^T E` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = dot3(&self.axes[i], &self.axes[j]) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let [a, b, c] = &self.axes;
        a[0] * (b[1] * c[2] - b[2] * c[1]) - b[0] * (a[1] * c[2] - a[2] * c[1])
            + c[0] * (a[1] * b[2] - a[2] * b[1])
    }
}

/// Eigenvalues of the nuclear covariance count as degenerate below this
/// scale-aware gap.
pub const DEGENERACY_TOLERANCE: f64 = 1e-6;

/// Below this magnitude the equivariant vector is treated as zero and axis
/// signs are resolved canonically.
pub const SIGN_TOLERANCE: f64 = 1e-8;

/// Arithmetic mean of the nuclear positions.
pub fn geometric_center(config: &MolecularConfiguration) -> Vec3 {
    let mut c = [0.0; 3];
    for &m in config.canonical() {
        let p = &config.positions()[m];
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let inv = 1.0 / config.n_nuclei() as f64;
    [c[0] * inv, c[1] * inv, c[2] * inv]
}

/// Difference between a squared-distance- and charge-weighted center and the
/// geometric center: rotates and reflects with the system, vanishes for
/// point-symmetric geometries.
pub fn equivariant_vector(config: &MolecularConfiguration) -> Vec3 {
    let center = geometric_center(config);
    let mut v = [0.0; 3];
    for &m in config.canonical() {
        let mut dist_sq_sum = 0.0;
        for &n in config.canonical() {
            let d = sub3(&config.positions()[m], &config.positions()[n]);
            dist_sq_sum += dot3(&d, &d);
        }
        let weight = dist_sq_sum * config.charges()[m] as f64;
        let centered = sub3(&config.positions()[m], &center);
        for k in 0..3 {
            v[k] += weight * centered[k];
        }
    }
    let inv = 1.0 / config.n_nuclei() as f64;
    [v[0] * inv, v[1] * inv, v[2] * inv]
}

/// Canonical sign: flip so the largest-magnitude component is positive, ties
/// broken by the lowest coordinate index.
fn canonical_sign(v: &Vec3) -> Vec3 {
    let mut idx = 0;
    for k in 1..3 {
        if v[k].abs() > v[idx].abs() {
            idx = k;
        }
    }
    if v[idx] < 0.0 {
        [-v[0], -v[1], -v[2]]
    } else {
        *v
    }
}

fn covariance(centered: &[Vec3], order: &[usize]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for &m in order {
        let p = &centered[m];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += p[i] * p[j];
            }
        }
    }
    let inv = 1.0 / order.len() as f64;
    for row in c.iter_mut() {
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
    c
}

/// Descending-eigenvalue principal axes.
///
/// Eigenvalues within the degeneracy tolerance form a group whose eigenbasis
/// is rebuilt canonically (Gram-Schmidt of the standard axes projected onto
/// the group subspace): a raw eigensolver basis of a degenerate subspace can
/// rotate arbitrarily under last-bit input changes, which would break
/// translation invariance. Group members are then ordered by the canonical
/// sign rule and lexicographic comparison of components.
fn sorted_axes(cov: &[[f64; 3]; 3]) -> ([f64; 3], [Vec3; 3]) {
    let (vals, vecs) = symmetric_eigen_3x3(cov);
    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|c| (vals[c], [vecs[0][c], vecs[1][c], vecs[2][c]]))
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let scale = pairs.iter().map(|p| p.0.abs()).fold(1.0f64, f64::max);
    let tol = DEGENERACY_TOLERANCE * scale;

    let mut out: Vec<(f64, Vec3)> = Vec::with_capacity(3);
    let mut start = 0;
    while start < 3 {
        let mut end = start + 1;
        while end < 3 && (pairs[end - 1].0 - pairs[end].0).abs() <= tol {
            end += 1;
        }
        if end - start == 1 {
            out.push(pairs[start]);
        } else {
            let group: Vec<Vec3> = pairs[start..end].iter().map(|p| p.1).collect();
            let value = pairs[start..end].iter().map(|p| p.0).sum::<f64>() / (end - start) as f64;
            let mut members = canonical_subspace_basis(&group);
            members.sort_by(|a, b| {
                let ca = canonical_sign(a);
                let cb = canonical_sign(b);
                ca[0]
                    .total_cmp(&cb[0])
                    .then(ca[1].total_cmp(&cb[1]))
                    .then(ca[2].total_cmp(&cb[2]))
            });
            for m in members {
                out.push((value, m));
            }
        }
        start = end;
    }
    (
        [out[0].0, out[1].0, out[2].0],
        [out[0].1, out[1].1, out[2].1],
    )
}

/// Deterministic orthonormal basis of the span of `group`: Gram-Schmidt of
/// the standard axes projected onto the subspace. Depends only on the
/// subspace itself, so it is stable under tiny perturbations and invariant
/// to nucleus reindexing.
fn canonical_subspace_basis(group: &[Vec3]) -> Vec<Vec3> {
    let project = |x: &Vec3| -> Vec3 {
        let mut p = [0.0; 3];
        for e in group {
            let c = dot3(x, e);
            for k in 0..3 {
                p[k] += c * e[k];
            }
        }
        p
    };
    let mut basis: Vec<Vec3> = Vec::with_capacity(group.len());
    for axis in 0..3 {
        if basis.len() == group.len() {
            break;
        }
        let mut cand = [0.0; 3];
        cand[axis] = 1.0;
        let mut u = project(&cand);
        for b in &basis {
            let c = dot3(&u, b);
            for k in 0..3 {
                u[k] -= c * b[k];
            }
        }
        let norm = norm3(&u);
        if norm > 1e-3 {
            for x in u.iter_mut() {
                *x /= norm;
            }
            basis.push(u);
        }
    }
    debug_assert_eq!(basis.len(), group.len());
    basis
}

fn has_degenerate_pair(vals: &[f64; 3]) -> bool {
    let scale = vals.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = DEGENERACY_TOLERANCE * scale;
    (vals[0] - vals[1]).abs() <= tol
        || (vals[1] - vals[2]).abs() <= tol
        || (vals[0] - vals[2]).abs() <= tol
}

/// Unit direction of the shortest inter-nuclear edge, canonical-signed.
/// Among equally short edges the lexicographically smallest canonical
/// direction wins, which keeps the choice independent of nucleus indexing.
fn shortest_edge_direction(config: &MolecularConfiguration) -> Vec3 {
    let pos = config.positions();
    let mut min_d = f64::INFINITY;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            min_d = min_d.min(norm3(&sub3(&pos[i], &pos[j])));
        }
    }
    let tol = 1e-9 * min_d.max(1.0);
    let mut best: Option<Vec3> = None;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            let diff = sub3(&pos[i], &pos[j]);
            let d = norm3(&diff);
            if (d - min_d).abs() > tol {
                continue;
            }
            let u = canonical_sign(&[diff[0] / d, diff[1] / d, diff[2] / d]);
            let better = match &best {
                None => true,
                Some(b) => {
                    u[0].total_cmp(&b[0])
                        .then(u[1].total_cmp(&b[1]))
                        .then(u[2].total_cmp(&b[2]))
                        == std::cmp::Ordering::Less
                }
            };
            if better {
                best = Some(u);
            }
        }
    }
    best.expect("at least one edge")
}

/// Reports which deterministic fallbacks fired while building a frame. Axes
/// resolved by a fallback are reproducible but not covariant under rotations,
/// so equivariance checks must skip them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameDiagnostics {
    /// PCA was recomputed on stretched pseudo-coordinates.
    pub stretched: bool,
    /// Per axis: sign came from the canonical rule instead of the
    /// equivariant vector (vanishing or orthogonal overlap).
    pub canonical_sign: [bool; 3],
}

impl FrameDiagnostics {
    pub fn fully_equivariant(&self) -> bool {
        !self.stretched && !self.canonical_sign.iter().any(|&c| c)
    }
}

/// Builds the equivariant frame. Deterministic for every input: degenerate
/// covariance spectra recompute the PCA on pseudo-coordinates stretched along
/// the shortest edge, and axis signs the equivariant vector cannot resolve
/// (vanishing norm or vanishing overlap, e.g. the out-of-plane axis of a
/// planar molecule) fall back to the canonical rule.
pub fn build_frame(config: &MolecularConfiguration) -> EquivariantFrame {
    build_frame_detailed(config).0
}

/// As [`build_frame`] but also reports which fallbacks fired.
pub fn build_frame_detailed(
    config: &MolecularConfiguration,
) -> (EquivariantFrame, FrameDiagnostics) {
    let center = geometric_center(config);
    if config.n_nuclei() == 1 {
        return (
            EquivariantFrame::identity(center),
            FrameDiagnostics {
                stretched: false,
                canonical_sign: [true; 3],
            },
        );
    }
    let centered: Vec<Vec3> = config
        .positions()
        .iter()
        .map(|p| sub3(p, &center))
        .collect();
    let cov = covariance(&centered, config.canonical());
    let (vals, mut axes) = sorted_axes(&cov);
    let mut stretched = false;
    if has_degenerate_pair(&vals) {
        stretched = true;
        let u = shortest_edge_direction(config);
        let pseudo: Vec<Vec3> = centered
            .iter()
            .map(|p| {
                let a = dot3(p, &u);
                [
                    p[0] + 0.5 * a * u[0],
                    p[1] + 0.5 * a * u[1],
                    p[2] + 0.5 * a * u[2],
                ]
            })
            .collect();
        let cov = covariance(&pseudo, config.canonical());
        let (_, pseudo_axes) = sorted_axes(&cov);
        axes = pseudo_axes;
    }
    let v = equivariant_vector(config);
    let v_norm = norm3(&v);
    let mut canonical = [false; 3];
    if v_norm >= SIGN_TOLERANCE {
        let overlap_tol = SIGN_TOLERANCE * v_norm.max(1.0);
        for (i, axis) in axes.iter_mut().enumerate() {
            let overlap = dot3(&v, axis);
            if overlap.abs() < overlap_tol {
                canonical[i] = true;
                *axis = canonical_sign(axis);
            } else if overlap < 0.0 {
                for x in axis.iter_mut() {
                    *x = -*x;
                }
            }
        }
    } else {
        canonical = [true; 3];
        for axis in axes.iter_mut() {
            *axis = canonical_sign(axis);
        }
    }
    (
        EquivariantFrame { axes, center },
        FrameDiagnostics {
            stretched,
            canonical_sign: canonical,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn h_config(positions: Vec<Vec3>, n_up: usize, n_dn: usize) -> MolecularConfiguration {
        let charges = vec![1; positions.len()];
        MolecularConfiguration::new(positions, charges, n_up, n_dn).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            MolecularConfiguration::new(vec![], vec![], 1, 0),
            Err(GeometryError::NoNuclei)
        );
        assert!(matches!(
            MolecularConfiguration::new(vec![[0.0; 3], [0.0; 3]], vec![1, 1], 1, 0),
            Err(GeometryError::CoincidentNuclei { .. })
        ));
        assert!(matches!(
            MolecularConfiguration::new(vec![[0.0; 3]], vec![0], 1, 0),
            Err(GeometryError::InvalidCharge { .. })
        ));
        assert!(matches!(
            MolecularConfiguration::new(vec![[0.0; 3]], vec![1], 0, 1),
            Err(GeometryError::InvalidSpinCounts { .. })
        ));
        assert!(matches!(
            MolecularConfiguration::new(vec![[0.0, f64::NAN, 0.0]], vec![1], 1, 0),
            Err(GeometryError::NonFinitePosition { .. })
        ));
    }

    #[test]
    fn center_single_atom() {
        let c = h_config(vec![[1.0, 2.0, 3.0]], 1, 0);
        assert_eq!(geometric_center(&c), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn center_symmetric_diatomic() {
        let c = h_config(vec![[0.0, 0.0, -0.5], [0.0, 0.0, 0.5]], 1, 1);
        let center = geometric_center(&c);
        assert_eq!(center, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn center_three_atoms() {
        let c = h_config(vec![[0.0; 3], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]], 2, 1);
        let center = geometric_center(&c);
        assert_relative_eq!(center[0], 1.0);
        assert_relative_eq!(center[1], 1.0);
        assert_relative_eq!(center[2], 0.0);
    }

    #[test]
    fn equivariant_vector_heteronuclear_diatomic() {
        // Z = (1, 2) at z = 0 and z = 1: both squared-distance sums equal 1,
        // centered positions are (0,0,-1/2) and (0,0,1/2), so
        // v = (1/2)(1*(-1/2) + 2*(1/2)) e_z = (0,0,1/4).
        let c =
            MolecularConfiguration::new(vec![[0.0; 3], [0.0, 0.0, 1.0]], vec![1, 2], 1, 1).unwrap();
        let v = equivariant_vector(&c);
        assert_relative_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[2], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn equivariant_vector_point_symmetric_vanishes() {
        let c = h_config(vec![[0.0, 0.0, -0.7], [0.0, 0.0, 0.7]], 1, 1);
        let v = equivariant_vector(&c);
        assert!(norm3(&v) < 1e-14);
    }

    #[test]
    fn equivariant_vector_rotates() {
        let base =
            MolecularConfiguration::new(vec![[0.0; 3], [0.0, 0.0, 1.0]], vec![1, 2], 1, 1).unwrap();
        // Rotate z -> x.
        let rotated =
            MolecularConfiguration::new(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![1, 2], 1, 1).unwrap();
        let v = equivariant_vector(&rotated);
        assert_relative_eq!(v[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[2], 0.0, epsilon = 1e-15);
        let v0 = equivariant_vector(&base);
        assert_relative_eq!(norm3(&v0), norm3(&v), epsilon = 1e-15);
    }

    #[test]
    fn equivariant_vector_translation_invariant() {
        let a =
            MolecularConfiguration::new(vec![[0.0; 3], [0.0, 0.0, 1.0]], vec![1, 2], 1, 1).unwrap();
        let t = [3.0, -2.0, 0.5];
        let b =
            MolecularConfiguration::new(vec![[3.0, -2.0, 0.5], [3.0, -2.0, 1.5]], vec![1, 2], 1, 1)
                .unwrap();
        let va = equivariant_vector(&a);
        let vb = equivariant_vector(&b);
        for k in 0..3 {
            assert_relative_eq!(va[k], vb[k], epsilon = 1e-12);
        }
        let _ = t;
    }

    #[test]
    fn frame_single_atom_is_identity() {
        let c = h_config(vec![[1.0, -2.0, 0.25]], 1, 0);
        let f = build_frame(&c);
        assert_eq!(f.axes, EquivariantFrame::identity([0.0; 3]).axes);
        assert_eq!(f.center, [1.0, -2.0, 0.25]);
    }

    #[test]
    fn frame_heteronuclear_diatomic_dominant_axis() {
        let c =
            MolecularConfiguration::new(vec![[0.0; 3], [0.0, 0.0, 1.0]], vec![1, 2], 1, 1).unwrap();
        let f = build_frame(&c);
        // Dominant axis along the bond, oriented by v = (0,0,1/4).
        assert_relative_eq!(f.axes[0][2], 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.axes[0][0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.axes[0][1], 0.0, epsilon = 1e-12);
        assert!(f.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn frame_is_bitwise_permutation_invariant() {
        let c = MolecularConfiguration::new(
            vec![[0.1, 0.4, -0.3], [1.2, -0.6, 0.8], [-0.9, 0.2, 0.5]],
            vec![1, 2, 3],
            3,
            3,
        )
        .unwrap();
        let f0 = build_frame(&c);
        let perms: Vec<Vec<usize>> = vec![
            vec![1, 0, 2],
            vec![2, 1, 0],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![0, 2, 1],
        ];
        for p in perms {
            let cp = c.permuted(&p).unwrap();
            let fp = build_frame(&cp);
            assert_eq!(f0.axes, fp.axes, "frame must be bitwise identical");
            assert_eq!(f0.center, fp.center);
        }
    }

    #[test]
    fn frame_square_fallback_is_deterministic_and_orthonormal() {
        let square = vec![
            [0.5, 0.5, 0.0],
            [0.5, -0.5, 0.0],
            [-0.5, -0.5, 0.0],
            [-0.5, 0.5, 0.0],
        ];
        let c = h_config(square.clone(), 2, 2);
        let f = build_frame(&c);
        assert!(f.orthonormality_defect() < 1e-12);
        // Repeated calls and reindexing give the identical frame.
        assert_eq!(f.axes, build_frame(&c).axes);
        let cp = c.permuted(&[3, 1, 0, 2]).unwrap();
        assert_eq!(f.axes, build_frame(&cp).axes);
        let det = f.determinant().abs();
        assert_relative_eq!(det, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn frame_equivariance_under_rotation() {
        // A generic non-planar 4-atom system: no fallback fires, so all three
        // axis signs are resolved by the equivariant vector.
        let positions = vec![
            [0.0, 0.0, 0.0],
            [1.7, 0.1, -0.2],
            [0.3, 0.9, 0.4],
            [-0.5, 0.3, 1.1],
        ];
        let c = MolecularConfiguration::new(positions.clone(), vec![1, 2, 3, 1], 3, 3).unwrap();
        let (f, diag) = build_frame_detailed(&c);
        assert!(diag.fully_equivariant(), "diagnostics: {diag:?}");

        // Rotation by 0.3 rad about z then 0.5 rad about x, applied to rows.
        let (s1, c1) = (0.3f64.sin(), 0.3f64.cos());
        let (s2, c2) = (0.5f64.sin(), 0.5f64.cos());
        let rot = |p: &Vec3| -> Vec3 {
            let q = [c1 * p[0] - s1 * p[1], s1 * p[0] + c1 * p[1], p[2]];
            [q[0], c2 * q[1] - s2 * q[2], s2 * q[1] + c2 * q[2]]
        };
        let rotated: Vec<Vec3> = positions.iter().map(|p| rot(p)).collect();
        let cr = MolecularConfiguration::new(rotated, vec![1, 2, 3, 1], 3, 3).unwrap();
        let fr = build_frame(&cr);
        for a in 0..3 {
            let expected = rot(&f.axes[a]);
            for k in 0..3 {
                assert_relative_eq!(fr.axes[a][k], expected[k], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn planar_system_flags_out_of_plane_axis() {
        // Three atoms always span a plane; the equivariant vector lies in it,
        // so exactly one axis sign must come from the canonical fallback.
        let positions = vec![[0.0, 0.0, 0.0], [1.7, 0.0, 0.0], [0.3, 0.9, 0.0]];
        let c = MolecularConfiguration::new(positions, vec![1, 2, 3], 3, 3).unwrap();
        let (f, diag) = build_frame_detailed(&c);
        assert!(!diag.stretched);
        assert_eq!(diag.canonical_sign.iter().filter(|&&b| b).count(), 1);
        assert!(f.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn projection_uses_frame_axes() {
        let f = EquivariantFrame::identity([0.0; 3]);
        assert_eq!(f.project(&[1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]);
    }
}
