//! Small fixed-size 3-vector / 3×3-matrix algebra.
//!
//! Everything here is a plain `Copy` value type. The symmetric eigensolver is
//! a cyclic Jacobi iteration followed by an explicit re-orthonormalization of
//! the eigenvector triad, so nearly repeated eigenvalues still come back with
//! an orthonormal basis and a fixed sign convention.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed numerical tolerances used by this module and asserted by its tests.
pub mod tol {
    /// Maximum relative asymmetry accepted by [`super::eig_sym3`].
    pub const SYMMETRY_REL: f64 = 1e-9;
    /// Components smaller than this are treated as zero by the eigenvector
    /// sign convention.
    pub const SIGN_ZERO: f64 = 1e-12;
    /// Smallest admissible principal stretch in [`super::polar_decompose`].
    pub const MIN_STRETCH: f64 = 1e-8;
    /// Orthogonality bound on returned rotations and eigenvector bases.
    pub const ORTHOGONALITY: f64 = 1e-10;
    /// Relative reconstruction bound for eigen and polar factorizations.
    pub const RECONSTRUCTION_REL: f64 = 1e-9;
    /// Unit-length bound for direction vectors.
    pub const UNIT_LENGTH: f64 = 1e-12;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("non-finite component in input")]
    NonFinite,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("inverted element: det F = {0:e} <= 0")]
    Inverted(f64),
    #[error("ill-conditioned stretch: smallest principal stretch {0:e}")]
    IllConditioned(f64),
    #[error("singular matrix")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };
    pub const X: Vec3 = Vec3 {
        x: 1.0,
        y: 0.0,
        z: 0.0,
    };
    pub const Y: Vec3 = Vec3 {
        x: 0.0,
        y: 1.0,
        z: 0.0,
    };
    pub const Z: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(self * (1.0 / n))
        } else {
            None
        }
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    #[inline]
    pub fn component_min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn component_max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    /// Outer product `self ⊗ o`.
    #[inline]
    pub fn outer(self, o: Vec3) -> Mat3 {
        let a = self.to_array();
        let b = o.to_array();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i] * b[j];
            }
        }
        Mat3(m)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl IndexMut<usize> for Vec3 {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// 3×3 matrix stored row-major: `m.0[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    #[inline]
    pub const fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Mat3(rows)
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Mat3([[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]])
    }

    /// Right-handed rotation by `angle` radians about `axis` (need not be unit).
    pub fn rotation(axis: Vec3, angle: f64) -> Self {
        let k = axis.normalized().unwrap_or(Vec3::Z);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3([
            [
                t * k.x * k.x + c,
                t * k.x * k.y - s * k.z,
                t * k.x * k.z + s * k.y,
            ],
            [
                t * k.x * k.y + s * k.z,
                t * k.y * k.y + c,
                t * k.y * k.z - s * k.x,
            ],
            [
                t * k.x * k.z - s * k.y,
                t * k.y * k.z + s * k.x,
                t * k.z * k.z + c,
            ],
        ])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.0[i])
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    #[inline]
    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse by cofactors. Fails only for an exactly singular or non-finite
    /// result; conditioning is the caller's concern.
    pub fn inverse(&self) -> Result<Mat3, TensorError> {
        let m = &self.0;
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return Err(TensorError::Singular);
        }
        let inv_d = 1.0 / d;
        let c = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Ok(Mat3(c) * inv_d)
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flat_map(|r| r.iter()).all(|v| v.is_finite())
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetric_part(&self) -> Mat3 {
        (*self + self.transpose()) * 0.5
    }

    /// Largest `|M_ij − M_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.0;
        (m[0][1] - m[1][0])
            .abs()
            .max((m[0][2] - m[2][0]).abs())
            .max((m[1][2] - m[2][1]).abs())
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_row_major(v: [f64; 9]) -> Mat3 {
        Mat3([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut r = self;
        r += o;
        r
    }
}

impl AddAssign for Mat3 {
    fn add_assign(&mut self, o: Mat3) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += o.0[i][j];
            }
        }
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        let mut r = self;
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] -= o.0[i][j];
            }
        }
        r
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(self, s: f64) -> Mat3 {
        let mut r = self;
        for row in r.0.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        r
    }
}

impl Mul<Mat3> for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        Mat3(r)
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        self.mul_vec(v)
    }
}

/// Eigen-decomposition of a symmetric 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenSym3 {
    /// Eigenvalues sorted descending.
    pub values: [f64; 3],
    /// Unit eigenvectors, `vectors[i]` belongs to `values[i]`.
    pub vectors: [Vec3; 3],
}

impl EigenSym3 {
    /// Matrix whose columns are the eigenvectors.
    pub fn basis(&self) -> Mat3 {
        Mat3::from_cols(self.vectors[0], self.vectors[1], self.vectors[2])
    }

    /// `Q diag(f(λ)) Qᵀ`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Mat3 {
        let mut out = Mat3::ZERO;
        for (v, q) in self.values.iter().zip(self.vectors.iter()) {
            out += q.outer(*q) * f(*v);
        }
        out
    }

    pub fn reconstruct(&self) -> Mat3 {
        self.map_values(|v| v)
    }
}

/// Symmetric eigen-decomposition.
///
/// The input is symmetrized as `(M + Mᵀ)/2` after checking that the
/// asymmetry is below [`tol::SYMMETRY_REL`] relative to `max(1, |M|max)`.
/// Eigenvalues come back sorted descending; each eigenvector has its first
/// non-negligible component positive.
pub fn eig_sym3(m: &Mat3) -> Result<EigenSym3, TensorError> {
    if !m.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let scale = m.max_abs().max(1.0);
    let asym = m.max_asymmetry();
    if asym > tol::SYMMETRY_REL * scale {
        return Err(TensorError::NotSymmetric(asym));
    }
    let (vals, vecs) = jacobi(m.symmetric_part());

    let mut order = [0usize, 1, 2];
    // Stable sort keeps ties in Jacobi order, which is itself deterministic.
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let values = [vals[order[0]], vals[order[1]], vals[order[2]]];
    let raw = [vecs.col(order[0]), vecs.col(order[1]), vecs.col(order[2])];

    Ok(EigenSym3 {
        values,
        vectors: orthonormalize(raw),
    })
}

/// Cyclic Jacobi. Returns eigenvalues (unsorted) and the accumulated rotation
/// whose columns are the eigenvectors.
fn jacobi(mut a: Mat3) -> ([f64; 3], Mat3) {
    let mut v = Mat3::IDENTITY;
    let norm2 = a.frobenius_norm().powi(2);
    if norm2 == 0.0 {
        return ([0.0; 3], v);
    }
    for _sweep in 0..64 {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off <= f64::EPSILON * f64::EPSILON * norm2 * 1e-4 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = if theta.is_infinite() {
                0.5 / theta
            } else {
                theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Mat3::IDENTITY;
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v = v * rot;
        }
    }
    ([a[(0, 0)], a[(1, 1)], a[(2, 2)]], v)
}

/// Gram–Schmidt the triad (in the given order) and apply the sign convention.
fn orthonormalize(raw: [Vec3; 3]) -> [Vec3; 3] {
    let e0 = raw[0].normalized().unwrap_or(Vec3::X);
    let e1 = (raw[1] - e0 * e0.dot(raw[1]))
        .normalized()
        .unwrap_or_else(|| any_orthogonal(e0));
    let e2 = e0.cross(e1);
    let e2 = if e2.dot(raw[2]) < 0.0 { -e2 } else { e2 };
    [
        apply_sign_convention(e0),
        apply_sign_convention(e1),
        apply_sign_convention(e2),
    ]
}

fn any_orthogonal(v: Vec3) -> Vec3 {
    let trial = if v.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    (trial - v * v.dot(trial)).normalized().unwrap_or(Vec3::Z)
}

/// Flip `v` so that its first component with magnitude above
/// [`tol::SIGN_ZERO`] is positive.
pub fn apply_sign_convention(v: Vec3) -> Vec3 {
    for c in v.to_array() {
        if c.abs() > tol::SIGN_ZERO {
            return if c < 0.0 { -v } else { v };
        }
    }
    v
}

/// Polar factors of a deformation gradient, `F = R U = V R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarFactors {
    pub rotation: Mat3,
    pub right_stretch: Mat3,
    pub left_stretch: Mat3,
    /// Principal stretches (eigenvalues of U and V), descending.
    pub stretches: [f64; 3],
    /// Eigenvectors of V (deformed frame), matching `stretches`.
    pub left_dirs: [Vec3; 3],
    /// Eigenvectors of U (reference frame), matching `stretches`.
    pub right_dirs: [Vec3; 3],
}

/// Polar decomposition through the spectral square root of `FᵀF`.
///
/// With `FᵀF = Q Λ Qᵀ`, `U = Q Λ^½ Qᵀ` and `R = F U⁻¹ = P Qᵀ` where the columns
/// of `P` are `F q_i / σ_i`. `P` is re-orthonormalized before use so `R` is a
/// rotation to machine precision even when `F` is moderately ill-conditioned.
pub fn polar_decompose(f: &Mat3) -> Result<PolarFactors, TensorError> {
    if !f.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let det = f.det();
    if det <= 0.0 {
        return Err(TensorError::Inverted(det));
    }
    let c = f.transpose() * *f;
    let eig = eig_sym3(&c)?;
    let mut q = eig.vectors;
    // Proper basis so that R = P Qᵀ is a rotation.
    if q[0].cross(q[1]).dot(q[2]) < 0.0 {
        q[2] = -q[2];
    }
    let fq = [*f * q[0], *f * q[1], *f * q[2]];
    let sigma = [fq[0].norm(), fq[1].norm(), fq[2].norm()];
    let smallest = eig.values[2].max(0.0).sqrt().min(sigma[2]);
    if smallest < tol::MIN_STRETCH {
        return Err(TensorError::IllConditioned(smallest));
    }

    let p0 = fq[0] * (1.0 / sigma[0]);
    let p1 = (fq[1] - p0 * p0.dot(fq[1]))
        .normalized()
        .ok_or(TensorError::Singular)?;
    let p2 = p0.cross(p1);

    let qm = Mat3::from_cols(q[0], q[1], q[2]);
    let pm = Mat3::from_cols(p0, p1, p2);
    let rotation = pm * qm.transpose();

    let mut right_stretch = Mat3::ZERO;
    let mut left_stretch = Mat3::ZERO;
    let p = [p0, p1, p2];
    for i in 0..3 {
        right_stretch += q[i].outer(q[i]) * sigma[i];
        left_stretch += p[i].outer(p[i]) * sigma[i];
    }
    let right_stretch = right_stretch.symmetric_part();
    let left_stretch = left_stretch.symmetric_part();

    // σ_i = |F q_i| can reorder against eigenvalue order only when the
    // eigenvalues are equal to rounding; keep the triad sorted regardless.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let stretches = [sigma[order[0]], sigma[order[1]], sigma[order[2]]];
    let left_dirs = order.map(|i| apply_sign_convention(p[i]));
    let right_dirs = order.map(|i| apply_sign_convention(q[i]));

    Ok(PolarFactors {
        rotation,
        right_stretch,
        left_stretch,
        stretches,
        left_dirs,
        right_dirs,
    })
}

/// Principal invariants `(I1, I2, I3)`.
pub fn invariants3(m: &Mat3) -> Result<(f64, f64, f64), TensorError> {
    if !m.is_finite() {
        return Err(TensorError::NonFinite);
    }
    let tr = m.trace();
    let tr_sq = (*m * *m).trace();
    Ok((tr, 0.5 * (tr * tr - tr_sq), m.det()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Mat3 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Mat3::rotation(axis, rng.random_range(-3.1..3.1))
    }

    fn assert_close(a: &Mat3, b: &Mat3, tol: f64) {
        let err = (*a - *b).max_abs();
        assert!(err <= tol, "max-norm error {err:e} > {tol:e}\n{a:?}\n{b:?}");
    }

    #[test]
    fn identity_eigen() {
        let e = eig_sym3(&Mat3::IDENTITY).unwrap();
        assert_eq!(e.values, [1.0, 1.0, 1.0]);
        assert_close(&(e.basis().transpose() * e.basis()), &Mat3::IDENTITY, 1e-15);
        for v in e.vectors {
            assert_eq!(apply_sign_convention(v), v);
        }
    }

    #[test]
    fn diagonal_eigen() {
        let e = eig_sym3(&Mat3::diag(1.0, 4.0, 0.25)).unwrap();
        assert_eq!(e.values, [4.0, 1.0, 0.25]);
        assert_eq!(e.vectors, [Vec3::Y, Vec3::X, Vec3::Z]);
    }

    #[test]
    fn construct_then_decompose() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let q = random_rotation(&mut rng);
            let m = q * Mat3::diag(3.0, 2.0, 1.0) * q.transpose();
            let m = m.symmetric_part();
            let e = eig_sym3(&m).unwrap();
            for (got, want) in e.values.iter().zip([3.0, 2.0, 1.0]) {
                assert!((got - want).abs() < 1e-13);
            }
            for i in 0..3 {
                let c = q.col(i);
                assert!((e.vectors[i].dot(c).abs() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = Mat3::IDENTITY;
        m[(1, 2)] = f64::NAN;
        assert_eq!(eig_sym3(&m), Err(TensorError::NonFinite));
        assert_eq!(invariants3(&m), Err(TensorError::NonFinite));
        assert!(matches!(polar_decompose(&m), Err(TensorError::NonFinite)));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = Mat3::from_rows([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(eig_sym3(&m), Err(TensorError::NotSymmetric(_))));
    }

    #[test]
    fn polar_identity_rotation_stretch() {
        let p = polar_decompose(&Mat3::IDENTITY).unwrap();
        assert_close(&p.rotation, &Mat3::IDENTITY, 1e-15);
        assert_close(&p.right_stretch, &Mat3::IDENTITY, 1e-15);
        assert_close(&p.left_stretch, &Mat3::IDENTITY, 1e-15);

        let rz = Mat3::rotation(Vec3::Z, std::f64::consts::FRAC_PI_2);
        let p = polar_decompose(&rz).unwrap();
        assert_close(&p.rotation, &rz, 1e-15);
        assert_close(&p.right_stretch, &Mat3::IDENTITY, 1e-15);
        assert_close(&p.left_stretch, &Mat3::IDENTITY, 1e-15);

        let d = Mat3::diag(2.0, 0.5, 1.0);
        let p = polar_decompose(&d).unwrap();
        assert_close(&p.rotation, &Mat3::IDENTITY, 1e-15);
        assert_close(&p.right_stretch, &d, 1e-15);
        assert_close(&p.left_stretch, &d, 1e-15);
        assert_eq!(p.stretches, [2.0, 1.0, 0.5]);
    }

    #[test]
    fn polar_round_trip_random_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u0 = Mat3::diag(1.5, 1.0, 1.0 / 1.5);
        for _ in 0..200 {
            let r0 = random_rotation(&mut rng);
            let p = polar_decompose(&(r0 * u0)).unwrap();
            assert_close(&p.rotation, &r0, 1e-12);
            assert_close(&p.right_stretch, &u0, 1e-12);
        }
    }

    #[test]
    fn polar_rejects_inverted_and_degenerate() {
        assert!(matches!(
            polar_decompose(&Mat3::diag(1.0, 1.0, -1.0)),
            Err(TensorError::Inverted(_))
        ));
        assert!(matches!(
            polar_decompose(&Mat3::diag(1.0, 1.0, 0.0)),
            Err(TensorError::Inverted(_))
        ));
        assert!(matches!(
            polar_decompose(&Mat3::diag(1e5, 1e5, 1e-10)),
            Err(TensorError::IllConditioned(_))
        ));
    }

    #[test]
    fn invariants_closed_forms() {
        assert_eq!(invariants3(&Mat3::IDENTITY).unwrap(), (3.0, 3.0, 1.0));
        let f = Mat3::diag(2.0, 0.5, 1.0);
        let (i1, _, _) = invariants3(&(f * f.transpose())).unwrap();
        assert_eq!(i1, 5.25);
        let l = 2.0_f64;
        let f = Mat3::diag(l, 1.0 / l.sqrt(), 1.0 / l.sqrt());
        let (i1, _, i3) = invariants3(&(f * f.transpose())).unwrap();
        assert!((i1 - 5.0).abs() < 1e-14);
        assert!((i3 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_matrix_is_proper() {
        let r = Mat3::rotation(Vec3::new(1.0, 2.0, 3.0), 0.7);
        assert_close(&(r.transpose() * r), &Mat3::IDENTITY, 1e-15);
        assert!((r.det() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_round_trip() {
        let m = Mat3::from_rows([[2.0, 1.0, 0.0], [0.5, 3.0, 0.2], [0.0, 0.1, 1.0]]);
        assert_close(&(m * m.inverse().unwrap()), &Mat3::IDENTITY, 1e-15);
        assert_eq!(Mat3::ZERO.inverse(), Err(TensorError::Singular));
    }
}
