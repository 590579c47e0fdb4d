//! Algebra of symmetric traceless 3×3 tensors in a five-coefficient
//! orthonormal parametrization, biaxiality, analytic spectral decomposition,
//! uniaxial constructors, and projection onto the tangent space `𝒰_p`.
//!
//! The fixed orthonormal basis of the symmetric traceless matrices is
//!
//! ```text
//! B1 = (e1⊗e1 - e2⊗e2)/√2
//! B2 = (e1⊗e1 + e2⊗e2 - 2 e3⊗e3)/√6
//! B3 = (e1⊗e2 + e2⊗e1)/√2
//! B4 = (e1⊗e3 + e3⊗e1)/√2
//! B5 = (e2⊗e3 + e3⊗e2)/√2
//! ```
//!
//! Orthonormality is with respect to the Frobenius inner product, so the
//! Euclidean norm of the coefficient vector equals the Frobenius norm of the
//! matrix. All file formats store these coefficients.

use crate::consts::SQRT6;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use thiserror::Error;

/// Eigenvalue gap below which a pair is treated as degenerate and the
/// eigenspace basis is built from projected canonical axes.
pub const DEGENERATE_GAP: f64 = 1e-9;

/// Tolerance by which `tr(Q³)/|Q|³` may leave `[-1,1]` through rounding.
pub const BETA_CLAMP_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("tensor norm {0:.3e} is below the zero threshold")]
    ZeroTensor(f64),
    #[error("vector norm {0} is not 1 within tolerance")]
    NonUnitVector(f64),
    #[error("matrix asymmetry {0:.3e} exceeds tolerance")]
    NonSymmetric(f64),
    #[error("biaxiality {0} overshoots [-1,1] beyond the clamping tolerance")]
    BiaxialityOvershoot(f64),
}

/// Symmetric traceless 3×3 tensor stored as five coefficients over `B1..B5`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QTensor {
    c: [f64; 5],
}

const SQRT6_INV: f64 = 1.0 / SQRT6;

impl QTensor {
    pub const ZERO: QTensor = QTensor { c: [0.0; 5] };

    pub fn new(c: [f64; 5]) -> Self {
        QTensor { c }
    }

    pub fn coeffs(&self) -> [f64; 5] {
        self.c
    }

    pub fn coeff(&self, a: usize) -> f64 {
        self.c[a]
    }

    /// Orthogonal projection of an arbitrary 3×3 matrix onto the basis.
    /// Exact inverse of [`QTensor::matrix`] on symmetric traceless input.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        QTensor {
            c: [
                (m[(0, 0)] - m[(1, 1)]) * FRAC_1_SQRT_2,
                (m[(0, 0)] + m[(1, 1)] - 2.0 * m[(2, 2)]) * SQRT6_INV,
                (m[(0, 1)] + m[(1, 0)]) * FRAC_1_SQRT_2,
                (m[(0, 2)] + m[(2, 0)]) * FRAC_1_SQRT_2,
                (m[(1, 2)] + m[(2, 1)]) * FRAC_1_SQRT_2,
            ],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let [c1, c2, c3, c4, c5] = self.c;
        let d1 = c1 * FRAC_1_SQRT_2 + c2 * SQRT6_INV;
        let d2 = -c1 * FRAC_1_SQRT_2 + c2 * SQRT6_INV;
        let d3 = -2.0 * c2 * SQRT6_INV;
        let o12 = c3 * FRAC_1_SQRT_2;
        let o13 = c4 * FRAC_1_SQRT_2;
        let o23 = c5 * FRAC_1_SQRT_2;
        Matrix3::new(d1, o12, o13, o12, d2, o23, o13, o23, d3)
    }

    pub fn norm_squared(&self) -> f64 {
        self.c.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn dot(&self, other: &QTensor) -> f64 {
        (0..5).map(|a| self.c[a] * other.c[a]).sum()
    }

    /// `tr(Q³)`; equals `3 det(Q)` for traceless tensors.
    pub fn trace_cubed(&self) -> f64 {
        3.0 * self.matrix().determinant()
    }

    pub fn normalized(&self) -> Result<QTensor, TensorError> {
        let n = self.norm();
        if n <= 1e-12 {
            return Err(TensorError::ZeroTensor(n));
        }
        Ok(*self / n)
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|x| x.is_finite())
    }
}

impl Add for QTensor {
    type Output = QTensor;
    fn add(self, rhs: QTensor) -> QTensor {
        let mut c = self.c;
        for a in 0..5 {
            c[a] += rhs.c[a];
        }
        QTensor { c }
    }
}

impl Sub for QTensor {
    type Output = QTensor;
    fn sub(self, rhs: QTensor) -> QTensor {
        let mut c = self.c;
        for a in 0..5 {
            c[a] -= rhs.c[a];
        }
        QTensor { c }
    }
}

impl AddAssign for QTensor {
    fn add_assign(&mut self, rhs: QTensor) {
        for a in 0..5 {
            self.c[a] += rhs.c[a];
        }
    }
}

impl SubAssign for QTensor {
    fn sub_assign(&mut self, rhs: QTensor) {
        for a in 0..5 {
            self.c[a] -= rhs.c[a];
        }
    }
}

impl Neg for QTensor {
    type Output = QTensor;
    fn neg(self) -> QTensor {
        QTensor {
            c: self.c.map(|x| -x),
        }
    }
}

impl Mul<f64> for QTensor {
    type Output = QTensor;
    fn mul(self, rhs: f64) -> QTensor {
        QTensor {
            c: self.c.map(|x| x * rhs),
        }
    }
}

impl Div<f64> for QTensor {
    type Output = QTensor;
    fn div(self, rhs: f64) -> QTensor {
        QTensor {
            c: self.c.map(|x| x / rhs),
        }
    }
}

/// Signed biaxiality `β(Q) = √6 tr(Q³)/|Q|³ ∈ [-1, 1]`.
///
/// `+1` at positive uniaxial tensors, `-1` at negative uniaxial ones.
/// Values that leave the interval by less than [`BETA_CLAMP_TOL`] are clamped.
pub fn biaxiality(q: &QTensor) -> Result<f64, TensorError> {
    let n = q.norm();
    if n <= 1e-12 {
        return Err(TensorError::ZeroTensor(n));
    }
    let beta = SQRT6 * q.trace_cubed() / (n * n * n);
    if beta.abs() <= 1.0 {
        Ok(beta)
    } else if beta.abs() <= 1.0 + BETA_CLAMP_TOL {
        Ok(beta.clamp(-1.0, 1.0))
    } else {
        Err(TensorError::BiaxialityOvershoot(beta))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UniaxialSign {
    Positive,
    Negative,
}

/// `±√(3/2) (n⊗n - Id/3)`: the unit-norm uniaxial tensor with axis `n`.
/// `Positive` gives β = +1, `Negative` gives β = -1.
pub fn make_uniaxial(n: &Vector3<f64>, sign: UniaxialSign) -> Result<QTensor, TensorError> {
    if (n.norm() - 1.0).abs() > 1e-12 {
        return Err(TensorError::NonUnitVector(n.norm()));
    }
    let scale = match sign {
        UniaxialSign::Positive => 1.5f64.sqrt(),
        UniaxialSign::Negative => -(1.5f64.sqrt()),
    };
    let m = (n * n.transpose() - Matrix3::identity() / 3.0) * scale;
    Ok(QTensor::from_matrix(&m))
}

/// Ordered eigenvalues `λ1 ≥ λ2 ≥ λ3` with orthonormal frame `(n, m, p)`.
#[derive(Clone, Copy, Debug)]
pub struct EigenSystem {
    pub lambda: [f64; 3],
    /// Unit eigenvectors in eigenvalue order: `frame[0] = n`, `frame[2] = p`.
    pub frame: [Vector3<f64>; 3],
}

impl EigenSystem {
    pub fn n(&self) -> Vector3<f64> {
        self.frame[0]
    }
    pub fn m(&self) -> Vector3<f64> {
        self.frame[1]
    }
    pub fn p(&self) -> Vector3<f64> {
        self.frame[2]
    }

    pub fn reconstruct(&self) -> QTensor {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            m += self.frame[i] * self.frame[i].transpose() * self.lambda[i];
        }
        QTensor::from_matrix(&m)
    }
}

/// Flip the sign so the component of largest magnitude is positive.
fn fix_sign(v: Vector3<f64>) -> Vector3<f64> {
    let mut imax = 0;
    for i in 1..3 {
        if v[i].abs() > v[imax].abs() {
            imax = i;
        }
    }
    if v[imax] < 0.0 {
        -v
    } else {
        v
    }
}

/// Orthonormal completion of a unit vector: the first leg is the projection
/// of the canonical axis least aligned with `p` (its norm is at least √(2/3),
/// so the construction is well conditioned everywhere), the second is the
/// cross product. Deterministic, ties broken by axis index.
pub fn orthonormal_completion(p: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let mut k = 0;
    for i in 1..3 {
        if p[i].abs() < p[k].abs() {
            k = i;
        }
    }
    let mut v = Vector3::zeros();
    v[k] = 1.0;
    v -= p * p[k];
    let e1 = v / v.norm();
    let e2 = p.cross(&e1).normalize();
    (e1, e2)
}

/// Kernel direction of a (near) rank-2 symmetric matrix via row cross products.
fn kernel_vector(a: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r0 = Vector3::new(a[(0, 0)], a[(0, 1)], a[(0, 2)]);
    let r1 = Vector3::new(a[(1, 0)], a[(1, 1)], a[(1, 2)]);
    let r2 = Vector3::new(a[(2, 0)], a[(2, 1)], a[(2, 2)]);
    let candidates = [r0.cross(&r1), r1.cross(&r2), r2.cross(&r0)];
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.norm_squared() > best.norm_squared() {
            best = *c;
        }
    }
    let n = best.norm();
    if n < 1e-14 {
        None
    } else {
        Some(best / n)
    }
}

/// Analytic (trigonometric) spectral decomposition of a symmetric traceless
/// 3×3 tensor. Eigenvalues are sorted descending and `λ1+λ2+λ3 = 0` exactly.
///
/// When the two eigenvalues closest together are within [`DEGENERATE_GAP`],
/// the eigenspace basis starts from canonical axes projected in index order,
/// which makes the output deterministic at exact degeneracies.
pub fn eigen_decompose(q: &QTensor) -> EigenSystem {
    let identity_frame = [Vector3::x(), Vector3::y(), Vector3::z()];
    let norm2 = q.norm_squared();
    if norm2 < 1e-28 {
        return EigenSystem {
            lambda: [0.0; 3],
            frame: identity_frame,
        };
    }
    let m = q.matrix();

    // Trigonometric eigenvalues: tr = 0, so p² = |Q|²/6.
    let p = (norm2 / 6.0).sqrt();
    let r = (m.determinant() / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = 2.0 * p * phi.cos();
    let l3 = 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let l2 = -l1 - l3;
    let lambda = [l1, l2, l3];

    let g12 = l1 - l2;
    let g23 = l2 - l3;
    if g12 < DEGENERATE_GAP && g23 < DEGENERATE_GAP {
        // Fully degenerate and traceless: the tensor is numerically zero.
        return EigenSystem {
            lambda,
            frame: identity_frame,
        };
    }

    // The eigenvalue with the larger gap to its neighbor is well isolated;
    // compute its eigenvector robustly, then diagonalize the 2×2 block on the
    // complementary plane.
    let (iso_idx, iso_lam) = if g12 >= g23 { (0, l1) } else { (2, l3) };
    let v = match kernel_vector(&(m - Matrix3::identity() * iso_lam)) {
        Some(v) => fix_sign(v),
        None => {
            return EigenSystem {
                lambda,
                frame: identity_frame,
            }
        }
    };
    let (w1, w2) = orthonormal_completion(&v);
    let b11 = (w1.transpose() * m * w1)[0];
    let b22 = (w2.transpose() * m * w2)[0];
    let b12 = (w1.transpose() * m * w2)[0];
    let theta = if b12.abs() < 1e-300 && (b11 - b22).abs() < 1e-300 {
        0.0
    } else {
        0.5 * (2.0 * b12).atan2(b11 - b22)
    };
    let (sin_t, cos_t) = theta.sin_cos();
    let u1 = w1 * cos_t + w2 * sin_t;
    let u2 = -w1 * sin_t + w2 * cos_t;
    let mu1 = (u1.transpose() * m * u1)[0];
    let mu2 = (u2.transpose() * m * u2)[0];
    let (hi, lo) = if mu1 >= mu2 { (u1, u2) } else { (u2, u1) };
    let (hi, lo) = (fix_sign(hi), fix_sign(lo));

    let frame = match iso_idx {
        0 => [v, hi, lo],
        _ => [hi, lo, v],
    };
    EigenSystem { lambda, frame }
}

/// Element of `𝒰_p = {U symmetric traceless : U p = 0}` stored as two
/// coefficients over the orthonormal basis `E1 = (e1⊗e1 - e2⊗e2)/√2`,
/// `E2 = (e1⊗e2 + e2⊗e1)/√2`, where `(e1, e2)` completes `p`.
#[derive(Clone, Copy, Debug)]
pub struct TangentTensor {
    pub u: [f64; 2],
    pub p: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

impl TangentTensor {
    /// Builds the element `u1 E1 + u2 E2` over the canonical completion of `p`.
    pub fn new(u: [f64; 2], p: Vector3<f64>) -> Result<Self, TensorError> {
        if (p.norm() - 1.0).abs() > 1e-12 {
            return Err(TensorError::NonUnitVector(p.norm()));
        }
        let (e1, e2) = orthonormal_completion(&p);
        Ok(TangentTensor { u, p, e1, e2 })
    }

    pub fn basis_matrices(&self) -> (Matrix3<f64>, Matrix3<f64>) {
        let m1 = (self.e1 * self.e1.transpose() - self.e2 * self.e2.transpose()) * FRAC_1_SQRT_2;
        let m2 = (self.e1 * self.e2.transpose() + self.e2 * self.e1.transpose()) * FRAC_1_SQRT_2;
        (m1, m2)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let (m1, m2) = self.basis_matrices();
        m1 * self.u[0] + m2 * self.u[1]
    }

    pub fn tensor(&self) -> QTensor {
        QTensor::from_matrix(&self.matrix())
    }

    /// Coefficient norm; equals the Frobenius norm of the matrix.
    pub fn norm(&self) -> f64 {
        (self.u[0] * self.u[0] + self.u[1] * self.u[1]).sqrt()
    }
}

/// Orthogonal projection of a symmetric matrix onto `𝒰_p`:
///
/// `Y = V - V pp - pp V + (V:pp) pp - ½ (V:(Id-pp)) (Id-pp)`
///
/// The last term removes the trace, so `Y p = 0` and `tr Y = 0`, and `V - Y`
/// is Frobenius-orthogonal to every element of `𝒰_p`.
pub fn project_to_up(v: &Matrix3<f64>, p: &Vector3<f64>) -> Result<TangentTensor, TensorError> {
    let asym = (v - v.transpose()).norm();
    if asym > 1e-10 {
        return Err(TensorError::NonSymmetric(asym));
    }
    if (p.norm() - 1.0).abs() > 1e-12 {
        return Err(TensorError::NonUnitVector(p.norm()));
    }
    let pp = p * p.transpose();
    let id = Matrix3::identity();
    let vpp = (v * pp).trace();
    let vperp = (v * (id - pp)).trace();
    let y = v - v * pp - pp * v + pp * vpp - (id - pp) * (0.5 * vperp);

    let t = TangentTensor::new([0.0, 0.0], *p)?;
    let (m1, m2) = t.basis_matrices();
    let u1 = (y.transpose() * m1).trace();
    let u2 = (y.transpose() * m2).trace();
    Ok(TangentTensor { u: [u1, u2], ..t })
}

/// Sign-invariant eigenframe distance: `max over axes of (1 - |⟨a_i, b_i⟩|)`.
/// Zero exactly when the frames agree up to per-axis sign flips.
pub fn frame_distance(a: &EigenSystem, b: &EigenSystem) -> f64 {
    (0..3)
        .map(|i| 1.0 - a.frame[i].dot(&b.frame[i]).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::SQRT6_OVER_6;
    use crate::testutil::{random_qtensor as random_q, random_unit_vector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_reconstruction_is_symmetric_traceless_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = random_q(&mut rng);
            let m = q.matrix();
            assert!((m - m.transpose()).norm() == 0.0);
            assert!(m.trace().abs() < 1e-14);
            assert!((m.norm() - q.norm()).abs() < 1e-14);
            let back = QTensor::from_matrix(&m);
            for a in 0..5 {
                assert!((back.c[a] - q.c[a]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn biaxiality_of_uniaxial_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = random_unit_vector(&mut rng);
            let qp = make_uniaxial(&n, UniaxialSign::Positive).unwrap();
            let qm = make_uniaxial(&n, UniaxialSign::Negative).unwrap();
            assert!((qp.norm() - 1.0).abs() < 1e-12);
            assert!((qm.norm() - 1.0).abs() < 1e-12);
            assert!((biaxiality(&qp).unwrap() - 1.0).abs() < 1e-12);
            assert!((biaxiality(&qm).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn biaxiality_examples() {
        // diag(1/√2, 0, -1/√2) has tr(Q³) = 0.
        let q = QTensor::from_matrix(&Matrix3::from_diagonal(&Vector3::new(
            FRAC_1_SQRT_2,
            0.0,
            -FRAC_1_SQRT_2,
        )));
        assert!(biaxiality(&q).unwrap().abs() < 1e-14);
        // Eigenvalues (√6/6, √6/6, -√6/3) give β = -1.
        let q = QTensor::from_matrix(&Matrix3::from_diagonal(&Vector3::new(
            SQRT6_OVER_6,
            SQRT6_OVER_6,
            -crate::consts::SQRT6_OVER_3,
        )));
        assert!((biaxiality(&q).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn biaxiality_rejects_zero_tensor() {
        assert_eq!(
            biaxiality(&QTensor::ZERO),
            Err(TensorError::ZeroTensor(0.0))
        );
    }

    #[test]
    fn make_uniaxial_examples() {
        let qp = make_uniaxial(&Vector3::z(), UniaxialSign::Positive).unwrap();
        let expect = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 2.0)) / SQRT6;
        assert!((qp.matrix() - expect).norm() < 1e-14);
        let qm = make_uniaxial(&Vector3::z(), UniaxialSign::Negative).unwrap();
        assert!((qm.matrix() + expect).norm() < 1e-14);
        assert!(make_uniaxial(&(Vector3::z() * 1.1), UniaxialSign::Positive).is_err());
    }

    #[test]
    fn eigen_decompose_diagonal() {
        let q =
            QTensor::from_matrix(&(Matrix3::from_diagonal(&Vector3::new(2.0, -1.0, -1.0)) / SQRT6));
        let e = eigen_decompose(&q);
        assert!((e.lambda[0] - 2.0 / SQRT6).abs() < 1e-14);
        assert!((e.lambda[1] + 1.0 / SQRT6).abs() < 1e-14);
        assert!((e.lambda[2] + 1.0 / SQRT6).abs() < 1e-14);
        assert!((e.n().dot(&Vector3::x()).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_decompose_zero_returns_identity_frame() {
        let e = eigen_decompose(&QTensor::ZERO);
        assert_eq!(e.lambda, [0.0; 3]);
        assert_eq!(e.frame[0], Vector3::x());
        assert_eq!(e.frame[1], Vector3::y());
        assert_eq!(e.frame[2], Vector3::z());
    }

    #[test]
    fn eigen_decompose_random_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let q = random_q(&mut rng);
            let e = eigen_decompose(&q);
            assert!(e.lambda[0] >= e.lambda[1] && e.lambda[1] >= e.lambda[2]);
            assert!((e.lambda[0] + e.lambda[1] + e.lambda[2]).abs() < 1e-12);
            for i in 0..3 {
                for j in 0..3 {
                    let d = e.frame[i].dot(&e.frame[j]);
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((d - expect).abs() < 1e-12, "frame not orthonormal: {d}");
                }
            }
            let back = e.reconstruct();
            assert!(
                (back - q).norm() < 1e-10,
                "reconstruction error {}",
                (back - q).norm()
            );
        }
    }

    #[test]
    fn eigen_route_beta_matches_trace_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..2000 {
            let q = match random_q(&mut rng).normalized() {
                Ok(q) => q,
                Err(_) => continue,
            };
            let e = eigen_decompose(&q);
            let beta_eig = SQRT6 * e.lambda.iter().map(|l| l * l * l).sum::<f64>();
            let beta_tr = biaxiality(&q).unwrap();
            assert!((beta_eig - beta_tr).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let q = random_q(&mut rng);
            if q.norm() < 1e-3 {
                continue;
            }
            let axis = random_unit_vector(&mut rng);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let rot =
                nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let rm = rot.matrix() * q.matrix() * rot.matrix().transpose();
            let qr = QTensor::from_matrix(&rm);
            assert!((biaxiality(&qr).unwrap() - biaxiality(&q).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_frames_are_deterministic() {
        let q = make_uniaxial(&Vector3::z(), UniaxialSign::Negative).unwrap();
        let a = eigen_decompose(&q);
        let b = eigen_decompose(&q);
        for i in 0..3 {
            assert_eq!(a.frame[i], b.frame[i]);
        }
        // λ1 = λ2 here; the degenerate plane basis comes from canonical axes.
        assert!((a.n().dot(&Vector3::x()).abs() - 1.0).abs() < 1e-12);
        assert!((a.m().dot(&Vector3::y()).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn project_to_up_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..2000 {
            let p = random_unit_vector(&mut rng);
            let q = random_q(&mut rng);
            let v = q.matrix() + Matrix3::identity() * rng.gen_range(-0.5..0.5);
            let y = project_to_up(&v, &p).unwrap();
            let ym = y.matrix();
            assert!((ym * p).norm() < 1e-12);
            assert!(ym.trace().abs() < 1e-12);
            // Idempotency.
            let y2 = project_to_up(&ym, &p).unwrap();
            assert!((y2.matrix() - ym).norm() < 1e-12);
            // Residual orthogonal to the basis of 𝒰_p.
            let (m1, m2) = y.basis_matrices();
            let res = v - ym;
            assert!((res.transpose() * m1).trace().abs() < 1e-12);
            assert!((res.transpose() * m2).trace().abs() < 1e-12);
            // Isometry of the coefficient map.
            assert!((y.norm() - ym.norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn project_to_up_examples() {
        let p = Vector3::z();
        // V = p⊗p projects to zero.
        let y = project_to_up(&(p * p.transpose()), &p).unwrap();
        assert!(y.matrix().norm() < 1e-14);
        // V already in 𝒰_p is unchanged.
        let t = TangentTensor::new([0.3, -0.7], p).unwrap();
        let y = project_to_up(&t.matrix(), &p).unwrap();
        assert!((y.matrix() - t.matrix()).norm() < 1e-12);
        // Errors.
        let asym = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            project_to_up(&asym, &p),
            Err(TensorError::NonSymmetric(_))
        ));
        assert!(matches!(
            project_to_up(&Matrix3::identity(), &(p * 2.0)),
            Err(TensorError::NonUnitVector(_))
        ));
    }

    #[test]
    fn frame_distance_cases() {
        let q = QTensor::new([0.9, 0.1, -0.2, 0.3, 0.05]);
        let a = eigen_decompose(&q);
        assert_eq!(frame_distance(&a, &a), 0.0);
        let flipped = EigenSystem {
            lambda: a.lambda,
            frame: [-a.frame[0], a.frame[1], -a.frame[2]],
        };
        assert_eq!(frame_distance(&a, &flipped), 0.0);
        // Rotation by π/2 about p swaps the in-plane axes.
        let b = EigenSystem {
            lambda: a.lambda,
            frame: [a.frame[1], a.frame[0], a.frame[2]],
        };
        assert!((frame_distance(&a, &b) - 1.0).abs() < 1e-12);
    }
}
