//! Exact eigenvalue algebra near negative-uniaxial states and the local
//! decomposition
//!
//! ```text
//! Q = -(√6/2)(p⊗p - Id/3) + U + R,   U = s (n⊗n - m⊗m)
//! ```
//!
//! With δ = λ3 + √6/3, s = λ1 - √6/6 and r = λ2 - √6/6, the unit-norm and
//! trace constraints reduce to
//!
//! ```text
//! s + r + δ = 0,
//! s² + r² + δ² + (√6/3)(s + r - 2δ) = 0,
//! ```
//!
//! which this module solves in closed form in both directions. Asymptotic
//! series appear only in tests as order checks.

use crate::consts::{SQRT6, SQRT6_OVER_2, SQRT6_OVER_3, SQRT6_OVER_6};
use crate::qtensor::{self, QTensor, TangentTensor};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Minimal λ2 - λ3 gap for which the λ3 eigenvector is considered meaningful.
pub const EIGENVALUE_GAP_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("argument {0} outside the valid range [0, √6/6]")]
    OutOfRange(f64),
    #[error("tensor norm {0} is not 1 within tolerance")]
    NotUnitNorm(f64),
    #[error("eigenvalue gap λ2-λ3 = {0:.3e} too small to isolate p")]
    EigenvalueGapTooSmall(f64),
    #[error("vectors are not orthogonal: |n·p| = {0:.3e}")]
    NonOrthogonal(f64),
    #[error("vector norm {0} is not 1 within tolerance")]
    NonUnitVector(f64),
}

/// Deviations of the ordered eigenvalues from the negative-uniaxial values:
/// `s = λ1 - √6/6 ≥ 0`, `r = λ2 - √6/6 ≤ 0`, `δ = λ3 + √6/3 ≥ 0`.
#[derive(Clone, Copy, Debug)]
pub struct SplitEigenvalues {
    pub s: f64,
    pub r: f64,
    pub delta: f64,
}

/// Solves the constraint system for `(s, r)` given `δ`:
///
/// `s = (-δ + √(2√6 δ - 3δ²))/2`, `r = (-δ - √(2√6 δ - 3δ²))/2`.
pub fn split_from_delta(delta: f64) -> Result<SplitEigenvalues, PerturbError> {
    if !(0.0..=SQRT6_OVER_6 + 1e-12).contains(&delta) {
        return Err(PerturbError::OutOfRange(delta));
    }
    let disc = 2.0 * SQRT6 * delta - 3.0 * delta * delta;
    if disc < 0.0 {
        return Err(PerturbError::OutOfRange(delta));
    }
    let root = disc.sqrt();
    Ok(SplitEigenvalues {
        s: (-delta + root) / 2.0,
        r: (-delta - root) / 2.0,
        delta,
    })
}

/// Inverse of [`split_from_delta`] on the `s` component:
///
/// `δ = ((2√6 - 4s) - √(24 - 16√6 s - 48 s²))/8`, valid for `0 ≤ s ≤ √6/6`,
/// evaluated in the rationalized small-root form `4s²/((√6-2s) + √disc)` to
/// avoid cancellation at small `s`.
pub fn delta_from_s(s: f64) -> Result<f64, PerturbError> {
    if !(0.0..=SQRT6_OVER_6 + 1e-12).contains(&s) {
        return Err(PerturbError::OutOfRange(s));
    }
    let disc = 6.0 - 4.0 * SQRT6 * s - 12.0 * s * s;
    if disc < -1e-12 {
        return Err(PerturbError::OutOfRange(s));
    }
    Ok(4.0 * s * s / ((SQRT6 - 2.0 * s) + disc.max(0.0).sqrt()))
}

/// Cubic-order remainder of the eigenvalue relation: `τ(s) = δ(s) - (√6/3) s²`.
pub fn tau(s: f64) -> Result<f64, PerturbError> {
    Ok(delta_from_s(s)? - SQRT6_OVER_3 * s * s)
}

/// Local decomposition of a unit-norm tensor near a negative-uniaxial state.
#[derive(Clone, Debug)]
pub struct Decomposition {
    /// λ3 eigenvector, sign-fixed so its first nonzero component is positive.
    pub p: Vector3<f64>,
    /// The traceless part annihilating `p`: `U = s (n⊗n - m⊗m)`.
    pub u: TangentTensor,
    /// Remainder `R = Q + (√6/2)(p⊗p - Id/3) - U`, of order `O(s²)`.
    pub r: QTensor,
    pub s: f64,
    pub delta: f64,
    /// Leading eigenvector (λ1).
    pub n: Vector3<f64>,
    pub m: Vector3<f64>,
}

fn first_nonzero_positive(v: Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        if v[i].abs() > 1e-12 {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Splits `Q` into the negative-uniaxial leading term, the tangent part `U`
/// and the remainder `R`. Requires `|Q| = 1` within 1e-8 and an isolated λ3.
pub fn decompose(q: &QTensor) -> Result<Decomposition, PerturbError> {
    let norm = q.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(PerturbError::NotUnitNorm(norm));
    }
    let eig = qtensor::eigen_decompose(q);
    let gap = eig.lambda[1] - eig.lambda[2];
    if gap < EIGENVALUE_GAP_TOL {
        return Err(PerturbError::EigenvalueGapTooSmall(gap));
    }
    let p = first_nonzero_positive(eig.p());
    let n = eig.n();
    let m = eig.m();
    let s = eig.lambda[0] - SQRT6_OVER_6;
    let delta = eig.lambda[2] + SQRT6_OVER_3;
    let u_mat = (n * n.transpose() - m * m.transpose()) * s;
    let u = qtensor::project_to_up(&u_mat, &p).expect("U lies in 𝒰_p by construction");
    let leading =
        QTensor::from_matrix(&((p * p.transpose() - Matrix3::identity() / 3.0) * -SQRT6_OVER_2));
    let r = *q - leading - QTensor::from_matrix(&u_mat);
    Ok(Decomposition {
        p,
        u,
        r,
        s,
        delta,
        n,
        m,
    })
}

/// Assembles the unit-norm tensor with eigenframe `(n, m = p×n, p)` and
/// eigenvalues `λ1 = √6/6 + s`, `λ2 = √6/6 - s - δ(s)`, `λ3 = -√6/3 + δ(s)`.
pub fn reconstruct(p: &Vector3<f64>, s: f64, n: &Vector3<f64>) -> Result<QTensor, PerturbError> {
    if (p.norm() - 1.0).abs() > 1e-12 {
        return Err(PerturbError::NonUnitVector(p.norm()));
    }
    if (n.norm() - 1.0).abs() > 1e-12 {
        return Err(PerturbError::NonUnitVector(n.norm()));
    }
    let ortho = n.dot(p).abs();
    if ortho > 1e-12 {
        return Err(PerturbError::NonOrthogonal(ortho));
    }
    let delta = delta_from_s(s)?;
    let m = p.cross(n);
    let l1 = SQRT6_OVER_6 + s;
    let l2 = SQRT6_OVER_6 - s - delta;
    let l3 = -SQRT6_OVER_3 + delta;
    let mat = n * n.transpose() * l1 + m * m.transpose() * l2 + p * p.transpose() * l3;
    Ok(QTensor::from_matrix(&mat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::POW_3_2_QUARTER;
    use crate::qtensor::{biaxiality, eigen_decompose, make_uniaxial, UniaxialSign};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_constraint_identities_hold_across_range() {
        for i in 0..10_000 {
            let delta = SQRT6_OVER_6 * (i as f64) / 9_999.0;
            let sp = split_from_delta(delta).unwrap();
            assert!(sp.s >= 0.0 && sp.r <= 1e-15);
            assert!((sp.s + sp.r + sp.delta).abs() < 1e-13);
            let c2 = sp.s * sp.s
                + sp.r * sp.r
                + sp.delta * sp.delta
                + SQRT6_OVER_3 * (sp.s + sp.r - 2.0 * sp.delta);
            assert!(c2.abs() < 1e-12, "constraint violated: {c2}");
        }
    }

    #[test]
    fn split_examples() {
        let sp = split_from_delta(0.0).unwrap();
        assert_eq!((sp.s, sp.r), (0.0, 0.0));

        // Oracle: 2D Newton on the constraint system from (0.1, -0.1).
        let delta = 0.01;
        let (mut s, mut r) = (0.1, -0.1);
        for _ in 0..60 {
            let f1 = s + r + delta;
            let f2 = s * s + r * r + delta * delta + SQRT6_OVER_3 * (s + r - 2.0 * delta);
            // Jacobian [[1, 1], [2s + √6/3, 2r + √6/3]].
            let (a, b) = (1.0, 1.0);
            let (c, d) = (2.0 * s + SQRT6_OVER_3, 2.0 * r + SQRT6_OVER_3);
            let det = a * d - b * c;
            s -= (d * f1 - b * f2) / det;
            r -= (-c * f1 + a * f2) / det;
        }
        let sp = split_from_delta(delta).unwrap();
        assert!(
            (sp.s - s).abs() < 1e-12,
            "newton {s} vs closed form {}",
            sp.s
        );
        assert!((sp.r - r).abs() < 1e-12);
        assert!((sp.s - 0.105_329).abs() < 1e-6);
        // Series check: s ≈ (3/2)^(1/4) √δ - δ/2.
        assert!((sp.s - (POW_3_2_QUARTER * delta.sqrt() - delta / 2.0)).abs() < 1e-3);

        let sp = split_from_delta(1e-6).unwrap();
        assert!((sp.s - (POW_3_2_QUARTER * 1e-3 - 0.5e-6)).abs() < 1e-9);

        assert!(split_from_delta(-1e-3).is_err());
        assert!(split_from_delta(0.5).is_err());
    }

    #[test]
    fn delta_from_s_round_trip_and_order() {
        assert_eq!(delta_from_s(0.0).unwrap(), 0.0);
        for i in 0..10_000 {
            let s = SQRT6_OVER_6 * (i as f64) / 9_999.0;
            let delta = delta_from_s(s).unwrap();
            let sp = split_from_delta(delta).unwrap();
            assert!((sp.s - s).abs() < 1e-12, "round trip failed at s={s}");
        }
        // δ = (√6/3) s² + O(s³).
        let delta = delta_from_s(0.01).unwrap();
        assert!((delta - SQRT6_OVER_3 * 1e-4).abs() < 2e-6);
        // Round trip of the worked example above.
        let s = split_from_delta(0.01).unwrap().s;
        assert!((delta_from_s(s).unwrap() - 0.01).abs() < 1e-10);
        assert!(delta_from_s(0.45).is_err());
    }

    #[test]
    fn tau_is_cubic_order() {
        assert_eq!(tau(0.0).unwrap(), 0.0);
        let mut max_ratio: f64 = 0.0;
        let mut s = 1e-4;
        while s <= 0.1 {
            let t = tau(s).unwrap().abs();
            max_ratio = max_ratio.max(t / (s * s * s));
            s *= 1.3;
        }
        assert!(max_ratio.is_finite() && max_ratio > 0.0);
        assert!(tau(1e-2).unwrap().abs() <= 10.0 * 1e-6);

        // Log-log slope of |τ| across a dyadic sweep.
        let pts: Vec<(f64, f64)> = [1e-3f64, 2e-3, 4e-3]
            .iter()
            .map(|&s| (s.ln(), tau(s).unwrap().abs().ln()))
            .collect();
        let slope = (pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
        assert!(slope >= 2.9, "tau order slope {slope}");
    }

    #[test]
    fn decompose_negative_uniaxial_is_trivial() {
        let q = make_uniaxial(&Vector3::z(), UniaxialSign::Negative).unwrap();
        let d = decompose(&q).unwrap();
        assert!(d.s.abs() < 1e-14);
        assert!(d.u.norm() < 1e-14);
        assert!(d.r.norm() < 1e-13);
        assert!((d.p - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn decompose_reconstruct_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let p = crate::testutil::random_unit_vector(&mut rng);
            let (e1, e2) = qtensor::orthonormal_completion(&p);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let n = e1 * phi.cos() + e2 * phi.sin();
            let s = rng.gen_range(0.0..0.3);
            let q = reconstruct(&p, s, &n).unwrap();
            assert!((q.norm() - 1.0).abs() < 1e-12);
            let d = decompose(&q).unwrap();
            assert!((d.s - s).abs() < 1e-9);
            assert!((d.p.dot(&p).abs() - 1.0).abs() < 1e-9);
            if s > 1e-3 {
                assert!((d.n.dot(&n).abs() - 1.0).abs() < 1e-8);
            }
            // Reassembly is exact by definition of R.
            let leading = QTensor::from_matrix(
                &((d.p * d.p.transpose() - Matrix3::identity() / 3.0) * -SQRT6_OVER_2),
            );
            let back = leading + d.u.tensor() + d.r;
            assert!((back - q).norm() < 1e-10);
        }
    }

    #[test]
    fn remainder_is_quadratically_small() {
        let p = Vector3::z();
        let n = Vector3::x();
        for &s in &[0.01, 0.05, 0.1, 0.2] {
            let q = reconstruct(&p, s, &n).unwrap();
            let d = decompose(&q).unwrap();
            assert!(
                d.r.norm() <= 3.0 * s * s,
                "|R| = {} exceeds 3 s² at s = {s}",
                d.r.norm()
            );
        }
    }

    #[test]
    fn s_is_u_norm_over_sqrt2() {
        let p = Vector3::z();
        let n = Vector3::x();
        for &s in &[0.02, 0.1, 0.25] {
            let q = reconstruct(&p, s, &n).unwrap();
            let d = decompose(&q).unwrap();
            assert!((d.u.norm() / std::f64::consts::SQRT_2 - s).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_examples() {
        let p = Vector3::z();
        let n = Vector3::x();
        let q0 = reconstruct(&p, 0.0, &n).unwrap();
        let neg = make_uniaxial(&p, UniaxialSign::Negative).unwrap();
        assert!((q0 - neg).norm() < 1e-14);

        // β = -1 + 9 s² + O(s³).
        let q = reconstruct(&p, 0.1, &n).unwrap();
        let beta = biaxiality(&q).unwrap();
        assert!((beta - (-1.0 + 9.0 * 0.01)).abs() < 1e-2);

        // Eigenvalue bounds λ1 ≥ λ2 ≥ λ3, λ2 ≤ √6/6, λ3 ≥ -√6/3.
        let mut s = 0.0;
        while s <= SQRT6_OVER_6 {
            let q = reconstruct(&p, s, &n).unwrap();
            let e = eigen_decompose(&q);
            assert!(e.lambda[0] >= e.lambda[1] - 1e-14);
            assert!(e.lambda[1] >= e.lambda[2] - 1e-14);
            assert!(e.lambda[1] <= SQRT6_OVER_6 + 1e-12);
            assert!(e.lambda[2] >= -SQRT6_OVER_3 - 1e-12);
            s += 0.01;
        }

        assert!(matches!(
            reconstruct(&p, 0.1, &Vector3::z()),
            Err(PerturbError::NonOrthogonal(_))
        ));
        assert!(matches!(
            reconstruct(&p, -0.1, &n),
            Err(PerturbError::OutOfRange(_))
        ));
    }

    #[test]
    fn decompose_rejects_bad_input() {
        let q = make_uniaxial(&Vector3::z(), UniaxialSign::Negative).unwrap() * 1.1;
        assert!(matches!(decompose(&q), Err(PerturbError::NotUnitNorm(_))));
        // Positive uniaxial: λ2 = λ3, gap is zero.
        let q = make_uniaxial(&Vector3::z(), UniaxialSign::Positive).unwrap();
        assert!(matches!(
            decompose(&q),
            Err(PerturbError::EigenvalueGapTooSmall(_))
        ));
    }
}
