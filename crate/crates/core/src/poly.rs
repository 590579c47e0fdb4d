//! Homogeneous polynomials in three variables over the monomial basis:
//! evaluation, differentiation, products, exact integrals over the unit ball,
//! and matrix- and tangent-space-valued variants.

use crate::qtensor::{self, TensorError};
use nalgebra::{Matrix3, Vector3};

/// Monomial exponents of total degree `k`, in a fixed graded order.
pub fn monomial_exponents(degree: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(monomial_count(degree));
    for a in (0..=degree).rev() {
        for b in (0..=degree - a).rev() {
            out.push([a, b, degree - a - b]);
        }
    }
    out
}

pub fn monomial_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

fn monomial_index(e: [usize; 3], degree: usize) -> usize {
    monomial_exponents(degree)
        .iter()
        .position(|m| *m == e)
        .expect("exponent of the stated degree")
}

fn double_factorial(n: i64) -> f64 {
    let mut v = 1.0;
    let mut k = n;
    while k > 1 {
        v *= k as f64;
        k -= 2;
    }
    v
}

/// Exact `∫_{B₁} x^a y^b z^c dV`; zero unless all exponents are even.
pub fn monomial_ball_integral(e: [usize; 3]) -> f64 {
    if e.iter().any(|&k| k % 2 == 1) {
        return 0.0;
    }
    let n = (e[0] + e[1] + e[2]) as i64;
    let num = double_factorial(e[0] as i64 - 1)
        * double_factorial(e[1] as i64 - 1)
        * double_factorial(e[2] as i64 - 1);
    4.0 * std::f64::consts::PI / (n + 3) as f64 * num / double_factorial(n + 1)
}

/// Homogeneous polynomial of fixed degree over [`monomial_exponents`].
#[derive(Clone, Debug, PartialEq)]
pub struct HomoPoly {
    degree: usize,
    coeffs: Vec<f64>,
}

impl HomoPoly {
    pub fn new(degree: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), monomial_count(degree));
        HomoPoly { degree, coeffs }
    }

    pub fn zero(degree: usize) -> Self {
        HomoPoly {
            degree,
            coeffs: vec![0.0; monomial_count(degree)],
        }
    }

    /// Polynomial with a single monomial term.
    pub fn monomial(e: [usize; 3], coeff: f64) -> Self {
        let degree = e[0] + e[1] + e[2];
        let mut p = HomoPoly::zero(degree);
        p.coeffs[monomial_index(e, degree)] = coeff;
        p
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        monomial_exponents(self.degree)
            .iter()
            .zip(&self.coeffs)
            .map(|(e, c)| {
                c * x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32)
            })
            .sum()
    }

    pub fn scale(&self, factor: f64) -> HomoPoly {
        HomoPoly {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn add(&self, other: &HomoPoly) -> HomoPoly {
        assert_eq!(self.degree, other.degree);
        HomoPoly {
            degree: self.degree,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Partial derivative along one axis; degree drops by one
    /// (degree 0 differentiates to the zero polynomial of degree 0).
    pub fn partial(&self, axis: usize) -> HomoPoly {
        if self.degree == 0 {
            return HomoPoly::zero(0);
        }
        let mut out = HomoPoly::zero(self.degree - 1);
        for (e, c) in monomial_exponents(self.degree).iter().zip(&self.coeffs) {
            if e[axis] == 0 || *c == 0.0 {
                continue;
            }
            let mut de = *e;
            de[axis] -= 1;
            out.coeffs[monomial_index(de, self.degree - 1)] += c * e[axis] as f64;
        }
        out
    }

    pub fn laplacian(&self) -> HomoPoly {
        if self.degree < 2 {
            return HomoPoly::zero(0);
        }
        let mut out = HomoPoly::zero(self.degree - 2);
        for axis in 0..3 {
            out = out.add(&self.partial(axis).partial(axis));
        }
        out
    }

    pub fn mul(&self, other: &HomoPoly) -> HomoPoly {
        let degree = self.degree + other.degree;
        let mut out = HomoPoly::zero(degree);
        let se = monomial_exponents(self.degree);
        let oe = monomial_exponents(other.degree);
        for (ea, ca) in se.iter().zip(&self.coeffs) {
            if *ca == 0.0 {
                continue;
            }
            for (eb, cb) in oe.iter().zip(&other.coeffs) {
                if *cb == 0.0 {
                    continue;
                }
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                out.coeffs[monomial_index(e, degree)] += ca * cb;
            }
        }
        out
    }

    pub fn ball_integral(&self) -> f64 {
        monomial_exponents(self.degree)
            .iter()
            .zip(&self.coeffs)
            .map(|(e, c)| c * monomial_ball_integral(*e))
            .sum()
    }

    /// `∫_{B₁} |∇u|² dV`, exact.
    pub fn dirichlet_ball_integral(&self) -> f64 {
        (0..3)
            .map(|axis| {
                let d = self.partial(axis);
                d.mul(&d).ball_integral()
            })
            .sum()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Symmetric-matrix-valued homogeneous polynomial (one 3×3 coefficient per
/// monomial).
#[derive(Clone, Debug)]
pub struct MatrixPoly {
    degree: usize,
    terms: Vec<Matrix3<f64>>,
}

impl MatrixPoly {
    pub fn zero(degree: usize) -> Self {
        MatrixPoly {
            degree,
            terms: vec![Matrix3::zeros(); monomial_count(degree)],
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn add_term(&mut self, e: [usize; 3], m: Matrix3<f64>) {
        let idx = monomial_index(e, self.degree);
        self.terms[idx] += m;
    }

    pub fn term(&self, idx: usize) -> &Matrix3<f64> {
        &self.terms[idx]
    }

    pub fn eval(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        let mut out = Matrix3::zeros();
        for (e, m) in monomial_exponents(self.degree).iter().zip(&self.terms) {
            let mono = x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32);
            out += m * mono;
        }
        out
    }

    /// Scalar polynomial `x ↦ V(x) : W` for a fixed matrix `W`.
    pub fn contract(&self, w: &Matrix3<f64>) -> HomoPoly {
        HomoPoly {
            degree: self.degree,
            coeffs: self
                .terms
                .iter()
                .map(|m| (m.transpose() * w).trace())
                .collect(),
        }
    }

    /// Coefficient-wise orthogonal projection onto `𝒰_{p0}`.
    pub fn project_to_up(&self, p0: &Vector3<f64>) -> Result<UPolyPair, TensorError> {
        let probe = qtensor::TangentTensor::new([0.0, 0.0], *p0)?;
        let mut u1 = HomoPoly::zero(self.degree);
        let mut u2 = HomoPoly::zero(self.degree);
        for (idx, m) in self.terms.iter().enumerate() {
            let y = qtensor::project_to_up(m, p0)?;
            u1.coeffs[idx] = y.u[0];
            u2.coeffs[idx] = y.u[1];
        }
        Ok(UPolyPair {
            p0: *p0,
            e1: probe.e1,
            e2: probe.e2,
            u1,
            u2,
        })
    }

    pub fn max_term_norm(&self) -> f64 {
        self.terms.iter().fold(0.0, |m, t| m.max(t.norm()))
    }
}

/// `𝒰_{p0}`-valued homogeneous polynomial: two scalar polynomials over the
/// tangent basis `(E1, E2)` attached to `p0`.
#[derive(Clone, Debug)]
pub struct UPolyPair {
    pub p0: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub u1: HomoPoly,
    pub u2: HomoPoly,
}

impl UPolyPair {
    pub fn new(p0: Vector3<f64>, u1: HomoPoly, u2: HomoPoly) -> Result<Self, TensorError> {
        assert_eq!(u1.degree(), u2.degree());
        let probe = qtensor::TangentTensor::new([0.0, 0.0], p0)?;
        Ok(UPolyPair {
            p0,
            e1: probe.e1,
            e2: probe.e2,
            u1,
            u2,
        })
    }

    pub fn degree(&self) -> usize {
        self.u1.degree()
    }

    pub fn eval(&self, x: &Vector3<f64>) -> qtensor::TangentTensor {
        qtensor::TangentTensor {
            u: [self.u1.eval(x), self.u2.eval(x)],
            p: self.p0,
            e1: self.e1,
            e2: self.e2,
        }
    }
}
