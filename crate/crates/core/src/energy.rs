//! Discrete energy functionals and their gradients on masked grids:
//! the unit-norm-constrained energy, the relaxed two-parameter energy with a
//! norm penalty, the rescaled blow-up energy split `E1 + E2 + E3`, and the
//! tangent-map energy with its Euler-Lagrange residual.
//!
//! All quadrature is the node-centered midpoint rule with cell volume `h³`
//! over interior nodes. Reductions run over a fixed number of node slabs and
//! are combined in slab order, so results do not depend on the thread count.

use crate::consts::{INV_3_SQRT6, SQRT6};
use crate::field::{GridSpec, QField, Role, ScalarField};
use crate::perturb::{self, PerturbError};
use crate::poly::{MatrixPoly, UPolyPair};
use crate::qtensor::{biaxiality, QTensor};
use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("field norm deviates from 1 by {0:.3e}")]
    NotUnitNorm(f64),
    #[error("blow-up scale {0} too small for the grid or too close to the boundary")]
    ScaleTooSmall(f64),
    #[error("decomposition failed inside the blow-up ball: {0}")]
    DecompositionFailure(#[from] PerturbError),
    #[error("polynomial degrees are inconsistent: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error("tangent polynomials refer to different reference directions")]
    BasisMismatch,
}

/// Totals of the constrained energy; `blowup` is populated by
/// [`blowup_energy_parts`] only.
#[derive(Clone, Copy, Debug)]
pub struct EnergyBreakdown {
    /// `½ ∫ |∇Q|²`
    pub dirichlet: f64,
    /// `∫ (1 - β)/(3√6)`
    pub potential: f64,
    pub total: f64,
    pub blowup: Option<BlowupParts>,
}

/// Rescaled blow-up energies: `e1 = ∫ ½|∇U_r|²`, `e2` the eigenvector-source
/// cross term, `e3` the remainder `total - e1 - e2`.
#[derive(Clone, Copy, Debug)]
pub struct BlowupParts {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
}

/// Material constants of the quartic bulk potential and elastic constant,
/// with the derived deep-minimum amplitude and reduced couplings.
#[derive(Clone, Copy, Debug)]
pub struct LdGParameters {
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
    pub l: f64,
}

impl LdGParameters {
    pub fn new(a2: f64, b2: f64, c2: f64, l: f64) -> Option<Self> {
        let p = LdGParameters { a2, b2, c2, l };
        (a2 > 0.0 && b2 > 0.0 && c2 > 0.0 && l > 0.0 && p.s_plus() > 0.0).then_some(p)
    }

    /// `s₊ = (b² + √(b⁴ + 24 a² c²)) / (4c²)`
    pub fn s_plus(&self) -> f64 {
        (self.b2 + (self.b2 * self.b2 + 24.0 * self.a2 * self.c2).sqrt()) / (4.0 * self.c2)
    }

    /// `λ = √(2/3) b² s₊ / L`
    pub fn lambda(&self) -> f64 {
        (2.0f64 / 3.0).sqrt() * self.b2 * self.s_plus() / self.l
    }

    /// `μ = a² / L`
    pub fn mu(&self) -> f64 {
        self.a2 / self.l
    }
}

/// Bulk biaxiality/norm potential `W(Q) = |Q|⁴/(4√6) - tr(Q³)/3 + 1/(12√6)`.
/// On `|Q| = 1` it reduces to `(1 - β)/(3√6)`.
pub fn bulk_w(q: &QTensor) -> f64 {
    let n2 = q.norm_squared();
    n2 * n2 / (4.0 * SQRT6) - q.trace_cubed() / 3.0 + 1.0 / (12.0 * SQRT6)
}

const SLAB_COUNT: usize = 64;

/// Deterministic two-component reduction over all nodes: per-slab sums are
/// sequential and slabs are combined in index order.
fn slab_sum2(count: usize, f: impl Fn(usize) -> (f64, f64) + Sync) -> (f64, f64) {
    let slab = count.div_ceil(SLAB_COUNT);
    let partials: Vec<(f64, f64)> = (0..SLAB_COUNT)
        .into_par_iter()
        .map(|s| {
            let lo = (s * slab).min(count);
            let hi = ((s + 1) * slab).min(count);
            let mut acc = (0.0, 0.0);
            for idx in lo..hi {
                let (a, b) = f(idx);
                acc.0 += a;
                acc.1 += b;
            }
            acc
        })
        .collect();
    partials
        .into_iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1))
}

fn dirichlet_density(field: &QField, ijk: [usize; 3]) -> f64 {
    let g = field.gradient_unchecked(ijk);
    let mut sum = 0.0;
    for axis in 0..3 {
        for a in 0..5 {
            sum += g[axis][a] * g[axis][a];
        }
    }
    0.5 * sum
}

/// Constrained energy `∫ ½|∇Q|² + (1-β)/(3√6)` over the ball, midpoint rule.
pub fn constrained_energy(field: &QField) -> Result<EnergyBreakdown, EnergyError> {
    let dev = field.max_unit_norm_deviation();
    if dev > 1e-8 {
        return Err(EnergyError::NotUnitNorm(dev));
    }
    let spec = field.spec();
    let cell = spec.h().powi(3);
    let roles = field.roles();
    let (dir, pot) = slab_sum2(spec.node_count(), |idx| {
        if roles[idx] != Role::Interior {
            return (0.0, 0.0);
        }
        let ijk = spec.ijk(idx);
        let beta = biaxiality(&field.data()[idx]).expect("unit norm checked above");
        (dirichlet_density(field, ijk), INV_3_SQRT6 * (1.0 - beta))
    });
    let dirichlet = dir * cell;
    let potential = pot * cell;
    Ok(EnergyBreakdown {
        dirichlet,
        potential,
        total: dirichlet + potential,
        blowup: None,
    })
}

/// Relaxed energy `∫ ½|∇Q|² + λ W(Q) + (μ/4)(1-|Q|²)²`; no norm constraint.
pub fn full_energy_lm(field: &QField, lambda: f64, mu: f64) -> f64 {
    let spec = field.spec();
    let cell = spec.h().powi(3);
    let roles = field.roles();
    let (e, _) = slab_sum2(spec.node_count(), |idx| {
        if roles[idx] != Role::Interior {
            return (0.0, 0.0);
        }
        let ijk = spec.ijk(idx);
        let q = &field.data()[idx];
        let pen = 1.0 - q.norm_squared();
        (
            dirichlet_density(field, ijk) + lambda * bulk_w(q) + 0.25 * mu * pen * pen,
            0.0,
        )
    });
    e * cell
}

pub fn full_energy(field: &QField, params: &LdGParameters) -> f64 {
    full_energy_lm(field, params.lambda(), params.mu())
}

/// Dirichlet/potential split of the relaxed energy (potential includes the
/// norm penalty).
pub fn full_energy_breakdown(field: &QField, lambda: f64, mu: f64) -> EnergyBreakdown {
    let spec = field.spec();
    let cell = spec.h().powi(3);
    let roles = field.roles();
    let (dir, pot) = slab_sum2(spec.node_count(), |idx| {
        if roles[idx] != Role::Interior {
            return (0.0, 0.0);
        }
        let ijk = spec.ijk(idx);
        let q = &field.data()[idx];
        let pen = 1.0 - q.norm_squared();
        (
            dirichlet_density(field, ijk),
            lambda * bulk_w(q) + 0.25 * mu * pen * pen,
        )
    });
    EnergyBreakdown {
        dirichlet: dir * cell,
        potential: pot * cell,
        total: (dir + pot) * cell,
        blowup: None,
    }
}

/// Wide-stencil Dirichlet part of the discrete energy gradient (density
/// scaling, i.e. `∂E/∂c / h³`) at an interior node.
fn dirichlet_gradient_at(field: &QField, ijk: [usize; 3]) -> [f64; 5] {
    let spec = field.spec();
    let inv_4h2 = 1.0 / (4.0 * spec.h() * spec.h());
    let n = spec.n();
    let c0 = field.data()[spec.idx(ijk)];
    let mut g = [0.0; 5];
    for axis in 0..3 {
        for dir in [-1isize, 1] {
            let mut nb = ijk;
            let mut far = ijk;
            // Neighbor at distance 1 must be interior for node ijk to appear
            // in its stencil; the node at distance 2 is then non-exterior.
            match dir {
                -1 => {
                    if nb[axis] == 0 || far[axis] < 2 {
                        continue;
                    }
                    nb[axis] -= 1;
                    far[axis] -= 2;
                }
                _ => {
                    if nb[axis] + 1 >= n || far[axis] + 2 >= n {
                        continue;
                    }
                    nb[axis] += 1;
                    far[axis] += 2;
                }
            }
            if field.roles()[spec.idx(nb)] != Role::Interior {
                continue;
            }
            let cf = field.data()[spec.idx(far)];
            for a in 0..5 {
                g[a] += (c0.coeff(a) - cf.coeff(a)) * inv_4h2;
            }
        }
    }
    g
}

/// Coefficient derivatives of the potential `(1 - β)/(3√6)`.
fn beta_potential_gradient(q: &QTensor) -> [f64; 5] {
    let n2 = q.norm_squared();
    let n = n2.sqrt();
    let m = q.matrix();
    let q2 = QTensor::from_matrix(&(m * m)); // coefficients tr(Q² B_a)
    let t3 = q.trace_cubed();
    let inv_n3 = 1.0 / (n2 * n);
    let inv_n5 = inv_n3 / n2;
    let mut g = [0.0; 5];
    for a in 0..5 {
        g[a] = -(q2.coeff(a) * inv_n3 - t3 * q.coeff(a) * inv_n5);
    }
    g
}

/// Exact gradient of the discrete constrained energy with respect to node
/// coefficients, divided by the cell volume and projected orthogonal to `Q`
/// at each node. Non-interior nodes get zero.
pub fn energy_gradient(field: &QField) -> Result<Vec<[f64; 5]>, EnergyError> {
    let dev = field.max_unit_norm_deviation();
    if dev > 1e-8 {
        return Err(EnergyError::NotUnitNorm(dev));
    }
    let spec = field.spec();
    let roles = field.roles();
    let mut out = vec![[0.0; 5]; spec.node_count()];
    out.par_iter_mut().enumerate().for_each(|(idx, slot)| {
        if roles[idx] != Role::Interior {
            return;
        }
        let ijk = spec.ijk(idx);
        let q = &field.data()[idx];
        let mut g = dirichlet_gradient_at(field, ijk);
        let dv = beta_potential_gradient(q);
        for a in 0..5 {
            g[a] += dv[a];
        }
        // Tangent projection: remove the component along Q.
        let n2 = q.norm_squared();
        let radial: f64 = (0..5).map(|a| g[a] * q.coeff(a)).sum::<f64>() / n2;
        for a in 0..5 {
            g[a] -= radial * q.coeff(a);
        }
        *slot = g;
    });
    Ok(out)
}

/// Unprojected gradient of the relaxed energy (density scaling).
pub fn penalty_gradient(field: &QField, lambda: f64, mu: f64) -> Vec<[f64; 5]> {
    let spec = field.spec();
    let roles = field.roles();
    let mut out = vec![[0.0; 5]; spec.node_count()];
    out.par_iter_mut().enumerate().for_each(|(idx, slot)| {
        if roles[idx] != Role::Interior {
            return;
        }
        let ijk = spec.ijk(idx);
        let q = &field.data()[idx];
        let mut g = dirichlet_gradient_at(field, ijk);
        let n2 = q.norm_squared();
        let m = q.matrix();
        let q2 = QTensor::from_matrix(&(m * m));
        for a in 0..5 {
            let dw = n2 * q.coeff(a) / SQRT6 - q2.coeff(a);
            g[a] += lambda * dw - mu * (1.0 - n2) * q.coeff(a);
        }
        *slot = g;
    });
    out
}

pub fn grad_sup_norm(grad: &[[f64; 5]]) -> f64 {
    grad.iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Smoothed indicator of the ball `|y - x0| ≤ r`, blended over one cell.
fn ball_weight(dist: f64, r: f64, h: f64) -> f64 {
    (0.5 + (r - dist) / h).clamp(0.0, 1.0)
}

/// Rescaled blow-up energies around `x0` at scale `r` for vanishing order `k`.
///
/// Quadrature runs over grid nodes inside the ball (weights smoothed over one
/// cell), with the decomposition computed nodewise and `p` sign-aligned to the
/// value at the center; all finite differences are taken on the original grid
/// and rescaled, so no interpolation error enters the energy split.
pub fn blowup_energy_parts(
    field: &QField,
    x0: &Vector3<f64>,
    r: f64,
    k: usize,
) -> Result<EnergyBreakdown, EnergyError> {
    let spec = field.spec();
    let h = spec.h();
    if r < 4.0 * h - 1e-12 {
        return Err(EnergyError::ScaleTooSmall(r));
    }
    if x0.norm() + r > 1.0 - 2.0 * h {
        return Err(EnergyError::ScaleTooSmall(r));
    }

    // Bounding index box of the ball plus margin for the FD stencil.
    let margin = r + 2.0 * h;
    let lo = spec.nearest_node(&Vector3::new(
        x0[0] - margin,
        x0[1] - margin,
        x0[2] - margin,
    ));
    let hi = spec.nearest_node(&Vector3::new(
        x0[0] + margin,
        x0[1] + margin,
        x0[2] + margin,
    ));
    let nx = [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1];
    let box_idx = |ijk: [usize; 3]| -> usize {
        ((ijk[0] - lo[0]) * nx[1] + (ijk[1] - lo[1])) * nx[2] + (ijk[2] - lo[2])
    };

    let p_ref = perturb::decompose(&field.get(spec.nearest_node(x0)))?.p;
    let mut dec: Vec<Option<(Vector3<f64>, QTensor, f64)>> = vec![None; nx[0] * nx[1] * nx[2]];
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k3 in lo[2]..=hi[2] {
                let ijk = [i, j, k3];
                let pos = spec.pos(ijk);
                if (pos - x0).norm() > margin {
                    continue;
                }
                let d = perturb::decompose(&field.get(ijk))?;
                let p = if d.p.dot(&p_ref) < 0.0 { -d.p } else { d.p };
                dec[box_idx(ijk)] = Some((p, d.u.tensor(), d.s));
            }
        }
    }

    let scale = 1.0 / r.powi(2 * k as i32 + 1);
    let cell = h.powi(3) * scale;
    let inv_2h = 1.0 / (2.0 * h);
    let mut dir_sum = 0.0;
    let mut pot_sum = 0.0;
    let mut total_sum = 0.0;
    let mut e1_sum = 0.0;
    let mut e2_sum = 0.0;
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k3 in lo[2]..=hi[2] {
                let ijk = [i, j, k3];
                let pos = spec.pos(ijk);
                let w = ball_weight((pos - x0).norm(), r, h);
                if w == 0.0 {
                    continue;
                }
                let (_, u0, _) = dec[box_idx(ijk)].expect("inside margin");
                let mut grad_p = [Vector3::zeros(); 3];
                let mut grad_u = [[0.0; 5]; 3];
                for axis in 0..3 {
                    let mut fwd = ijk;
                    fwd[axis] += 1;
                    let mut bwd = ijk;
                    bwd[axis] -= 1;
                    let (pf, uf, _) = dec[box_idx(fwd)].expect("stencil in margin");
                    let (pb, ub, _) = dec[box_idx(bwd)].expect("stencil in margin");
                    grad_p[axis] = (pf - pb) * inv_2h;
                    for a in 0..5 {
                        grad_u[axis][a] = (uf.coeff(a) - ub.coeff(a)) * inv_2h;
                    }
                }
                let beta = biaxiality(&field.get(ijk))
                    .map_err(|_| EnergyError::NotUnitNorm(field.get(ijk).norm()))?;
                let dir_full = dirichlet_density(field, ijk);
                let pot_full = INV_3_SQRT6 * (1.0 - beta);
                let p_term: f64 = 1.5 * grad_p.iter().map(|v| v.norm_squared()).sum::<f64>();
                let e1d: f64 = 0.5
                    * grad_u
                        .iter()
                        .map(|ga| ga.iter().map(|x| x * x).sum::<f64>())
                        .sum::<f64>();
                let umat = u0.matrix();
                let e2d: f64 = SQRT6
                    * grad_p
                        .iter()
                        .map(|dp| (dp.transpose() * umat * dp)[0])
                        .sum::<f64>();
                dir_sum += w * dir_full;
                pot_sum += w * pot_full;
                total_sum += w * (dir_full + pot_full - p_term - 2.0 * INV_3_SQRT6);
                e1_sum += w * e1d;
                e2_sum += w * e2d;
            }
        }
    }

    let e1 = e1_sum * cell;
    let e2 = e2_sum * cell;
    let total = total_sum * cell;
    Ok(EnergyBreakdown {
        dirichlet: dir_sum * cell,
        potential: pot_sum * cell,
        total,
        blowup: Some(BlowupParts {
            e1,
            e2,
            e3: total - e1 - e2,
        }),
    })
}

/// Tangent-map energy `∫_{B₁} ½|∇U|² + √6 V_k : U`, evaluated exactly from
/// polynomial coefficients.
pub fn ek_energy(u: &UPolyPair, vk: &MatrixPoly) -> f64 {
    let dirichlet = 0.5 * (u.u1.dirichlet_ball_integral() + u.u2.dirichlet_ball_integral());
    let probe = crate::qtensor::TangentTensor {
        u: [0.0, 0.0],
        p: u.p0,
        e1: u.e1,
        e2: u.e2,
    };
    let (m1, m2) = probe.basis_matrices();
    let y1 = vk.contract(&m1);
    let y2 = vk.contract(&m2);
    let source = SQRT6 * (y1.mul(&u.u1).ball_integral() + y2.mul(&u.u2).ball_integral());
    dirichlet + source
}

/// Pointwise Euler-Lagrange residual `|ΔŪ - √6 Y_k|` on a grid over the cube.
/// `Y_k` must be the projected source of degree `deg(Ū) - 2`.
pub fn ek_residual(
    u: &UPolyPair,
    yk: &UPolyPair,
    spec: GridSpec,
) -> Result<ScalarField, EnergyError> {
    if u.degree() < 2 {
        return Err(EnergyError::DegreeMismatch {
            expected: 2,
            got: u.degree(),
        });
    }
    if yk.degree() != u.degree() - 2 {
        return Err(EnergyError::DegreeMismatch {
            expected: u.degree() - 2,
            got: yk.degree(),
        });
    }
    if (u.p0 - yk.p0).norm() > 1e-9 {
        return Err(EnergyError::BasisMismatch);
    }
    let l1 = u.u1.laplacian();
    let l2 = u.u2.laplacian();
    let mut data = vec![0.0; spec.node_count()];
    for (idx, slot) in data.iter_mut().enumerate() {
        let x = spec.pos(spec.ijk(idx));
        let r1 = l1.eval(&x) - SQRT6 * yk.u1.eval(&x);
        let r2 = l2.eval(&x) - SQRT6 * yk.u2.eval(&x);
        *slot = (r1 * r1 + r2 * r2).sqrt();
    }
    Ok(ScalarField::new(spec, data))
}

/// Largest residual over nodes of the unit ball.
pub fn ek_residual_sup(u: &UPolyPair, yk: &UPolyPair, spec: GridSpec) -> Result<f64, EnergyError> {
    let field = ek_residual(u, yk, spec)?;
    let mut sup: f64 = 0.0;
    for idx in 0..spec.node_count() {
        if spec.pos(spec.ijk(idx)).norm() <= 1.0 {
            sup = sup.max(field.data()[idx]);
        }
    }
    Ok(sup)
}
