//! Discrete Q-tensor fields on a cubic grid masked to the unit ball:
//! node roles, finite differences, trilinear sampling, boundary data, and
//! exact synthetic fields used as analysis oracles.
//!
//! The boundary is handled by an immersed Dirichlet shell: every non-interior
//! node within `|x| < 1 + h√3` holds the frozen value `Q_b(x/|x|)` and is
//! never updated. Interior nodes are those with `|x| < 1 - h`, so central
//! differences and the trilinear cells of any admissible sample point only
//! ever touch interior or shell nodes.

use crate::consts::{SQRT3, SQRT6_OVER_6};
use crate::perturb::{self, PerturbError};
use crate::poly::HomoPoly;
use crate::qtensor::{
    biaxiality, eigen_decompose, make_uniaxial, orthonormal_completion, QTensor, UniaxialSign,
};
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid size {0} must be odd and at least 9")]
    BadGridSize(usize),
    #[error("node ({0}, {1}, {2}) is not interior")]
    NotInterior(usize, usize, usize),
    #[error("point ({0:.3}, {1:.3}, {2:.3}) outside the sampling domain")]
    OutOfDomain(f64, f64, f64),
    #[error("interpolated tensor norm {0:.3e} too small to renormalize")]
    ZeroSample(f64),
    #[error("amplitude {0} too large for the synthetic construction")]
    AmplitudeTooLarge(f64),
    #[error("eigenvector sign propagation failed on the boundary triangulation")]
    OrientationFailure,
    #[error("boundary biaxiality {0:.4} too close to -1 for a simple leading eigenvalue")]
    DegenerateBoundary(f64),
    #[error("degree sum {0:.4} is not close to an integer")]
    NonIntegerDegree(f64),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

/// Cubic grid over `[-1, 1]³` with an odd number of nodes per axis, so the
/// origin and the cube faces are nodes. Spacing is `h = 2/(N-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Interior,
    Boundary,
    Exterior,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self, FieldError> {
        if n < 9 || n % 2 == 0 {
            return Err(FieldError::BadGridSize(n));
        }
        Ok(GridSpec { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        2.0 / (self.n as f64 - 1.0)
    }

    pub fn node_count(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn coord(&self, i: usize) -> f64 {
        -1.0 + self.h() * i as f64
    }

    pub fn pos(&self, ijk: [usize; 3]) -> Vector3<f64> {
        Vector3::new(self.coord(ijk[0]), self.coord(ijk[1]), self.coord(ijk[2]))
    }

    pub fn idx(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.n + ijk[1]) * self.n + ijk[2]
    }

    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.n;
        let j = (idx / self.n) % self.n;
        let i = idx / (self.n * self.n);
        [i, j, k]
    }

    pub fn role_of(&self, pos: &Vector3<f64>) -> Role {
        let r = pos.norm();
        let h = self.h();
        if r < 1.0 - h {
            Role::Interior
        } else if r < 1.0 + h * SQRT3 {
            Role::Boundary
        } else {
            Role::Exterior
        }
    }

    /// Nearest node to a point of the closed unit ball.
    pub fn nearest_node(&self, x: &Vector3<f64>) -> [usize; 3] {
        let h = self.h();
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let t = ((x[a] + 1.0) / h).round();
            ijk[a] = (t.max(0.0) as usize).min(self.n - 1);
        }
        ijk
    }
}

/// Q-tensor field on a masked grid. Non-exterior nodes are meaningful;
/// boundary-shell nodes carry frozen Dirichlet data.
#[derive(Clone, Debug)]
pub struct QField {
    spec: GridSpec,
    data: Vec<QTensor>,
    roles: Vec<Role>,
}

impl QField {
    /// Builds a field from a boundary function on the unit sphere and an
    /// interior initialization rule.
    pub fn from_functions(
        spec: GridSpec,
        boundary: impl Fn(&Vector3<f64>) -> QTensor,
        interior: impl Fn(&Vector3<f64>) -> QTensor,
    ) -> QField {
        let mut data = vec![QTensor::ZERO; spec.node_count()];
        let mut roles = vec![Role::Exterior; spec.node_count()];
        for idx in 0..spec.node_count() {
            let pos = spec.pos(spec.ijk(idx));
            let role = spec.role_of(&pos);
            roles[idx] = role;
            data[idx] = match role {
                Role::Interior => interior(&pos),
                Role::Boundary => boundary(&(pos / pos.norm())),
                Role::Exterior => QTensor::ZERO,
            };
        }
        QField { spec, data, roles }
    }

    pub fn uniform(spec: GridSpec, q: QTensor) -> QField {
        QField::from_functions(spec, |_| q, |_| q)
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn data(&self) -> &[QTensor] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [QTensor] {
        &mut self.data
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn get(&self, ijk: [usize; 3]) -> QTensor {
        self.data[self.spec.idx(ijk)]
    }

    pub fn set(&mut self, ijk: [usize; 3], q: QTensor) {
        let idx = self.spec.idx(ijk);
        self.data[idx] = q;
    }

    pub fn role(&self, ijk: [usize; 3]) -> Role {
        self.roles[self.spec.idx(ijk)]
    }

    /// Rebuilds a field from raw parts; roles must match the grid geometry.
    pub fn from_parts(spec: GridSpec, data: Vec<QTensor>, roles: Vec<Role>) -> QField {
        assert_eq!(data.len(), spec.node_count());
        assert_eq!(roles.len(), spec.node_count());
        QField { spec, data, roles }
    }

    /// Largest deviation of `|Q|` from 1 over non-exterior nodes.
    pub fn max_unit_norm_deviation(&self) -> f64 {
        self.data
            .iter()
            .zip(&self.roles)
            .filter(|(_, r)| **r != Role::Exterior)
            .map(|(q, _)| (q.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Central differences of the five coefficients at an interior node;
    /// result is `[axis][coefficient]`.
    pub fn gradient(&self, ijk: [usize; 3]) -> Result<[[f64; 5]; 3], FieldError> {
        if self.role(ijk) != Role::Interior {
            return Err(FieldError::NotInterior(ijk[0], ijk[1], ijk[2]));
        }
        Ok(self.gradient_unchecked(ijk))
    }

    pub(crate) fn gradient_unchecked(&self, ijk: [usize; 3]) -> [[f64; 5]; 3] {
        let inv_2h = 1.0 / (2.0 * self.spec.h());
        let mut out = [[0.0; 5]; 3];
        for axis in 0..3 {
            let mut fwd = ijk;
            fwd[axis] += 1;
            let mut bwd = ijk;
            bwd[axis] -= 1;
            let qf = self.data[self.spec.idx(fwd)];
            let qb = self.data[self.spec.idx(bwd)];
            for a in 0..5 {
                out[axis][a] = (qf.coeff(a) - qb.coeff(a)) * inv_2h;
            }
        }
        out
    }

    /// Trilinear interpolation renormalized to the unit sphere of tensors.
    /// Valid for `|x| ≤ 1 - h`, which keeps every cell corner non-exterior.
    pub fn sample(&self, x: &Vector3<f64>) -> Result<QTensor, FieldError> {
        let h = self.spec.h();
        if x.norm() > 1.0 - h + 1e-12 {
            return Err(FieldError::OutOfDomain(x[0], x[1], x[2]));
        }
        let n = self.spec.n();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let t = (x[a] + 1.0) / h;
            let i0 = (t.floor().max(0.0) as usize).min(n - 2);
            base[a] = i0;
            frac[a] = t - i0 as f64;
        }
        let mut acc = QTensor::ZERO;
        for di in 0..2 {
            let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
                for dk in 0..2 {
                    let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                    let w = wi * wj * wk;
                    if w == 0.0 {
                        continue;
                    }
                    acc += self.data[self.spec.idx([base[0] + di, base[1] + dj, base[2] + dk])] * w;
                }
            }
        }
        let norm = acc.norm();
        if norm <= 1e-12 {
            return Err(FieldError::ZeroSample(norm));
        }
        Ok(acc / norm)
    }

    /// Applies `f` at every non-exterior node; exterior entries are zero.
    pub fn scalar_map(&self, f: impl Fn(&QTensor) -> f64) -> ScalarField {
        let data = self
            .data
            .iter()
            .zip(&self.roles)
            .map(|(q, r)| if *r == Role::Exterior { 0.0 } else { f(q) })
            .collect();
        ScalarField {
            spec: self.spec,
            data,
        }
    }
}

/// Real-valued node data sharing a field's grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    spec: GridSpec,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(spec: GridSpec, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), spec.node_count());
        ScalarField { spec, data }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, ijk: [usize; 3]) -> f64 {
        self.data[self.spec.idx(ijk)]
    }

    pub fn min_over(&self, roles: &[Role], keep: Role) -> f64 {
        self.data
            .iter()
            .zip(roles)
            .filter(|(_, r)| **r == keep)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Smallest β over the boundary shell; boundary data is admissible only when
/// this stays above `-1 + margin` (the leading eigenvalue must stay simple).
pub fn min_boundary_beta(field: &QField) -> f64 {
    field
        .data
        .iter()
        .zip(&field.roles)
        .filter(|(_, r)| **r == Role::Boundary)
        .map(|(q, _)| biaxiality(q).unwrap_or(-1.0))
        .fold(f64::INFINITY, f64::min)
}

/// Radial hedgehog data: `Q_b(ω) = √(3/2)(ω⊗ω - Id/3)` on the shell, interior
/// initialized by blending a fixed uniaxial state into the boundary value
/// along the radius and renormalizing.
pub fn hedgehog_boundary(spec: GridSpec) -> QField {
    let center = make_uniaxial(&Vector3::z(), UniaxialSign::Positive).unwrap();
    QField::from_functions(
        spec,
        |omega| make_uniaxial(omega, UniaxialSign::Positive).unwrap(),
        |x| {
            let r = x.norm();
            if r < 1e-12 {
                return center;
            }
            let qb = make_uniaxial(&(x / r), UniaxialSign::Positive).unwrap();
            let w = r * r;
            let mix = center * (1.0 - w) + qb * w;
            // The two unit states are never antipodal, so the norm stays
            // bounded away from zero.
            mix / mix.norm()
        },
    )
}

#[derive(Clone, Copy, Debug)]
pub enum DisclinationCase {
    /// Line profile: in cylindrical coordinates about the axis, `s = amp·ρ`
    /// and the leading eigenvector turns with half the azimuth.
    HalfDegree,
    /// Planar eigenvalue-exchange profile with tangent coefficients
    /// `u = amp (a·x) (1, λ)` for a unit vector `a ⊥ axis`.
    Exchange { lambda: f64 },
}

/// Largest radial coordinate a shell node can have.
fn max_extent(spec: GridSpec) -> f64 {
    1.0 + spec.h() * SQRT3
}

/// Exact unit-norm synthetic field with constant λ3-eigenvector `axis`.
pub fn synthetic_disclination(
    spec: GridSpec,
    axis: &Vector3<f64>,
    amplitude: f64,
    case: DisclinationCase,
) -> Result<QField, FieldError> {
    if amplitude > 0.2 {
        return Err(FieldError::AmplitudeTooLarge(amplitude));
    }
    let s_peak = match case {
        DisclinationCase::HalfDegree => amplitude * max_extent(spec),
        DisclinationCase::Exchange { lambda } => {
            amplitude * (1.0 + lambda * lambda).sqrt() / std::f64::consts::SQRT_2 * max_extent(spec)
        }
    };
    if s_peak >= SQRT6_OVER_6 {
        return Err(FieldError::AmplitudeTooLarge(amplitude));
    }
    let p = axis / axis.norm();
    let (e1, e2) = orthonormal_completion(&p);
    build_constant_p_field(spec, &p, |x| {
        let (xi, eta) = (x.dot(&e1), x.dot(&e2));
        match case {
            DisclinationCase::HalfDegree => {
                let rho = (xi * xi + eta * eta).sqrt();
                let s = amplitude * rho;
                let phi = 0.5 * eta.atan2(xi);
                (s, phi)
            }
            DisclinationCase::Exchange { lambda } => {
                let u1 = amplitude * xi;
                let u2 = lambda * u1;
                let s = (u1 * u1 + u2 * u2).sqrt() / std::f64::consts::SQRT_2;
                let phi = 0.5 * u2.atan2(u1);
                (s, phi)
            }
        }
    })
}

/// Exact unit-norm field with constant `p = axis` whose tangent part has the
/// prescribed coefficient polynomials over the completion basis of `axis`.
pub fn synthetic_from_tangent_polys(
    spec: GridSpec,
    axis: &Vector3<f64>,
    u1: &HomoPoly,
    u2: &HomoPoly,
) -> Result<QField, FieldError> {
    let p = axis / axis.norm();
    build_constant_p_field(spec, &p, |x| {
        let (a, b) = (u1.eval(x), u2.eval(x));
        let s = (a * a + b * b).sqrt() / std::f64::consts::SQRT_2;
        let phi = 0.5 * b.atan2(a);
        (s, phi)
    })
}

/// Exact unit-norm field with constant `p = axis` and tangent coefficients
/// `(u1, u2)` given by an arbitrary function over the completion basis.
pub fn synthetic_from_tangent_fn(
    spec: GridSpec,
    axis: &Vector3<f64>,
    coeffs: impl Fn(&Vector3<f64>) -> (f64, f64),
) -> Result<QField, FieldError> {
    let p = axis / axis.norm();
    build_constant_p_field(spec, &p, |x| {
        let (a, b) = coeffs(x);
        let s = (a * a + b * b).sqrt() / std::f64::consts::SQRT_2;
        let phi = 0.5 * b.atan2(a);
        (s, phi)
    })
}

/// Half-degree profile along the bent line `{(bend·z², 0, z)}`; `p = e3`.
pub fn synthetic_bent_line(
    spec: GridSpec,
    amplitude: f64,
    bend: f64,
) -> Result<QField, FieldError> {
    if amplitude > 0.2 {
        return Err(FieldError::AmplitudeTooLarge(amplitude));
    }
    let p = Vector3::z();
    build_constant_p_field(spec, &p, |x| {
        let cx = bend * x[2] * x[2];
        let (xi, eta) = (x[0] - cx, x[1]);
        let rho = (xi * xi + eta * eta).sqrt();
        (amplitude * rho, 0.5 * eta.atan2(xi))
    })
}

fn build_constant_p_field(
    spec: GridSpec,
    p: &Vector3<f64>,
    s_phi: impl Fn(&Vector3<f64>) -> (f64, f64),
) -> Result<QField, FieldError> {
    let (e1, e2) = orthonormal_completion(p);
    let value = |x: &Vector3<f64>| -> Result<QTensor, PerturbError> {
        let (s, phi) = s_phi(x);
        let n = e1 * phi.cos() + e2 * phi.sin();
        perturb::reconstruct(p, s, &n)
    };
    let mut data = vec![QTensor::ZERO; spec.node_count()];
    let mut roles = vec![Role::Exterior; spec.node_count()];
    for idx in 0..spec.node_count() {
        let pos = spec.pos(spec.ijk(idx));
        let role = spec.role_of(&pos);
        roles[idx] = role;
        if role != Role::Exterior {
            data[idx] = value(&pos)?;
        }
    }
    Ok(QField { spec, data, roles })
}

/// Field with a smoothly tilting λ3-eigenvector `p(x) ∝ e3 + ε x₁ e1` and a
/// constant tangent amplitude; used to exercise derivative estimation of `p`.
pub fn synthetic_tilted_p(spec: GridSpec, eps: f64, s0: f64) -> Result<QField, FieldError> {
    let mut data = vec![QTensor::ZERO; spec.node_count()];
    let mut roles = vec![Role::Exterior; spec.node_count()];
    for idx in 0..spec.node_count() {
        let pos = spec.pos(spec.ijk(idx));
        let role = spec.role_of(&pos);
        roles[idx] = role;
        if role != Role::Exterior {
            let raw = Vector3::new(eps * pos[0], 0.0, 1.0);
            let p = raw / raw.norm();
            let n = Vector3::y().cross(&p).normalize();
            data[idx] = perturb::reconstruct(&p, s0, &n)?;
        }
    }
    Ok(QField { spec, data, roles })
}

// ---------------------------------------------------------------------------
// Boundary degree of the leading eigenvector.
// ---------------------------------------------------------------------------

struct Icosphere {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
}

fn icosphere(subdivisions: usize) -> Icosphere {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let mut vertices: Vec<Vector3<f64>> = raw
        .iter()
        .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint = std::collections::HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let v = (vertices[a] + vertices[b]).normalize();
                vertices.push(v);
                vertices.len() - 1
            })
        };
        for f in &faces {
            let ab = mid(f[0], f[1], &mut vertices);
            let bc = mid(f[1], f[2], &mut vertices);
            let ca = mid(f[2], f[0], &mut vertices);
            next_faces.push([f[0], ab, ca]);
            next_faces.push([f[1], bc, ab]);
            next_faces.push([f[2], ca, bc]);
            next_faces.push([ab, bc, ca]);
        }
        faces = next_faces;
    }
    Icosphere { vertices, faces }
}

/// Signed solid angle of the spherical triangle with vertices `a, b, c`.
fn signed_solid_angle(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let num = a.dot(&b.cross(c));
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

/// Topological degree of the leading-eigenvector field over the boundary
/// shell, computed by sign-propagating the line field over a triangulated
/// sphere and summing signed solid angles. The oriented lift of a line field
/// is unique only up to a global sign, which flips the degree's sign, so the
/// non-negative representative is returned. Exact integer for consistent data.
pub fn boundary_degree(field: &QField) -> Result<i64, FieldError> {
    let spec = field.spec();
    // Leading eigenvalue must be simple on the whole shell.
    for idx in 0..spec.node_count() {
        if field.roles[idx] != Role::Boundary {
            continue;
        }
        let beta =
            biaxiality(&field.data[idx]).map_err(|_| FieldError::DegenerateBoundary(-1.0))?;
        if beta <= -1.0 + 1e-3 {
            return Err(FieldError::DegenerateBoundary(beta));
        }
    }

    let sphere = icosphere(4);
    let directors: Vec<Vector3<f64>> = sphere
        .vertices
        .iter()
        .map(|omega| {
            let node = spec.nearest_node(omega);
            eigen_decompose(&field.get(node)).n()
        })
        .collect();

    // Orient the line field: BFS over the edge graph, flipping signs to keep
    // neighboring directors aligned.
    let nv = directors.len();
    let mut adj = vec![Vec::new(); nv];
    for f in &sphere.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut signed = directors.clone();
    let mut visited = vec![false; nv];
    let mut queue = std::collections::VecDeque::new();
    visited[0] = true;
    queue.push_back(0usize);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if visited[w] {
                continue;
            }
            if signed[v].dot(&signed[w]) < 0.0 {
                signed[w] = -signed[w];
            }
            visited[w] = true;
            queue.push_back(w);
        }
    }
    for v in 0..nv {
        for &w in &adj[v] {
            if signed[v].dot(&signed[w]) <= 0.0 {
                return Err(FieldError::OrientationFailure);
            }
        }
    }

    let total: f64 = sphere
        .faces
        .iter()
        .map(|f| signed_solid_angle(&signed[f[0]], &signed[f[1]], &signed[f[2]]))
        .sum();
    let degree = total / (4.0 * std::f64::consts::PI);
    let rounded = degree.round();
    if (degree - rounded).abs() > 0.1 {
        return Err(FieldError::NonIntegerDegree(degree));
    }
    Ok((rounded as i64).abs())
}
