//! Defect analysis pipeline: biaxiality scanning, candidate detection with an
//! eigenframe-discontinuity screen, winding numbers of the leading
//! eigenvector, vanishing-order estimation, blow-up sampling, tangent-map
//! fitting and classification, derivative-based source polynomials `V_m`/`Y_m`,
//! and the cone-angle (tangent-line) diagnostic.

use crate::consts::SQRT6_OVER_6;
use crate::field::{FieldError, QField, Role, ScalarField};
use crate::perturb::{self, PerturbError};
use crate::poly::{monomial_count, monomial_exponents, HomoPoly, MatrixPoly, UPolyPair};
use crate::qtensor::{
    biaxiality, eigen_decompose, orthonormal_completion, EigenSystem, QTensor, TensorError,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DefectError {
    #[error("sample too close to negative uniaxial: s = {0:.3e}")]
    DegenerateSample(f64),
    #[error("loop under-sampled: director angle steps stay above π/4 after refinement")]
    UnderSampledLoop,
    #[error("decomposition failed: {0}")]
    DecompositionFailure(#[from] PerturbError),
    #[error("radius {0} below the minimal resolvable scale {1}")]
    RadiiTooSmall(f64, f64),
    #[error("eigenvector sign alignment failed: |p·p0| = {0:.3}")]
    SignAlignmentFailure(f64),
    #[error("rank-deficient tangent-map fit: {0}")]
    RankDeficientFit(String),
    #[error("fit residual {0:.3} exceeds the classification threshold")]
    ResidualTooLarge(f64),
    #[error("derivative jet estimation failed: {0}")]
    JetEstimationFailure(String),
    #[error("only {count} candidates inside radius {radius}; need at least 5 per annulus")]
    InsufficientCandidates { radius: f64, count: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// β at every non-exterior node (exterior entries are zero).
pub fn beta_field(field: &QField) -> ScalarField {
    field.scalar_map(|q| biaxiality(q).unwrap_or(1.0))
}

/// `s = λ1 - √6/6` at every non-exterior node.
pub fn s_field(field: &QField) -> ScalarField {
    field.scalar_map(|q| eigen_decompose(q).lambda[0] - SQRT6_OVER_6)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Classification {
    /// Eigenvalue-exchange profile (collinear gradient pair); not a defect.
    ExchangePlane,
    /// Half-degree disclination line with the given axis.
    HalfDegreeLine {
        axis: Vector3<f64>,
    },
    /// Vanishing order ≥ 2; `invariant_axis` is reported when the fitted map
    /// is translation-invariant along some direction.
    HigherOrder {
        k: usize,
        invariant_axis: Option<Vector3<f64>>,
    },
    Unresolved,
}

impl Classification {
    pub fn label(&self) -> String {
        match self {
            Classification::ExchangePlane => "exchange_plane".into(),
            Classification::HalfDegreeLine { .. } => "half_degree_line".into(),
            Classification::HigherOrder { k, .. } => format!("higher_order({k})"),
            Classification::Unresolved => "unresolved".into(),
        }
    }

    pub fn axis(&self) -> Option<Vector3<f64>> {
        match self {
            Classification::HalfDegreeLine { axis } => Some(*axis),
            Classification::HigherOrder { invariant_axis, .. } => *invariant_axis,
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DefectCandidate {
    /// Sub-grid refined position of the local β minimum.
    pub position: Vector3<f64>,
    pub beta_min: f64,
    /// Largest exchange-aware frame distance between adjacent cluster nodes.
    pub frame_jump: f64,
    /// True when the eigenframe screen flags a genuine discontinuity.
    pub defect: bool,
    pub cluster: usize,
    pub k_hat: Option<f64>,
    pub k: Option<usize>,
    pub regression_residual: Option<f64>,
    pub fit_residual: Option<f64>,
    pub classification: Classification,
    pub winding: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectOptions {
    /// Candidates require `β < -1 + beta_threshold`.
    pub beta_threshold: f64,
    /// Frame-screen threshold separating exchange continuity from a jump.
    pub frame_tol: f64,
    /// Detection is restricted to `|x| ≤ max_radius`.
    pub max_radius: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            beta_threshold: 0.05,
            frame_tol: 0.2,
            max_radius: 0.9,
        }
    }
}

/// Plateau tolerance in the discrete local-minimum test for β.
const PLATEAU_TOL: f64 = 1e-12;

/// Frame distance that treats the two near-degenerate leading axes as an
/// unordered pair: across an eigenvalue exchange the labels n and m swap, so
/// the screen takes the better of the direct and swapped matchings.
fn exchange_aware_frame_distance(a: &EigenSystem, b: &EigenSystem) -> f64 {
    let direct = [
        1.0 - a.n().dot(&b.n()).abs(),
        1.0 - a.m().dot(&b.m()).abs(),
        1.0 - a.p().dot(&b.p()).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let swapped = [
        1.0 - a.n().dot(&b.m()).abs(),
        1.0 - a.m().dot(&b.n()).abs(),
        1.0 - a.p().dot(&b.p()).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    direct.min(swapped)
}

/// Finds clusters of strongly negative-biaxiality nodes and returns one
/// candidate per discrete local minimum of β, with sub-grid quadratic
/// refinement. Clusters whose eigenframe stays continuous under the
/// exchange-aware screen are reported with `defect = false`.
pub fn detect_candidates(field: &QField, opts: &DetectOptions) -> Vec<DefectCandidate> {
    let spec = field.spec();
    let beta = beta_field(field);
    let n = spec.n();
    let threshold = -1.0 + opts.beta_threshold;
    let in_mask = |idx: usize| -> bool {
        field.roles()[idx] != Role::Exterior
            && beta.data()[idx] < threshold
            && spec.pos(spec.ijk(idx)).norm() <= opts.max_radius
    };

    let neighbors = |ijk: [usize; 3]| -> Vec<[usize; 3]> {
        let mut out = Vec::with_capacity(6);
        for axis in 0..3 {
            if ijk[axis] > 0 {
                let mut nb = ijk;
                nb[axis] -= 1;
                out.push(nb);
            }
            if ijk[axis] + 1 < n {
                let mut nb = ijk;
                nb[axis] += 1;
                out.push(nb);
            }
        }
        out
    };

    // Connected clusters by 6-adjacency, in deterministic node order.
    let mut cluster_of: Vec<Option<usize>> = vec![None; spec.node_count()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..spec.node_count() {
        if cluster_of[start].is_some() || !in_mask(start) {
            continue;
        }
        let id = clusters.len();
        let mut members = Vec::new();
        let mut queue = std::collections::VecDeque::from([start]);
        cluster_of[start] = Some(id);
        while let Some(idx) = queue.pop_front() {
            members.push(idx);
            for nb in neighbors(spec.ijk(idx)) {
                let nidx = spec.idx(nb);
                if cluster_of[nidx].is_none() && in_mask(nidx) {
                    cluster_of[nidx] = Some(id);
                    queue.push_back(nidx);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }

    let mut candidates = Vec::new();
    for (cluster_id, members) in clusters.iter().enumerate() {
        // Eigenframe screen over adjacent pairs of the cluster dilated by one
        // node, so cores thinner than a cell still contribute cross pairs.
        let mut screen_nodes: Vec<usize> = members.clone();
        for &idx in members {
            for nb in neighbors(spec.ijk(idx)) {
                let nidx = spec.idx(nb);
                if field.roles()[nidx] != Role::Exterior {
                    screen_nodes.push(nidx);
                }
            }
        }
        screen_nodes.sort_unstable();
        screen_nodes.dedup();
        let eigs: HashMap<usize, EigenSystem> = screen_nodes
            .iter()
            .map(|&idx| (idx, eigen_decompose(&field.data()[idx])))
            .collect();
        let mut frame_jump: f64 = 0.0;
        for &idx in &screen_nodes {
            for nb in neighbors(spec.ijk(idx)) {
                let nidx = spec.idx(nb);
                if nidx > idx {
                    if let Some(other) = eigs.get(&nidx) {
                        frame_jump =
                            frame_jump.max(exchange_aware_frame_distance(&eigs[&idx], other));
                    }
                }
            }
        }
        let defect = frame_jump > opts.frame_tol;

        for &idx in members {
            let ijk = spec.ijk(idx);
            let b0 = beta.data()[idx];
            // Discrete local minimum of β with a plateau tolerance, so that
            // exact minima along lines and planes keep all their nodes.
            let is_min = neighbors(ijk).into_iter().all(|nb| {
                let nidx = spec.idx(nb);
                field.roles()[nidx] == Role::Exterior || b0 <= beta.data()[nidx] + PLATEAU_TOL
            });
            if !is_min {
                continue;
            }
            // Per-axis quadratic refinement of position and value.
            let mut pos = spec.pos(ijk);
            let mut beta_min = b0;
            for axis in 0..3 {
                if ijk[axis] == 0 || ijk[axis] + 1 >= n {
                    continue;
                }
                let mut fwd = ijk;
                fwd[axis] += 1;
                let mut bwd = ijk;
                bwd[axis] -= 1;
                if field.roles()[spec.idx(fwd)] == Role::Exterior
                    || field.roles()[spec.idx(bwd)] == Role::Exterior
                {
                    continue;
                }
                let fp = beta.data()[spec.idx(fwd)];
                let fm = beta.data()[spec.idx(bwd)];
                let curv = fp - 2.0 * b0 + fm;
                if curv <= 0.0 {
                    continue;
                }
                let t = ((fm - fp) / (2.0 * curv)).clamp(-0.5, 0.5);
                pos[axis] += t * spec.h();
                beta_min += 0.5 * (fp - fm) * t + 0.5 * curv * t * t;
            }
            // The parabola may extrapolate past the attainable minimum when
            // β has a kink at the core.
            beta_min = beta_min.max(-1.0);
            candidates.push(DefectCandidate {
                position: pos,
                beta_min,
                frame_jump,
                defect,
                cluster: cluster_id,
                k_hat: None,
                k: None,
                regression_residual: None,
                fit_residual: None,
                classification: Classification::Unresolved,
                winding: None,
                note: None,
            });
        }
    }
    candidates.sort_by(|a, b| {
        (
            a.beta_min,
            a.position.norm(),
            a.position[0],
            a.position[1],
            a.position[2],
        )
            .partial_cmp(&(
                b.beta_min,
                b.position.norm(),
                b.position[0],
                b.position[1],
                b.position[2],
            ))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    candidates
}

/// Winding result rounded to a half-integer, or the raw value when the
/// rounding error exceeds 0.1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HalfWinding {
    Resolved(f64),
    Unresolved { raw: f64 },
}

impl HalfWinding {
    pub fn value(&self) -> Option<f64> {
        match self {
            HalfWinding::Resolved(v) => Some(*v),
            HalfWinding::Unresolved { .. } => None,
        }
    }
}

fn wrap_half_pi(d: f64) -> f64 {
    d - std::f64::consts::PI * (d / std::f64::consts::PI).round()
}

/// Accumulated rotation of the leading eigenvector, tracked as a line field
/// in the plane orthogonal to `p_ref`, over a closed loop. Samples with
/// `s ≤ s_min` are rejected; segments with director steps ≥ π/4 trigger loop
/// refinement by midpoint insertion.
pub fn winding_number(
    field: &QField,
    loop_points: &[Vector3<f64>],
    p_ref: &Vector3<f64>,
    s_min: f64,
) -> Result<HalfWinding, DefectError> {
    if loop_points.len() < 3 {
        return Err(DefectError::Precondition(
            "winding loop needs at least 3 points".into(),
        ));
    }
    let (u, v) = orthonormal_completion(&(p_ref / p_ref.norm()));
    let angle_at = |x: &Vector3<f64>| -> Result<f64, DefectError> {
        let q = field.sample(x)?;
        let eig = eigen_decompose(&q);
        let s = eig.lambda[0] - SQRT6_OVER_6;
        if s <= s_min {
            return Err(DefectError::DegenerateSample(s));
        }
        let n = eig.n();
        let (a, b) = (n.dot(&u), n.dot(&v));
        if (a * a + b * b).sqrt() < 1e-9 {
            return Err(DefectError::DegenerateSample(s));
        }
        Ok(b.atan2(a))
    };

    let mut points = loop_points.to_vec();
    for _refinement in 0..6 {
        let angles: Vec<f64> = points
            .iter()
            .map(|x| angle_at(x))
            .collect::<Result<_, _>>()?;
        let mut total = 0.0;
        let mut too_coarse = false;
        for i in 0..angles.len() {
            let next = angles[(i + 1) % angles.len()];
            let d = wrap_half_pi(next - angles[i]);
            if d.abs() >= std::f64::consts::FRAC_PI_4 {
                too_coarse = true;
                break;
            }
            total += d;
        }
        if too_coarse {
            let mut refined = Vec::with_capacity(points.len() * 2);
            for i in 0..points.len() {
                let next = points[(i + 1) % points.len()];
                refined.push(points[i]);
                refined.push((points[i] + next) / 2.0);
            }
            points = refined;
            continue;
        }
        let raw = total / (2.0 * std::f64::consts::PI);
        let rounded = (2.0 * raw).round() / 2.0;
        return Ok(if (raw - rounded).abs() < 0.1 {
            HalfWinding::Resolved(rounded)
        } else {
            HalfWinding::Unresolved { raw }
        });
    }
    Err(DefectError::UnderSampledLoop)
}

fn ball_weight(dist: f64, r: f64, h: f64) -> f64 {
    (0.5 + (r - dist) / h).clamp(0.0, 1.0)
}

/// Mean of `s²` over `B_r(x0)` by node quadrature with a smoothed indicator.
fn mean_s_squared(
    field: &QField,
    x0: &Vector3<f64>,
    r: f64,
    cache: &mut HashMap<usize, f64>,
) -> Result<f64, DefectError> {
    let spec = field.spec();
    let h = spec.h();
    let lo = spec.nearest_node(&Vector3::new(x0[0] - r - h, x0[1] - r - h, x0[2] - r - h));
    let hi = spec.nearest_node(&Vector3::new(x0[0] + r + h, x0[1] + r + h, x0[2] + r + h));
    let mut num = 0.0;
    let mut den = 0.0;
    for i in lo[0]..=hi[0] {
        for j in lo[1]..=hi[1] {
            for k in lo[2]..=hi[2] {
                let ijk = [i, j, k];
                let w = ball_weight((spec.pos(ijk) - x0).norm(), r, h);
                if w == 0.0 {
                    continue;
                }
                let idx = spec.idx(ijk);
                let s = match cache.get(&idx) {
                    Some(s) => *s,
                    None => {
                        let s = perturb::decompose(&field.data()[idx])?.s;
                        cache.insert(idx, s);
                        s
                    }
                };
                num += w * s * s;
                den += w;
            }
        }
    }
    Ok(num / den)
}

/// Least-squares slope of `ln mean(s²)` against `ln r`, halved: the local
/// vanishing-order estimate, with the largest regression deviation.
pub fn vanishing_order(
    field: &QField,
    x0: &Vector3<f64>,
    radii: &[f64],
) -> Result<(f64, f64), DefectError> {
    let h = field.spec().h();
    if radii.len() < 2 {
        return Err(DefectError::Precondition("need at least two radii".into()));
    }
    for &r in radii {
        if r < 4.0 * h - 1e-12 {
            return Err(DefectError::RadiiTooSmall(r, 4.0 * h));
        }
        if x0.norm() + r > 1.0 {
            return Err(DefectError::Precondition(format!(
                "ball of radius {r} around ({:.2}, {:.2}, {:.2}) leaves the domain",
                x0[0], x0[1], x0[2]
            )));
        }
    }
    let mut cache = HashMap::new();
    let mut xs = Vec::with_capacity(radii.len());
    let mut ys = Vec::with_capacity(radii.len());
    for &r in radii {
        let a = mean_s_squared(field, x0, r, &mut cache)?;
        if a <= 0.0 {
            return Err(DefectError::Precondition(
                "mean s² vanished identically on a sampling ball".into(),
            ));
        }
        xs.push(r.ln());
        ys.push(a.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    Ok((slope / 2.0, residual))
}

#[derive(Clone, Copy, Debug)]
pub struct BlowupSample {
    /// Coordinates on the unit sampling ball.
    pub x: Vector3<f64>,
    /// `U(x0 + r x)/r^k` as a full tensor.
    pub u: QTensor,
    pub s: f64,
    /// λ3 eigenvector, sign-aligned to the value at the center.
    pub p: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct BlowupSamples {
    pub x0: Vector3<f64>,
    pub r: f64,
    pub k: usize,
    pub p0: Vector3<f64>,
    pub points: Vec<BlowupSample>,
}

/// Samples the rescaled decomposition `(U_r, s_r, p_r)` on a cubic lattice
/// over the unit ball: `U_r(x) = U(x0 + r x)/r^k`.
pub fn blow_up(
    field: &QField,
    x0: &Vector3<f64>,
    r: f64,
    k: usize,
    lattice_m: usize,
) -> Result<BlowupSamples, DefectError> {
    let h = field.spec().h();
    if r < 4.0 * h - 1e-12 {
        return Err(DefectError::RadiiTooSmall(r, 4.0 * h));
    }
    if x0.norm() + r > 1.0 - h {
        return Err(DefectError::Precondition(
            "blow-up ball leaves the sampling domain".into(),
        ));
    }
    let m = lattice_m.max(5) | 1;
    let p0 = perturb::decompose(&field.sample(x0)?)?.p;
    let scale = r.powi(k as i32);
    let mut points = Vec::new();
    for i in 0..m {
        for j in 0..m {
            for l in 0..m {
                let x = Vector3::new(
                    -1.0 + 2.0 * i as f64 / (m - 1) as f64,
                    -1.0 + 2.0 * j as f64 / (m - 1) as f64,
                    -1.0 + 2.0 * l as f64 / (m - 1) as f64,
                );
                if x.norm() > 1.0 + 1e-12 {
                    continue;
                }
                let q = field.sample(&(x0 + x * r))?;
                let d = perturb::decompose(&q)?;
                let dot = d.p.dot(&p0);
                if dot.abs() < 0.5 {
                    return Err(DefectError::SignAlignmentFailure(dot.abs()));
                }
                let p = if dot < 0.0 { -d.p } else { d.p };
                points.push(BlowupSample {
                    x,
                    u: d.u.tensor() / scale,
                    s: d.s / scale,
                    p,
                });
            }
        }
    }
    Ok(BlowupSamples {
        x0: *x0,
        r,
        k,
        p0,
        points,
    })
}

/// Degree-k homogeneous tangent-map fit `Ū = u1 E1 + u2 E2 ∈ 𝒰_{p0}` with its
/// relative least-squares residual over the sampling set.
#[derive(Clone, Debug)]
pub struct TangentMapFit {
    pub k: usize,
    pub pair: UPolyPair,
    pub residual: f64,
}

/// Linear least squares of the tangent coefficients against the degree-k
/// monomials. Requires at least `4 × monomial_count(k)` samples.
pub fn fit_tangent_map(
    samples: &BlowupSamples,
    k: usize,
    p0: &Vector3<f64>,
) -> Result<TangentMapFit, DefectError> {
    let nm = monomial_count(k);
    let ns = samples.points.len();
    if ns < 4 * nm {
        return Err(DefectError::RankDeficientFit(format!(
            "{ns} samples for {nm} monomials"
        )));
    }
    let probe = crate::qtensor::TangentTensor::new([0.0, 0.0], *p0)?;
    let (m1, m2) = probe.basis_matrices();
    let exps = monomial_exponents(k);
    let mut a = DMatrix::zeros(ns, nm);
    let mut b1 = DVector::zeros(ns);
    let mut b2 = DVector::zeros(ns);
    for (row, sample) in samples.points.iter().enumerate() {
        for (col, e) in exps.iter().enumerate() {
            a[(row, col)] = sample.x[0].powi(e[0] as i32)
                * sample.x[1].powi(e[1] as i32)
                * sample.x[2].powi(e[2] as i32);
        }
        let um = sample.u.matrix();
        b1[row] = (um.transpose() * m1).trace();
        b2[row] = (um.transpose() * m2).trace();
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin / smax < 1e-10 {
        return Err(DefectError::RankDeficientFit(format!(
            "singular value ratio {:.3e}",
            smin / smax
        )));
    }
    let c1 = svd
        .solve(&b1, 1e-12)
        .map_err(|e| DefectError::RankDeficientFit(e.to_string()))?;
    let c2 = svd
        .solve(&b2, 1e-12)
        .map_err(|e| DefectError::RankDeficientFit(e.to_string()))?;
    let r1 = (&a * &c1 - &b1).norm_squared();
    let r2 = (&a * &c2 - &b2).norm_squared();
    let denom = b1.norm_squared() + b2.norm_squared();
    let residual = if denom == 0.0 {
        0.0
    } else {
        ((r1 + r2) / denom).sqrt().min(1.0)
    };
    let pair = UPolyPair::new(
        *p0,
        HomoPoly::new(k, c1.iter().copied().collect()),
        HomoPoly::new(k, c2.iter().copied().collect()),
    )?;
    Ok(TangentMapFit { k, pair, residual })
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifyOptions {
    /// Residual gate on the tangent-map fit.
    pub fit_tol: f64,
    /// Relative cross-product threshold separating collinear gradient pairs
    /// (exchange planes) from genuine line defects.
    pub tol_parallel: f64,
    /// Relative smallest singular value of the directional-derivative Gram
    /// matrix below which an invariant direction is reported.
    pub invariance_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            fit_tol: 0.15,
            tol_parallel: 0.05,
            invariance_tol: 0.05,
        }
    }
}

/// Classifies a fitted tangent map. Degree 1 separates exchange planes
/// (`a × b ≈ 0`) from half-degree lines with axis `a × b / |a × b|`; degree
/// ≥ 2 reports the vanishing order and, when present, the direction along
/// which the fitted polynomial is translation-invariant.
pub fn classify(
    fit: &TangentMapFit,
    opts: &ClassifyOptions,
) -> Result<Classification, DefectError> {
    if fit.residual > opts.fit_tol {
        return Err(DefectError::ResidualTooLarge(fit.residual));
    }
    if fit.k == 1 {
        let grad = |p: &HomoPoly| Vector3::new(p.coeffs()[0], p.coeffs()[1], p.coeffs()[2]);
        let a = grad(&fit.pair.u1);
        let b = grad(&fit.pair.u2);
        if a.norm().max(b.norm()) < 1e-10 {
            return Ok(Classification::Unresolved);
        }
        let cross = a.cross(&b);
        if cross.norm() <= opts.tol_parallel * (a.norm() * b.norm() + 1e-15) {
            return Ok(Classification::ExchangePlane);
        }
        return Ok(Classification::HalfDegreeLine {
            axis: cross / cross.norm(),
        });
    }

    // Directional-derivative Gram matrix G_ij = Σ_c ∫ ∂i u_c ∂j u_c.
    let mut gram = Matrix3::zeros();
    for poly in [&fit.pair.u1, &fit.pair.u2] {
        let parts: Vec<HomoPoly> = (0..3).map(|axis| poly.partial(axis)).collect();
        for i in 0..3 {
            for j in 0..3 {
                gram[(i, j)] += parts[i].mul(&parts[j]).ball_integral();
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut imin = 0;
    let mut imax = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let invariant_axis = (eig.eigenvalues[imin] <= opts.invariance_tol * eig.eigenvalues[imax])
        .then(|| {
            let v = eig.eigenvectors.column(imin).into_owned();
            Vector3::new(v[0], v[1], v[2]).normalize()
        });
    Ok(Classification::HigherOrder {
        k: fit.k,
        invariant_axis,
    })
}

// ---------------------------------------------------------------------------
// Derivative jets of p and the source polynomials V_m, Y_m.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct JetOptions {
    /// Base finite-difference step; Richardson-extrapolated with step/2.
    pub step: f64,
    /// Relative disagreement between the two steps that is still accepted.
    pub tol: f64,
}

impl Default for JetOptions {
    fn default() -> Self {
        JetOptions {
            step: 0.1,
            tol: 0.5,
        }
    }
}

/// Tensor-valued source polynomial of order `m` built from derivative jets of
/// the λ3 eigenvector at `x0`:
///
/// `V_m(x) = Σ_i Σ_{|α|+|β|=m-2} (D_i D^α p/α!) ⊗ (D_i D^β p/β!) x^{α+β}`
#[derive(Clone, Debug)]
pub struct VPoly {
    pub m: usize,
    pub poly: MatrixPoly,
    /// Jets `D^α p(x0)` for `|α| ≤ m-1`, keyed by multi-index.
    pub jets: Vec<([usize; 3], Vector3<f64>)>,
}

fn multi_indices_up_to(order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for total in 0..=order {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                out.push([a, b, total - a - b]);
            }
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

struct PEvaluator<'a> {
    field: &'a QField,
    x0: Vector3<f64>,
    p0: Vector3<f64>,
    cache: HashMap<[i64; 3], Vector3<f64>>,
}

impl<'a> PEvaluator<'a> {
    fn new(field: &'a QField, x0: Vector3<f64>) -> Result<Self, DefectError> {
        let p0 = perturb::decompose(&field.sample(&x0)?)?.p;
        Ok(PEvaluator {
            field,
            x0,
            p0,
            cache: HashMap::new(),
        })
    }

    /// `p` at `x0 + quantum · offset`, sign-aligned to `p(x0)`.
    fn eval(&mut self, offset: [i64; 3], quantum: f64) -> Result<Vector3<f64>, DefectError> {
        let key = offset;
        if let Some(p) = self.cache.get(&key) {
            return Ok(*p);
        }
        let y = self.x0
            + Vector3::new(
                offset[0] as f64 * quantum,
                offset[1] as f64 * quantum,
                offset[2] as f64 * quantum,
            );
        let d = perturb::decompose(&self.field.sample(&y)?)?;
        let dot = d.p.dot(&self.p0);
        if dot.abs() < 0.5 {
            return Err(DefectError::SignAlignmentFailure(dot.abs()));
        }
        let p = if dot < 0.0 { -d.p } else { d.p };
        self.cache.insert(key, p);
        Ok(p)
    }

    /// Nested central differences for `D^α p(x0)` with per-axis step
    /// `steps · quantum`.
    fn jet(
        &mut self,
        alpha: [usize; 3],
        offset: [i64; 3],
        steps: i64,
        quantum: f64,
    ) -> Result<Vector3<f64>, DefectError> {
        match (0..3).find(|&axis| alpha[axis] > 0) {
            None => self.eval(offset, quantum),
            Some(axis) => {
                let mut da = alpha;
                da[axis] -= 1;
                let mut fwd = offset;
                fwd[axis] += steps;
                let mut bwd = offset;
                bwd[axis] -= steps;
                let pf = self.jet(da, fwd, steps, quantum)?;
                let pb = self.jet(da, bwd, steps, quantum)?;
                Ok((pf - pb) / (2.0 * steps as f64 * quantum))
            }
        }
    }
}

/// Estimates jets `D^α p(x0)` for `|α| ≤ order` by Richardson-extrapolated
/// central differences, verifying step consistency.
fn estimate_jets(
    field: &QField,
    x0: &Vector3<f64>,
    order: usize,
    opts: &JetOptions,
) -> Result<Vec<([usize; 3], Vector3<f64>)>, DefectError> {
    let mut evaluator = PEvaluator::new(field, *x0)?;
    let quantum = opts.step / 2.0;
    let mut jets = Vec::new();
    for alpha in multi_indices_up_to(order) {
        let coarse = evaluator.jet(alpha, [0; 3], 2, quantum)?;
        let fine = evaluator.jet(alpha, [0; 3], 1, quantum)?;
        let richardson = (fine * 4.0 - coarse) / 3.0;
        let total: usize = alpha.iter().sum();
        if total > 0 {
            let disagreement = (fine - coarse).norm();
            let scale = richardson.norm().max(1.0);
            if disagreement > opts.tol * scale {
                return Err(DefectError::JetEstimationFailure(format!(
                    "step disagreement {disagreement:.3e} for jet {alpha:?}"
                )));
            }
        }
        jets.push((alpha, richardson));
    }
    Ok(jets)
}

/// Builds `V_m` from derivative jets of the λ3 eigenvector at `x0`.
pub fn compute_vm(
    field: &QField,
    x0: &Vector3<f64>,
    m: usize,
    opts: &JetOptions,
) -> Result<VPoly, DefectError> {
    if m < 2 {
        return Err(DefectError::Precondition("V_m needs m ≥ 2".into()));
    }
    let jets = estimate_jets(field, x0, m - 1, opts)?;
    let jet = |alpha: [usize; 3]| -> Vector3<f64> {
        jets.iter()
            .find(|(a, _)| *a == alpha)
            .map(|(_, v)| *v)
            .expect("jet order covers m-1")
    };
    let mut poly = MatrixPoly::zero(m - 2);
    let indices = multi_indices_up_to(m - 2);
    for alpha in &indices {
        for beta in &indices {
            let ta: usize = alpha.iter().sum();
            let tb: usize = beta.iter().sum();
            if ta + tb != m - 2 {
                continue;
            }
            let fa = factorial(alpha[0]) * factorial(alpha[1]) * factorial(alpha[2]);
            let fb = factorial(beta[0]) * factorial(beta[1]) * factorial(beta[2]);
            let mut term = Matrix3::zeros();
            for axis in 0..3 {
                let mut da = *alpha;
                da[axis] += 1;
                let mut db = *beta;
                db[axis] += 1;
                let va = jet(da) / fa;
                let vb = jet(db) / fb;
                term += va * vb.transpose();
            }
            let e = [alpha[0] + beta[0], alpha[1] + beta[1], alpha[2] + beta[2]];
            poly.add_term(e, term);
        }
    }
    Ok(VPoly { m, poly, jets })
}

/// Coefficient-wise orthogonal projection of `V_m` onto `𝒰_{p0}`.
pub fn compute_ym(v: &VPoly, p0: &Vector3<f64>) -> Result<UPolyPair, DefectError> {
    Ok(v.poly.project_to_up(p0)?)
}

/// Sup norms of `Y_m` over the unit ball for `m = 2..k-1`; small values are
/// the minimality signature at a genuine order-k point.
pub fn check_ym_vanishing(
    field: &QField,
    x0: &Vector3<f64>,
    k: usize,
    opts: &JetOptions,
) -> Result<Vec<f64>, DefectError> {
    if k < 3 {
        return Err(DefectError::Precondition(
            "Y_m vanishing check needs k ≥ 3".into(),
        ));
    }
    let p0 = perturb::decompose(&field.sample(x0)?)?.p;
    let mut out = Vec::new();
    for m in 2..k {
        let v = compute_vm(field, x0, m, opts)?;
        let y = compute_ym(&v, &p0)?;
        let mut sup: f64 = 0.0;
        let m_lat = 17;
        for i in 0..m_lat {
            for j in 0..m_lat {
                for l in 0..m_lat {
                    let x = Vector3::new(
                        -1.0 + 2.0 * i as f64 / (m_lat - 1) as f64,
                        -1.0 + 2.0 * j as f64 / (m_lat - 1) as f64,
                        -1.0 + 2.0 * l as f64 / (m_lat - 1) as f64,
                    );
                    if x.norm() > 1.0 {
                        continue;
                    }
                    sup = sup.max(y.eval(&x).norm());
                }
            }
        }
        out.push(sup);
    }
    Ok(out)
}

/// Cone-angle profile: for each radius, the largest `dist(x, l_e)/|x - x0|`
/// over candidate positions inside the ball. Each annulus between consecutive
/// radii (and the innermost ball) must contain at least 5 candidates.
///
/// Candidates closer to `x0` than `min_dist` still count towards the annulus
/// population but are excluded from the ratio: below the grid resolution both
/// the distance to the line and the distance to `x0` are detection noise.
pub fn tangent_line_check(
    positions: &[Vector3<f64>],
    x0: &Vector3<f64>,
    axis: &Vector3<f64>,
    radii: &[f64],
    min_dist: f64,
) -> Result<Vec<f64>, DefectError> {
    if radii.len() < 2 || radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(DefectError::Precondition(
            "radii must be strictly decreasing".into(),
        ));
    }
    let e = axis / axis.norm();
    let entries: Vec<(f64, f64)> = positions
        .iter()
        .filter_map(|x| {
            let d = x - x0;
            let dist = d.norm();
            (dist > 1e-12).then(|| (dist, d.cross(&e).norm() / dist))
        })
        .collect();
    for (i, &r) in radii.iter().enumerate() {
        let inner = radii.get(i + 1).copied().unwrap_or(0.0);
        let count = entries
            .iter()
            .filter(|(d, _)| *d <= r && *d > inner)
            .count();
        if count < 5 {
            return Err(DefectError::InsufficientCandidates { radius: r, count });
        }
    }
    Ok(radii
        .iter()
        .map(|&r| {
            entries
                .iter()
                .filter(|(d, _)| *d <= r && *d >= min_dist)
                .map(|(_, ratio)| *ratio)
                .fold(0.0, f64::max)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Full analysis pipeline.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisParams {
    pub beta_threshold: f64,
    pub frame_tol: f64,
    pub max_radius: f64,
    pub radii: Vec<f64>,
    pub k_max: usize,
    /// Acceptance band around an integer vanishing order.
    pub k_band: f64,
    /// Largest admissible regression deviation in the order estimate.
    pub k_residual_max: f64,
    pub fit_radius: f64,
    pub lattice_m: usize,
    pub fit_tol: f64,
    pub tol_parallel: f64,
    pub invariance_tol: f64,
    pub winding_radius: f64,
    pub winding_samples: usize,
    pub s_min: f64,
    /// At most this many candidates are fully analyzed (sorted by β).
    pub max_candidates: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            beta_threshold: 0.05,
            frame_tol: 0.2,
            max_radius: 0.9,
            radii: vec![0.4, 0.28, 0.2, 0.14, 0.1],
            k_max: 4,
            k_band: 0.2,
            k_residual_max: 0.1,
            fit_radius: 0.5,
            lattice_m: 17,
            fit_tol: 0.15,
            tol_parallel: 0.05,
            invariance_tol: 0.05,
            winding_radius: 0.5,
            winding_samples: 64,
            s_min: 1e-3,
            max_candidates: 64,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CandidateRecord {
    pub position: [f64; 3],
    pub beta_min: f64,
    pub frame_jump: f64,
    pub defect: bool,
    pub cluster: usize,
    pub k_hat: Option<f64>,
    pub k: Option<usize>,
    pub regression_residual: Option<f64>,
    pub fit_residual: Option<f64>,
    pub classification: String,
    pub axis: Option<[f64; 3]>,
    pub winding: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub schema: String,
    pub config_hash: String,
    pub grid_n: usize,
    pub cluster_count: usize,
    pub total_candidates: usize,
    pub min_beta_interior: f64,
    pub candidates: Vec<CandidateRecord>,
}

pub const REPORT_SCHEMA: &str = "defect-report/1";

fn circle_loop(
    center: &Vector3<f64>,
    normal: &Vector3<f64>,
    radius: f64,
    samples: usize,
) -> Vec<Vector3<f64>> {
    let (u, v) = orthonormal_completion(&(normal / normal.norm()));
    (0..samples)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / samples as f64;
            center + (u * t.cos() + v * t.sin()) * radius
        })
        .collect()
}

/// Enriches one detected candidate with order, fit, classification and
/// winding. Failures downgrade the candidate to `Unresolved` with a note.
fn enrich_candidate(field: &QField, cand: &mut DefectCandidate, params: &AnalysisParams) {
    let x0 = cand.position;
    let (k_hat, reg_residual) = match vanishing_order(field, &x0, &params.radii) {
        Ok(v) => v,
        Err(e) => {
            cand.note = Some(format!("vanishing order failed: {e}"));
            return;
        }
    };
    cand.k_hat = Some(k_hat);
    cand.regression_residual = Some(reg_residual);
    let k_round = k_hat.round();
    if (k_hat - k_round).abs() > params.k_band
        || reg_residual > params.k_residual_max
        || k_round < 1.0
        || k_round > params.k_max as f64
    {
        cand.note = Some("vanishing order outside the acceptance band".into());
        return;
    }
    let k = k_round as usize;
    cand.k = Some(k);

    let samples = match blow_up(field, &x0, params.fit_radius, k, params.lattice_m) {
        Ok(s) => s,
        Err(e) => {
            cand.note = Some(format!("blow-up failed: {e}"));
            return;
        }
    };
    let fit = match fit_tangent_map(&samples, k, &samples.p0) {
        Ok(f) => f,
        Err(e) => {
            cand.note = Some(format!("tangent-map fit failed: {e}"));
            return;
        }
    };
    cand.fit_residual = Some(fit.residual);
    let class = match classify(
        &fit,
        &ClassifyOptions {
            fit_tol: params.fit_tol,
            tol_parallel: params.tol_parallel,
            invariance_tol: params.invariance_tol,
        },
    ) {
        Ok(c) => c,
        Err(e) => {
            cand.note = Some(format!("classification failed: {e}"));
            return;
        }
    };
    cand.classification = class;

    // Winding of the leading eigenvector around the relevant loop, with the
    // radius shrunk so the loop stays inside the sampling domain.
    let room = 0.95 * (1.0 - field.spec().h() - x0.norm());
    let winding_loop = match class {
        Classification::HalfDegreeLine { axis } => {
            let radius = params.winding_radius.min(room);
            (radius > 0.0).then(|| circle_loop(&x0, &axis, radius, params.winding_samples))
        }
        Classification::ExchangePlane => {
            // The nodal set is a plane; wind around a parallel contractible
            // loop offset to one side so every sample stays non-degenerate.
            // Offset 1.5 radii along the gradient direction keeps the whole
            // loop at least half a radius away from the plane.
            let radius = params.winding_radius.min(room / 2.5);
            let a = Vector3::new(
                fit.pair.u1.coeffs()[0],
                fit.pair.u1.coeffs()[1],
                fit.pair.u1.coeffs()[2],
            );
            let a_unit = a / a.norm();
            (radius > 0.0).then(|| {
                let center = x0 + a_unit * (1.5 * radius);
                circle_loop(&center, &samples.p0, radius, params.winding_samples)
            })
        }
        _ => None,
    };
    if let Some(points) = winding_loop {
        match winding_number(field, &points, &samples.p0, params.s_min) {
            Ok(HalfWinding::Resolved(w)) => cand.winding = Some(w),
            Ok(HalfWinding::Unresolved { raw }) => {
                cand.note = Some(format!("winding unresolved: raw {raw:.3}"));
            }
            Err(e) => {
                cand.note = Some(format!("winding failed: {e}"));
            }
        }
    }
}

/// Detects candidates and runs the per-candidate analysis, in parallel, up to
/// `params.max_candidates` (the detection list itself is complete).
pub fn run_analysis(field: &QField, params: &AnalysisParams) -> AnalysisReport {
    let detect = DetectOptions {
        beta_threshold: params.beta_threshold,
        frame_tol: params.frame_tol,
        max_radius: params.max_radius,
    };
    let mut candidates = detect_candidates(field, &detect);
    let total = candidates.len();
    let cluster_count = candidates
        .iter()
        .map(|c| c.cluster)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    candidates.truncate(params.max_candidates);
    candidates
        .par_iter_mut()
        .for_each(|cand| enrich_candidate(field, cand, params));

    let beta = beta_field(field);
    let min_beta_interior = beta.min_over(field.roles(), Role::Interior);

    AnalysisReport {
        schema: REPORT_SCHEMA.into(),
        config_hash: String::new(),
        grid_n: field.spec().n(),
        cluster_count,
        total_candidates: total,
        min_beta_interior,
        candidates: candidates
            .iter()
            .map(|c| CandidateRecord {
                position: [c.position[0], c.position[1], c.position[2]],
                beta_min: c.beta_min,
                frame_jump: c.frame_jump,
                defect: c.defect,
                cluster: c.cluster,
                k_hat: c.k_hat,
                k: c.k,
                regression_residual: c.regression_residual,
                fit_residual: c.fit_residual,
                classification: c.classification.label(),
                axis: c.classification.axis().map(|a| [a[0], a[1], a[2]]),
                winding: c.winding,
                note: c.note.clone(),
            })
            .collect(),
    }
}
