//! Built-in property batteries: fast, deterministic re-checks of the
//! library's analytic contracts, printed as a pass/fail table.

use nalgebra::{Matrix3, Vector3};
use qdefect::consts::{INV_3_SQRT6, SQRT6, SQRT6_OVER_6};
use qdefect::defects;
use qdefect::energy;
use qdefect::field::{self, GridSpec};
use qdefect::perturb;
use qdefect::qtensor::{self, QTensor, UniaxialSign};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> CheckResult {
    CheckResult { name, pass, detail }
}

fn random_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_qtensor(rng: &mut impl Rng) -> QTensor {
    QTensor::new([
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ])
}

/// Characteristic-polynomial root finding by bisection: for traceless
/// symmetric Q, `det(Q - tI) = -t³ + (|Q|²/2) t + det(Q)` and all roots lie
/// in `[-|Q|, |Q|]`. Independent of the trigonometric eigensolver.
pub fn bisection_eigenvalues(q: &QTensor) -> [f64; 3] {
    let half_norm2 = q.norm_squared() / 2.0;
    let det = q.matrix().determinant();
    let p = |t: f64| -t * t * t + half_norm2 * t + det;
    let bound = q.norm() + 1e-12;
    // Critical points of the cubic bracket the three roots.
    let crit = (half_norm2 / 3.0).max(0.0).sqrt();
    let intervals = [(-bound, -crit), (-crit, crit), (crit, bound)];
    let mut roots = [0.0; 3];
    for (k, interval) in intervals.iter().enumerate() {
        let (mut lo, mut hi) = *interval;
        let mut flo = p(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fmid = p(mid);
            if (flo <= 0.0) == (fmid <= 0.0) {
                lo = mid;
                flo = fmid;
            } else {
                hi = mid;
            }
        }
        roots[k] = 0.5 * (lo + hi);
    }
    roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
    roots
}

fn uniaxial_extremes() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = random_unit_vector(&mut rng);
        let bp = qtensor::biaxiality(&qtensor::make_uniaxial(&n, UniaxialSign::Positive).unwrap())
            .unwrap();
        let bm = qtensor::biaxiality(&qtensor::make_uniaxial(&n, UniaxialSign::Negative).unwrap())
            .unwrap();
        worst = worst.max((bp - 1.0).abs()).max((bm + 1.0).abs());
    }
    check(
        "uniaxial-extremes",
        worst < 1e-12,
        format!("max |β ∓ 1| = {worst:.2e}"),
    )
}

fn eigen_oracle() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = random_qtensor(&mut rng);
        let eig = qtensor::eigen_decompose(&q);
        let oracle = bisection_eigenvalues(&q);
        for i in 0..3 {
            worst = worst.max((eig.lambda[i] - oracle[i]).abs());
        }
        worst = worst.max((eig.reconstruct() - q).norm());
    }
    check(
        "eigen-oracle",
        worst < 1e-10,
        format!("max eigenvalue/reconstruction error = {worst:.2e}"),
    )
}

fn split_identities() -> CheckResult {
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let delta = SQRT6_OVER_6 * (i as f64) / 9_999.0;
        let sp = perturb::split_from_delta(delta).unwrap();
        let c1 = (sp.s + sp.r + sp.delta).abs();
        let c2 = (sp.s * sp.s
            + sp.r * sp.r
            + sp.delta * sp.delta
            + SQRT6 / 3.0 * (sp.s + sp.r - 2.0 * sp.delta))
            .abs();
        let round = (perturb::split_from_delta(perturb::delta_from_s(sp.s).unwrap())
            .unwrap()
            .s
            - sp.s)
            .abs();
        worst = worst.max(c1).max(c2).max(round);
    }
    check(
        "split-identities",
        worst < 1e-12,
        format!("max constraint/round-trip defect = {worst:.2e}"),
    )
}

fn projection_orthogonality() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p = random_unit_vector(&mut rng);
        let v = random_qtensor(&mut rng).matrix() + Matrix3::identity() * rng.gen_range(-0.5..0.5);
        let y = qtensor::project_to_up(&v, &p).unwrap();
        let ym = y.matrix();
        worst = worst.max((ym * p).norm());
        worst = worst.max(ym.trace().abs());
        let y2 = qtensor::project_to_up(&ym, &p).unwrap();
        worst = worst.max((y2.matrix() - ym).norm());
        let (m1, m2) = y.basis_matrices();
        let res = v - ym;
        worst = worst.max((res.transpose() * m1).trace().abs());
        worst = worst.max((res.transpose() * m2).trace().abs());
    }
    check(
        "projection-orthogonality",
        worst < 1e-12,
        format!("max projection defect = {worst:.2e}"),
    )
}

fn gradient_fd() -> CheckResult {
    let spec = GridSpec::new(17).unwrap();
    let fieldv = field::hedgehog_boundary(spec);
    let grad = match energy::energy_gradient(&fieldv) {
        Ok(g) => g,
        Err(e) => return check("gradient-fd", false, e.to_string()),
    };
    let cell = spec.h().powi(3);
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut dir = vec![[0.0f64; 5]; fieldv.data().len()];
        for (idx, slot) in dir.iter_mut().enumerate() {
            if fieldv.roles()[idx] != field::Role::Interior {
                continue;
            }
            let q = fieldv.data()[idx];
            let mut v = [0.0f64; 5];
            for x in &mut v {
                *x = rng.gen_range(-1.0..1.0);
            }
            let radial: f64 = (0..5).map(|a| v[a] * q.coeff(a)).sum();
            for a in 0..5 {
                v[a] -= radial * q.coeff(a);
            }
            *slot = v;
        }
        let eps = 1e-6;
        let shifted = |sign: f64| {
            let mut f = fieldv.clone();
            for idx in 0..f.data().len() {
                let mut c = f.data()[idx].coeffs();
                for a in 0..5 {
                    c[a] += sign * eps * dir[idx][a];
                }
                f.data_mut()[idx] = QTensor::new(c);
            }
            energy::constrained_energy(&f).unwrap().total
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        let an: f64 = cell
            * grad
                .iter()
                .zip(&dir)
                .map(|(g, v)| (0..5).map(|a| g[a] * v[a]).sum::<f64>())
                .sum::<f64>();
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-300));
    }
    check(
        "gradient-fd",
        worst < 1e-6,
        format!("max relative error = {worst:.2e}"),
    )
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().map(|x| x.ln()).sum::<f64>() / n;
    let my = ys.iter().map(|y| y.ln()).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x.ln() - mx).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x.ln() - mx) * (y.ln() - my))
        .sum();
    sxy / sxx
}

fn beta_expansion() -> CheckResult {
    // |β(Q(s)) - (-1 + 9s²)| is cubic in s.
    let p = Vector3::z();
    let n = Vector3::x();
    let amps = [0.02, 0.04, 0.08];
    let defects: Vec<f64> = amps
        .iter()
        .map(|&s| {
            let q = perturb::reconstruct(&p, s, &n).unwrap();
            (qtensor::biaxiality(&q).unwrap() - (-1.0 + 9.0 * s * s)).abs()
        })
        .collect();
    let slope = log_slope(&amps, &defects);
    check(
        "beta-expansion",
        slope >= 2.7,
        format!("log-log slope = {slope:.2}"),
    )
}

fn tau_order(perturbation: f64) -> CheckResult {
    let svals = [1e-3, 2e-3, 4e-3];
    let tvals: Vec<f64> = svals
        .iter()
        .map(|&s| (perturb::tau(s).unwrap() + perturbation).abs())
        .collect();
    let slope = log_slope(&svals, &tvals);
    check(
        "tau-order",
        slope >= 2.9,
        format!("log-log slope = {slope:.2}"),
    )
}

fn energy_identity() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = random_qtensor(&mut rng);
        if q.norm() < 1e-3 {
            continue;
        }
        let q = q.normalized().unwrap();
        let w = energy::bulk_w(&q);
        let pot = INV_3_SQRT6 * (1.0 - qtensor::biaxiality(&q).unwrap());
        worst = worst.max((w - pot).abs());
    }
    check(
        "energy-identity",
        worst < 1e-10,
        format!("max |W - (1-β)/(3√6)| = {worst:.2e}"),
    )
}

fn energy_expansion() -> CheckResult {
    // Pointwise defect of the leading-order energy density identity on the
    // half-degree family scales cubically with the amplitude.
    let spec = GridSpec::new(33).unwrap();
    let amps = [0.02, 0.04, 0.08];
    let probes = [[20usize, 16, 16], [18, 19, 14], [13, 18, 17]];
    let mut defect_max = Vec::new();
    for &amp in &amps {
        let f = match field::synthetic_disclination(
            spec,
            &Vector3::z(),
            amp,
            field::DisclinationCase::HalfDegree,
        ) {
            Ok(f) => f,
            Err(e) => return check("energy-expansion", false, e.to_string()),
        };
        let mut worst: f64 = 0.0;
        for &ijk in &probes {
            match energy_density_defect(&f, ijk) {
                Ok(d) => worst = worst.max(d),
                Err(e) => return check("energy-expansion", false, e),
            }
        }
        defect_max.push(worst);
    }
    let slope = log_slope(&amps, &defect_max);
    check(
        "energy-expansion",
        slope >= 2.7,
        format!("log-log slope = {slope:.2}"),
    )
}

/// |(½|∇Q|² + (1-β)/(3√6)) - (½|∇U|² + (2 - (9/2)|U|²)/(3√6))| at a node of a
/// constant-p field (the ∇p terms vanish identically there).
pub fn energy_density_defect(fieldv: &field::QField, ijk: [usize; 3]) -> Result<f64, String> {
    let spec = fieldv.spec();
    let g = fieldv.gradient(ijk).map_err(|e| e.to_string())?;
    let grad_q: f64 = g
        .iter()
        .map(|ax| ax.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let beta = qtensor::biaxiality(&fieldv.get(ijk)).map_err(|e| e.to_string())?;
    let full = 0.5 * grad_q + INV_3_SQRT6 * (1.0 - beta);

    let du = |node: [usize; 3]| -> Result<QTensor, String> {
        Ok(perturb::decompose(&fieldv.get(node))
            .map_err(|e| e.to_string())?
            .u
            .tensor())
    };
    let u0 = du(ijk)?;
    let mut grad_u = 0.0;
    for axis in 0..3 {
        let mut fwd = ijk;
        fwd[axis] += 1;
        let mut bwd = ijk;
        bwd[axis] -= 1;
        let d = (du(fwd)? - du(bwd)?) / (2.0 * spec.h());
        grad_u += d.norm_squared();
    }
    let leading = 0.5 * grad_u + INV_3_SQRT6 * (2.0 - 4.5 * u0.norm_squared());
    Ok((full - leading).abs())
}

fn winding_consistency() -> CheckResult {
    let spec = GridSpec::new(33).unwrap();
    let f = match field::synthetic_disclination(
        spec,
        &Vector3::z(),
        0.1,
        field::DisclinationCase::HalfDegree,
    ) {
        Ok(f) => f,
        Err(e) => return check("winding-consistency", false, e.to_string()),
    };
    let points: Vec<Vector3<f64>> = (0..48)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / 48.0;
            Vector3::new(0.5 * t.cos(), 0.5 * t.sin(), 0.0)
        })
        .collect();
    match defects::winding_number(&f, &points, &Vector3::z(), 1e-3) {
        Ok(w) => {
            let v = w.value().map(f64::abs);
            check(
                "winding-consistency",
                v == Some(0.5),
                format!("|winding| = {v:?}"),
            )
        }
        Err(e) => check("winding-consistency", false, e.to_string()),
    }
}

/// Runs every battery; `tau_perturbation` is a test hook that injects an
/// additive error into the tau-order check.
pub fn run_all(tau_perturbation: f64) -> Vec<CheckResult> {
    vec![
        uniaxial_extremes(),
        eigen_oracle(),
        split_identities(),
        projection_orthogonality(),
        gradient_fd(),
        beta_expansion(),
        tau_order(tau_perturbation),
        energy_identity(),
        energy_expansion(),
        winding_consistency(),
    ]
}
