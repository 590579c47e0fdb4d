//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured quantity. Expected values come from
//! independent oracles (characteristic-polynomial bisection, closed-form
//! integrals, series order checks) or from committed regression baselines.

use nalgebra::Vector3;
use qdefect::defects::{
    blow_up, classify, detect_candidates, fit_tangent_map, run_analysis, tangent_line_check,
    vanishing_order, AnalysisParams, Classification, DetectOptions,
};
use qdefect::energy::{blowup_energy_parts, constrained_energy, energy_gradient};
use qdefect::field::{
    hedgehog_boundary, synthetic_disclination, synthetic_from_tangent_polys, DisclinationCase,
    GridSpec, QField, Role,
};
use qdefect::minimize::{minimize, SolverConfig};
use qdefect::perturb;
use qdefect::poly::HomoPoly;
use qdefect::qtensor::{self, QTensor, UniaxialSign};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

// Committed regression baseline for the N = 33 hedgehog run (criterion 11).
const BASELINE_ENERGY: f64 = 20.376118322937213;
const BASELINE_CANDIDATES: usize = 52;

const POW_3_2_QUARTER: f64 = 1.106_681_919_700_321_5;
const INV_3_SQRT6: f64 = 0.136_082_763_487_954_34;

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

/// Independent spectral oracle: bisection on the characteristic polynomial
/// `det(Q - tI) = -t³ + (|Q|²/2)t + det(Q)` over `[-|Q|, |Q|]`, bracketed by
/// the critical points of the cubic.
fn oracle_eigenvalues(q: &QTensor) -> [f64; 3] {
    let half_norm2 = q.norm_squared() / 2.0;
    let det = q.matrix().determinant();
    let p = |t: f64| -t * t * t + half_norm2 * t + det;
    let bound = q.norm() + 1e-12;
    let crit = (half_norm2 / 3.0).sqrt();
    let intervals = [(-bound, -crit), (-crit, crit), (crit, bound)];
    let mut roots = [0.0; 3];
    for (k, interval) in intervals.iter().enumerate() {
        let (mut lo, mut hi) = *interval;
        let mut flo = p(lo);
        for _ in 0..90 {
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

#[test]
fn acceptance_01_biaxiality_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = random_unit_vector(&mut rng);
        let bp = qtensor::biaxiality(&qtensor::make_uniaxial(&n, UniaxialSign::Positive).unwrap())
            .unwrap();
        let bm = qtensor::biaxiality(&qtensor::make_uniaxial(&n, UniaxialSign::Negative).unwrap())
            .unwrap();
        worst = worst.max((bp - 1.0).abs()).max((bm + 1.0).abs());
    }
    assert!(worst < 1e-12, "max deviation {worst:.3e}");
    println!("criterion 01 biaxiality extremes: PASS (max |β ∓ 1| = {worst:.2e})");
}

#[test]
fn acceptance_02_spectral_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_eig: f64 = 0.0;
    let mut worst_rec: f64 = 0.0;
    for _ in 0..100_000 {
        let q = random_qtensor(&mut rng);
        let eig = qtensor::eigen_decompose(&q);
        let oracle = oracle_eigenvalues(&q);
        for i in 0..3 {
            worst_eig = worst_eig.max((eig.lambda[i] - oracle[i]).abs());
        }
        worst_rec = worst_rec.max((eig.reconstruct() - q).norm());
    }
    assert!(worst_eig < 1e-10, "eigenvalue error {worst_eig:.3e}");
    assert!(worst_rec < 1e-10, "reconstruction error {worst_rec:.3e}");
    println!(
        "criterion 02 spectral oracle: PASS (eig err {worst_eig:.2e}, rec err {worst_rec:.2e})"
    );
}

#[test]
fn acceptance_03_split_expansion_order() {
    // |s(δ) - ((3/2)^(1/4)√δ - δ/2)| is O(δ^(3/2)): bounded ratio and a
    // fitted exponent of at least 1.4 across δ ∈ [1e-6, 1e-2].
    let mut deltas = Vec::new();
    let mut defects = Vec::new();
    let mut ratio_max: f64 = 0.0;
    let mut delta = 1e-6;
    while delta <= 1e-2 + 1e-12 {
        let s = perturb::split_from_delta(delta).unwrap().s;
        let series = POW_3_2_QUARTER * delta.sqrt() - delta / 2.0;
        let d = (s - series).abs();
        ratio_max = ratio_max.max(d / delta.powf(1.5));
        deltas.push(delta);
        defects.push(d);
        delta *= 1.6;
    }
    let slope = log_slope(&deltas, &defects);
    assert!(ratio_max <= 1.0, "ratio bound {ratio_max:.3}");
    assert!(slope >= 1.4, "fitted exponent {slope:.3}");
    println!(
        "criterion 03 expansion order: PASS (defect exponent {slope:.2}, ratio ≤ {ratio_max:.3})"
    );
}

#[test]
fn acceptance_04_projection_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(204);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let p = random_unit_vector(&mut rng);
        let v = random_qtensor(&mut rng).matrix()
            + nalgebra::Matrix3::identity() * rng.gen_range(-0.5..0.5);
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
    assert!(worst < 1e-12, "projection defect {worst:.3e}");
    println!("criterion 04 projection contract: PASS (max defect = {worst:.2e})");
}

#[test]
fn acceptance_05_gradient_fidelity() {
    let spec = GridSpec::new(17).unwrap();
    let field = hedgehog_boundary(spec);
    let grad = energy_gradient(&field).unwrap();
    let cell = spec.h().powi(3);
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut dir = vec![[0.0f64; 5]; field.data().len()];
        for (idx, slot) in dir.iter_mut().enumerate() {
            if field.roles()[idx] != Role::Interior {
                continue;
            }
            let q = field.data()[idx];
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
            let mut f = field.clone();
            for idx in 0..f.data().len() {
                let mut c = f.data()[idx].coeffs();
                for a in 0..5 {
                    c[a] += sign * eps * dir[idx][a];
                }
                f.data_mut()[idx] = QTensor::new(c);
            }
            constrained_energy(&f).unwrap().total
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        let analytic: f64 = cell
            * grad
                .iter()
                .zip(&dir)
                .map(|(g, v)| (0..5).map(|a| g[a] * v[a]).sum::<f64>())
                .sum::<f64>();
        worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-300));
    }
    assert!(worst <= 1e-6, "relative gradient error {worst:.3e}");
    println!("criterion 05 gradient fidelity: PASS (max relative error = {worst:.2e})");
}

/// Pointwise defect of the leading-order density identity at a node of a
/// constant-p field: full density minus `½|∇U|² + (2 - (9/2)|U|²)/(3√6)`.
fn density_defect(field: &QField, ijk: [usize; 3]) -> f64 {
    let spec = field.spec();
    let g = field.gradient(ijk).unwrap();
    let grad_q: f64 = g
        .iter()
        .map(|ax| ax.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let beta = qtensor::biaxiality(&field.get(ijk)).unwrap();
    let full = 0.5 * grad_q + INV_3_SQRT6 * (1.0 - beta);
    let u_at = |node: [usize; 3]| perturb::decompose(&field.get(node)).unwrap().u.tensor();
    let u0 = u_at(ijk);
    let mut grad_u = 0.0;
    for axis in 0..3 {
        let mut fwd = ijk;
        fwd[axis] += 1;
        let mut bwd = ijk;
        bwd[axis] -= 1;
        let d = (u_at(fwd) - u_at(bwd)) / (2.0 * spec.h());
        grad_u += d.norm_squared();
    }
    let leading = 0.5 * grad_u + INV_3_SQRT6 * (2.0 - 4.5 * u0.norm_squared());
    (full - leading).abs()
}

#[test]
fn acceptance_06_energy_expansion_order() {
    let spec = GridSpec::new(33).unwrap();
    let amps = [0.02, 0.04, 0.08];
    let probes = [[20usize, 16, 16], [18, 19, 14], [13, 18, 17]];
    let mut worst_defects = Vec::new();
    for &amp in &amps {
        let field =
            synthetic_disclination(spec, &Vector3::z(), amp, DisclinationCase::HalfDegree).unwrap();
        let worst = probes
            .iter()
            .map(|&ijk| density_defect(&field, ijk))
            .fold(0.0, f64::max);
        worst_defects.push(worst);
    }
    let slope = log_slope(&amps, &worst_defects);
    assert!(slope >= 2.7, "energy-expansion slope {slope:.3}");
    println!("criterion 06 energy expansion order: PASS (log-log slope = {slope:.2})");
}

#[test]
fn acceptance_07_blowup_remainder_decay() {
    let spec = GridSpec::new(81).unwrap();
    // Small amplitude keeps the O(r²) part of the remainder dominant over the
    // O(amp·r) part across the whole radius window, so the decay is clean.
    let field =
        synthetic_disclination(spec, &Vector3::z(), 0.01, DisclinationCase::HalfDegree).unwrap();
    let radii = [0.4, 0.2, 0.1];
    let mut ratios = Vec::new();
    for &r in &radii {
        let parts = blowup_energy_parts(&field, &Vector3::zeros(), r, 1)
            .unwrap()
            .blowup
            .unwrap();
        assert!(parts.e1 > 0.0);
        ratios.push(parts.e3.abs() / parts.e1);
    }
    let slope = log_slope(&radii, &ratios);
    assert!(
        slope >= 0.8,
        "remainder decay slope {slope:.3}, ratios {ratios:?}"
    );
    println!(
        "criterion 07 blow-up remainder decay: PASS (E3/E1 slope = {slope:.2}, ratios {ratios:?})"
    );
}

fn analysis_params_for_tests() -> AnalysisParams {
    AnalysisParams {
        radii: vec![0.7, 0.5, 0.35],
        ..Default::default()
    }
}

#[test]
fn acceptance_08_end_to_end_half_degree() {
    let spec = GridSpec::new(33).unwrap();
    let field =
        synthetic_disclination(spec, &Vector3::z(), 0.1, DisclinationCase::HalfDegree).unwrap();

    // Snapshot round trip is part of the pipeline under test.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half_degree.qfld");
    qdefect::io::write_snapshot(&field, &path).unwrap();
    let field = qdefect::io::read_snapshot(&path).unwrap();

    let report = run_analysis(&field, &analysis_params_for_tests());
    let hit = report
        .candidates
        .iter()
        .find(|c| c.classification == "half_degree_line" && c.axis.is_some() && c.winding.is_some())
        .unwrap_or_else(|| panic!("no classified line candidate in {report:?}"));
    let axis = Vector3::from(hit.axis.unwrap());
    let axis_err_deg = axis.dot(&Vector3::z()).abs().min(1.0).acos().to_degrees();
    let k_hat = hit.k_hat.unwrap();
    let winding = hit.winding.unwrap();
    assert!(axis_err_deg <= 2.0, "axis error {axis_err_deg:.3}°");
    assert!((0.9..=1.1).contains(&k_hat), "k̂ = {k_hat:.3}");
    assert!(winding.abs() == 0.5, "winding = {winding}");
    assert!(hit.defect, "line candidate must be flagged as a defect");
    println!(
        "criterion 08 half-degree pipeline: PASS (axis err {axis_err_deg:.2}°, k̂ {k_hat:.2}, winding {winding})"
    );
}

#[test]
fn acceptance_09_end_to_end_exchange_plane() {
    let spec = GridSpec::new(33).unwrap();
    let field = synthetic_disclination(
        spec,
        &Vector3::z(),
        0.1,
        DisclinationCase::Exchange { lambda: 2.0 },
    )
    .unwrap();
    let report = run_analysis(&field, &analysis_params_for_tests());
    let hit = report
        .candidates
        .iter()
        .find(|c| c.classification == "exchange_plane" && c.winding.is_some())
        .unwrap_or_else(|| panic!("no classified exchange candidate in {report:?}"));
    assert_eq!(hit.winding.unwrap(), 0.0, "winding must vanish");
    assert!(!hit.defect, "exchange plane must be tagged non-defect");
    println!(
        "criterion 09 exchange-plane pipeline: PASS (winding 0, non-defect, frame jump {:.3})",
        hit.frame_jump
    );
}

#[test]
fn acceptance_10_higher_order() {
    let spec = GridSpec::new(65).unwrap();
    let amp = 0.05;
    let u1 = HomoPoly::zero(2);
    let u2 = HomoPoly::monomial([1, 1, 0], amp);
    let field = synthetic_from_tangent_polys(spec, &Vector3::z(), &u1, &u2).unwrap();

    let (k_hat, _) = vanishing_order(&field, &Vector3::zeros(), &[0.6, 0.42, 0.3]).unwrap();
    assert!((1.8..=2.2).contains(&k_hat), "k̂ = {k_hat:.3}");

    let samples = blow_up(&field, &Vector3::zeros(), 0.5, 2, 17).unwrap();
    let fit = fit_tangent_map(&samples, 2, &samples.p0).unwrap();
    let class = classify(&fit, &Default::default()).unwrap();
    let invariant_axis = match class {
        Classification::HigherOrder {
            k: 2,
            invariant_axis: Some(axis),
        } => axis,
        other => panic!("expected higher_order(2) with an invariant axis, got {other:?}"),
    };
    assert!((invariant_axis.dot(&Vector3::z()).abs() - 1.0).abs() < 1e-6);

    // With constant p the source V₂ vanishes, so the fitted map must be
    // harmonic: ΔŪ - √6 Y₂ ≡ 0 up to fit roundoff.
    let v2 =
        qdefect::defects::compute_vm(&field, &Vector3::zeros(), 2, &Default::default()).unwrap();
    let y2 = qdefect::defects::compute_ym(&v2, &samples.p0).unwrap();
    let residual = qdefect::energy::ek_residual_sup(&fit.pair, &y2, spec).unwrap();
    assert!(residual <= 1e-8, "Euler-Lagrange residual {residual:.3e}");
    println!(
        "criterion 10 higher order: PASS (k̂ {k_hat:.2}, invariant axis e3, EL residual {residual:.2e})"
    );
}

#[test]
fn acceptance_11_hedgehog_pipeline_baseline() {
    let spec = GridSpec::new(33).unwrap();
    let mut field = hedgehog_boundary(spec);
    let cfg = SolverConfig::default();
    let (report, trace) = minimize(&mut field, &cfg).unwrap();

    assert!(
        report.final_grad_sup <= 1e-5,
        "grad sup {:.3e}",
        report.final_grad_sup
    );
    assert!(report.iterations <= 5000);
    assert!(report.monotone, "energy must be non-increasing");
    let slack = 32.0 * f64::EPSILON * (1.0 + trace[0].total.abs());
    for pair in trace.windows(2) {
        assert!(pair[1].total <= pair[0].total + slack, "trace not monotone");
    }

    let energy_rel = (report.final_total - BASELINE_ENERGY).abs() / BASELINE_ENERGY;
    assert!(
        energy_rel <= 0.01,
        "final energy {} deviates from baseline {BASELINE_ENERGY} by {energy_rel:.2e}",
        report.final_total
    );

    let analysis = run_analysis(&field, &analysis_params_for_tests());
    assert!(
        analysis.min_beta_interior <= -0.9,
        "min β {}",
        analysis.min_beta_interior
    );
    assert!(analysis.cluster_count >= 1);
    assert_eq!(
        analysis.total_candidates, BASELINE_CANDIDATES,
        "candidate count changed from the committed baseline"
    );
    println!(
        "criterion 11 hedgehog baseline: PASS (E {:.9}, grad {:.2e}, {} iters, min β {:.4}, {} candidates)",
        report.final_total,
        report.final_grad_sup,
        report.iterations,
        analysis.min_beta_interior,
        analysis.total_candidates
    );
}

#[test]
fn acceptance_12_tangent_line_profile() {
    let spec = GridSpec::new(65).unwrap();
    let field =
        synthetic_disclination(spec, &Vector3::z(), 0.1, DisclinationCase::HalfDegree).unwrap();
    let candidates = detect_candidates(&field, &DetectOptions::default());
    let positions: Vec<Vector3<f64>> = candidates.iter().map(|c| c.position).collect();
    let radii = [0.4, 0.2, 0.1];
    let profile = tangent_line_check(
        &positions,
        &Vector3::zeros(),
        &Vector3::z(),
        &radii,
        2.0 * spec.h(),
    )
    .unwrap();
    for pair in profile.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-12,
            "cone-angle profile must not increase: {profile:?}"
        );
    }
    println!("criterion 12 tangent-line profile: PASS (profile {profile:?})");
}
