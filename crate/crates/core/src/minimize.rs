//! Projected gradient descent on the product of unit spheres, one per
//! interior node, with Armijo backtracking line search.
//!
//! Each accepted step replaces `Q` by `normalize(Q - α g)` nodewise
//! (constrained mode) or `Q - α g` (penalty mode), where `g` is the exact
//! gradient of the discrete energy. Acceptance measures the true energy after
//! normalization, so the energy is non-increasing along accepted steps. The
//! trial step grows geometrically between iterations and shrinks inside the
//! line search. Runs are deterministic for fixed configuration and input.

use crate::energy::{
    constrained_energy, energy_gradient, full_energy_breakdown, grad_sup_norm, penalty_gradient,
    EnergyBreakdown, EnergyError,
};
use crate::field::{QField, Role};
use crate::io::{self, IoError, TraceRow};
use crate::qtensor::QTensor;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Smallest admissible line-search step before the solver reports a stall.
pub const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("line search stalled: step {0:.3e} underflowed")]
    LineSearchStall(f64),
    #[error("energy became non-finite")]
    NonFiniteEnergy,
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("corrupt checkpoint: {0}")]
    CorruptSnapshot(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Constrained,
    Penalty { mu: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: u64,
    pub step0: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub grad_tol: f64,
    pub energy_tol: f64,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 5000,
            step0: 0.05,
            armijo_c: 1e-4,
            shrink: 0.5,
            grad_tol: 1e-5,
            // Effectively off: energy stagnation is an opt-in stop since the
            // gradient test is the primary convergence criterion.
            energy_tol: 1e-300,
            mode: Mode::Constrained,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::BadConfig(msg.into()));
        if self.step0 <= 0.0 {
            return bad("step0 must be positive");
        }
        if !(0.0 < self.armijo_c && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(0.0 < self.shrink && self.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if self.grad_tol <= 0.0 || self.energy_tol <= 0.0 {
            return bad("tolerances must be positive");
        }
        if let Mode::Penalty { mu } = self.mode {
            if mu <= 0.0 {
                return bad("penalty mu must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    EnergyTol,
    MaxIters,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: u64,
    pub final_dirichlet: f64,
    pub final_potential: f64,
    pub final_total: f64,
    pub final_grad_sup: f64,
    pub monotone: bool,
    pub stop: StopReason,
    pub wall_seconds: f64,
    /// Line-search state after the last accepted step, for checkpointing.
    pub final_step: f64,
    /// Global index of the next iteration, for checkpointing.
    pub next_iter: u64,
}

fn evaluate(field: &QField, mode: Mode) -> Result<EnergyBreakdown, SolverError> {
    let e = match mode {
        Mode::Constrained => constrained_energy(field)?,
        Mode::Penalty { mu } => full_energy_breakdown(field, 1.0, mu),
    };
    if !e.total.is_finite() {
        return Err(SolverError::NonFiniteEnergy);
    }
    Ok(e)
}

fn gradient(field: &QField, mode: Mode) -> Result<Vec<[f64; 5]>, SolverError> {
    Ok(match mode {
        Mode::Constrained => energy_gradient(field)?,
        Mode::Penalty { mu } => penalty_gradient(field, 1.0, mu),
    })
}

fn step_field(base: &QField, grad: &[[f64; 5]], alpha: f64, mode: Mode, out: &mut QField) {
    let roles = base.roles().to_vec();
    out.data_mut()
        .iter_mut()
        .zip(base.data())
        .zip(roles.iter().zip(grad))
        .for_each(|((slot, q), (role, g))| {
            if *role != Role::Interior {
                *slot = *q;
                return;
            }
            let mut c = q.coeffs();
            for a in 0..5 {
                c[a] -= alpha * g[a];
            }
            let stepped = QTensor::new(c);
            *slot = match mode {
                Mode::Constrained => {
                    let n = stepped.norm();
                    stepped / n
                }
                Mode::Penalty { .. } => stepped,
            };
        });
}

/// Minimizes the field in place starting from iteration/step state
/// `(start_iter, start_step)`; used directly when resuming a checkpoint.
pub fn minimize_from(
    field: &mut QField,
    cfg: &SolverConfig,
    start_iter: u64,
    start_step: f64,
) -> Result<(SolverReport, Vec<TraceRow>), SolverError> {
    cfg.validate()?;
    let t0 = std::time::Instant::now();
    let cell = field.spec().h().powi(3);
    let mut energy = evaluate(field, cfg.mode)?;
    let mut rows = Vec::new();
    let mut step = start_step;
    let mut monotone = true;
    let mut candidate = field.clone();
    let mut stop = StopReason::MaxIters;
    let mut iter = start_iter;
    let mut grad_sup = f64::INFINITY;

    while iter < cfg.max_iters {
        let grad = gradient(field, cfg.mode)?;
        grad_sup = grad_sup_norm(&grad);
        rows.push(TraceRow {
            iter,
            dirichlet: energy.dirichlet,
            potential: energy.potential,
            total: energy.total,
            grad_norm: grad_sup,
        });
        if grad_sup <= cfg.grad_tol {
            stop = StopReason::GradTol;
            break;
        }
        let gnorm2: f64 = cell
            * grad
                .iter()
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>();

        // Energy differences below the rounding scale of the total cannot be
        // compared; the Armijo test carries that slack, and the trial step
        // only grows while the predicted decrement is still resolvable.
        let slack = 32.0 * f64::EPSILON * (1.0 + energy.total.abs());
        let grown = (step / cfg.shrink).min(cfg.step0 * 1e4);
        let mut alpha = if cfg.armijo_c * grown * gnorm2 >= 4.0 * slack {
            grown
        } else {
            step
        };
        let accepted;
        loop {
            step_field(field, &grad, alpha, cfg.mode, &mut candidate);
            let e_new = evaluate(&candidate, cfg.mode)?;
            if e_new.total <= energy.total - cfg.armijo_c * alpha * gnorm2 + slack {
                accepted = e_new;
                break;
            }
            alpha *= cfg.shrink;
            if alpha < MIN_STEP {
                return Err(SolverError::LineSearchStall(alpha));
            }
        }
        if accepted.total > energy.total + slack {
            monotone = false;
        }
        let decrease = energy.total - accepted.total;
        std::mem::swap(field, &mut candidate);
        energy = accepted;
        step = alpha;
        iter += 1;
        if decrease.abs() <= cfg.energy_tol && cfg.energy_tol > slack {
            stop = StopReason::EnergyTol;
            break;
        }
    }

    if stop != StopReason::GradTol {
        // The loop-top value belongs to the state before the last accepted
        // step; report the gradient of the field actually returned.
        grad_sup = grad_sup_norm(&gradient(field, cfg.mode)?);
    }
    Ok((
        SolverReport {
            iterations: iter - start_iter,
            final_dirichlet: energy.dirichlet,
            final_potential: energy.potential,
            final_total: energy.total,
            final_grad_sup: grad_sup,
            monotone,
            stop,
            wall_seconds: t0.elapsed().as_secs_f64(),
            final_step: step,
            next_iter: iter,
        },
        rows,
    ))
}

pub fn minimize(
    field: &mut QField,
    cfg: &SolverConfig,
) -> Result<(SolverReport, Vec<TraceRow>), SolverError> {
    minimize_from(field, cfg, 0, cfg.step0)
}

/// Seeded tangent perturbation of the interior, used to break symmetric
/// saddle initializations. Keeps `|Q| = 1`.
pub fn apply_random_tangent_perturbation(field: &mut QField, eps: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roles = field.roles().to_vec();
    for (idx, role) in roles.iter().enumerate() {
        if *role != Role::Interior {
            continue;
        }
        let q = field.data()[idx];
        let mut v = [0.0f64; 5];
        for slot in &mut v {
            *slot = rng.gen_range(-1.0..1.0);
        }
        let radial: f64 = (0..5).map(|a| v[a] * q.coeff(a)).sum();
        let mut c = q.coeffs();
        for a in 0..5 {
            c[a] += eps * (v[a] - radial * q.coeff(a));
        }
        let stepped = QTensor::new(c);
        field.data_mut()[idx] = stepped / stepped.norm();
    }
}

/// Solver state captured by a checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub field: QField,
    pub cfg: SolverConfig,
    pub iter: u64,
    pub step: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    cfg: SolverConfig,
    iter: u64,
    step: f64,
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), SolverError> {
    let mut w = BufWriter::new(File::create(path).map_err(IoError::from)?);
    w.write_all(CHECKPOINT_MAGIC).map_err(IoError::from)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())
        .map_err(IoError::from)?;
    let meta = serde_json::to_vec(&CheckpointMeta {
        cfg: ck.cfg,
        iter: ck.iter,
        step: ck.step,
    })
    .expect("checkpoint metadata serializes");
    w.write_all(&(meta.len() as u64).to_le_bytes())
        .map_err(IoError::from)?;
    w.write_all(&meta).map_err(IoError::from)?;
    io::write_snapshot_to(&mut w, &ck.field)?;
    w.flush().map_err(IoError::from)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, SolverError> {
    let mut r = BufReader::new(File::open(path).map_err(IoError::from)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| SolverError::CorruptSnapshot("file too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SolverError::CorruptSnapshot(format!("bad magic {magic:?}")));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)
        .map_err(|_| SolverError::CorruptSnapshot("missing version".into()))?;
    if u32::from_le_bytes(buf4) != CHECKPOINT_VERSION {
        return Err(SolverError::CorruptSnapshot("unsupported version".into()));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)
        .map_err(|_| SolverError::CorruptSnapshot("missing metadata length".into()))?;
    let len = u64::from_le_bytes(buf8) as usize;
    if len > 1 << 20 {
        return Err(SolverError::CorruptSnapshot("metadata too large".into()));
    }
    let mut meta_bytes = vec![0u8; len];
    r.read_exact(&mut meta_bytes)
        .map_err(|_| SolverError::CorruptSnapshot("truncated metadata".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| SolverError::CorruptSnapshot(format!("bad metadata: {e}")))?;
    let field =
        io::read_snapshot_from(&mut r).map_err(|e| SolverError::CorruptSnapshot(e.to_string()))?;
    Ok(Checkpoint {
        field,
        cfg: meta.cfg,
        iter: meta.iter,
        step: meta.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{hedgehog_boundary, GridSpec, QField};
    use crate::qtensor::{make_uniaxial, UniaxialSign};
    use nalgebra::Vector3;

    #[test]
    fn constant_minimizer_converges_immediately() {
        let spec = GridSpec::new(9).unwrap();
        let q = make_uniaxial(&Vector3::x(), UniaxialSign::Positive).unwrap();
        let mut field = QField::uniform(spec, q);
        let cfg = SolverConfig::default();
        let before = field.data().to_vec();
        let (report, rows) = minimize(&mut field, &cfg).unwrap();
        assert_eq!(report.iterations, 0);
        assert_eq!(report.stop, StopReason::GradTol);
        assert_eq!(rows.len(), 1);
        for (a, b) in before.iter().zip(field.data()) {
            assert_eq!(a.coeffs(), b.coeffs());
        }
    }

    #[test]
    fn descent_is_monotone_and_keeps_constraints() {
        let spec = GridSpec::new(9).unwrap();
        let mut field = hedgehog_boundary(spec);
        let boundary_before: Vec<_> = field
            .data()
            .iter()
            .zip(field.roles())
            .filter(|(_, r)| **r == Role::Boundary)
            .map(|(q, _)| q.coeffs())
            .collect();
        let cfg = SolverConfig {
            max_iters: 60,
            ..Default::default()
        };
        let (report, rows) = minimize(&mut field, &cfg).unwrap();
        assert!(report.monotone);
        for pair in rows.windows(2) {
            assert!(pair[1].total <= pair[0].total + 1e-14);
        }
        assert!(field.max_unit_norm_deviation() < 1e-12);
        let boundary_after: Vec<_> = field
            .data()
            .iter()
            .zip(field.roles())
            .filter(|(_, r)| **r == Role::Boundary)
            .map(|(q, _)| q.coeffs())
            .collect();
        assert_eq!(
            boundary_before, boundary_after,
            "Dirichlet shell must be frozen"
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = GridSpec::new(9).unwrap();
        let cfg = SolverConfig {
            max_iters: 25,
            ..Default::default()
        };
        let run = || {
            let mut field = hedgehog_boundary(spec);
            let (_, rows) = minimize(&mut field, &cfg).unwrap();
            rows
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn penalty_mode_keeps_norm_near_one() {
        let spec = GridSpec::new(9).unwrap();
        let mut field = hedgehog_boundary(spec);
        let cfg = SolverConfig {
            max_iters: 400,
            mode: Mode::Penalty { mu: 1000.0 },
            grad_tol: 1e-4,
            ..Default::default()
        };
        let (report, _) = minimize(&mut field, &cfg).unwrap();
        assert!(report.monotone);
        let dev = field.max_unit_norm_deviation();
        assert!(
            dev <= 0.05,
            "norm deviation {dev} exceeds the baseline bound"
        );
    }

    #[test]
    fn checkpoint_round_trip_and_resume_determinism() {
        let spec = GridSpec::new(9).unwrap();
        let cfg = SolverConfig {
            max_iters: 20,
            ..Default::default()
        };

        // Uninterrupted run.
        let mut full_field = hedgehog_boundary(spec);
        let (_, full_rows) = minimize(&mut full_field, &cfg).unwrap();

        // Interrupted at iteration 10, checkpointed, resumed.
        let mut field = hedgehog_boundary(spec);
        let cfg_half = SolverConfig {
            max_iters: 10,
            ..cfg
        };
        let (report_half, mut rows) = minimize(&mut field, &cfg_half).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.qckp");
        save_checkpoint(
            &Checkpoint {
                field: field.clone(),
                cfg,
                iter: report_half.next_iter,
                step: report_half.final_step,
            },
            &path,
        )
        .unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.cfg, cfg);
        for (a, b) in field.data().iter().zip(ck.field.data()) {
            assert_eq!(a.coeffs(), b.coeffs());
        }
        let mut resumed = ck.field;
        let (_, tail) = minimize_from(&mut resumed, &ck.cfg, ck.iter, ck.step).unwrap();
        rows.extend(tail);
        assert_eq!(rows, full_rows);
        for (a, b) in resumed.data().iter().zip(full_field.data()) {
            assert_eq!(a.coeffs(), b.coeffs());
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let spec = GridSpec::new(9).unwrap();
        let field = hedgehog_boundary(spec);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.qckp");
        save_checkpoint(
            &Checkpoint {
                field,
                cfg: SolverConfig::default(),
                iter: 3,
                step: 0.05,
            },
            &path,
        )
        .unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(SolverError::CorruptSnapshot(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        cfg.shrink = 1.5;
        assert!(matches!(cfg.validate(), Err(SolverError::BadConfig(_))));
        cfg = SolverConfig {
            grad_tol: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn random_perturbation_is_seeded_and_unit_preserving() {
        let spec = GridSpec::new(9).unwrap();
        let mut a = hedgehog_boundary(spec);
        let mut b = hedgehog_boundary(spec);
        apply_random_tangent_perturbation(&mut a, 0.05, 42);
        apply_random_tangent_perturbation(&mut b, 0.05, 42);
        assert!(a.max_unit_norm_deviation() < 1e-12);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.coeffs(), y.coeffs());
        }
        let mut c = hedgehog_boundary(spec);
        apply_random_tangent_perturbation(&mut c, 0.05, 43);
        assert!(a
            .data()
            .iter()
            .zip(c.data())
            .any(|(x, y)| x.coeffs() != y.coeffs()));
    }
}
