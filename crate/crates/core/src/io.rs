//! File formats: binary field snapshots, legacy VTK structured-points export
//! for scalar diagnostics, and the energy-trace CSV.
//!
//! Snapshot layout (all integers and floats little-endian):
//!
//! ```text
//! magic "QFLD" | u32 version (=1) | u32 N |
//! N³ × 5 f64 coefficients, node-major, k fastest |
//! N³ × u8 role tags (0 interior, 1 boundary, 2 exterior)
//! ```

use crate::field::{GridSpec, QField, Role, ScalarField};
use crate::qtensor::QTensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"QFLD";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

fn role_tag(role: Role) -> u8 {
    match role {
        Role::Interior => 0,
        Role::Boundary => 1,
        Role::Exterior => 2,
    }
}

pub fn write_snapshot_to(w: &mut impl Write, field: &QField) -> Result<(), IoError> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(field.spec().n() as u32).to_le_bytes())?;
    for q in field.data() {
        for a in 0..5 {
            w.write_all(&q.coeff(a).to_le_bytes())?;
        }
    }
    for role in field.roles() {
        w.write_all(&[role_tag(*role)])?;
    }
    Ok(())
}

pub fn read_snapshot_from(r: &mut impl Read) -> Result<QField, IoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| IoError::CorruptSnapshot("file too short for header".into()))?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(IoError::CorruptSnapshot(format!("bad magic {:?}", magic)));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)
        .map_err(|_| IoError::CorruptSnapshot("missing version".into()))?;
    let version = u32::from_le_bytes(buf4);
    if version != SNAPSHOT_VERSION {
        return Err(IoError::CorruptSnapshot(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut buf4)
        .map_err(|_| IoError::CorruptSnapshot("missing grid size".into()))?;
    let n = u32::from_le_bytes(buf4) as usize;
    let spec =
        GridSpec::new(n).map_err(|e| IoError::CorruptSnapshot(format!("bad grid size: {e}")))?;

    let count = spec.node_count();
    let mut data = Vec::with_capacity(count);
    let mut buf8 = [0u8; 8];
    for _ in 0..count {
        let mut c = [0.0f64; 5];
        for slot in &mut c {
            r.read_exact(&mut buf8)
                .map_err(|_| IoError::CorruptSnapshot("truncated coefficient block".into()))?;
            *slot = f64::from_le_bytes(buf8);
        }
        data.push(QTensor::new(c));
    }
    let mut tags = vec![0u8; count];
    r.read_exact(&mut tags)
        .map_err(|_| IoError::CorruptSnapshot("truncated role block".into()))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(IoError::CorruptSnapshot("trailing bytes".into()));
    }

    // Roles are implied by the grid geometry; a mismatch means the payload
    // does not belong to this header.
    let mut roles = Vec::with_capacity(count);
    for idx in 0..count {
        let derived = spec.role_of(&spec.pos(spec.ijk(idx)));
        if tags[idx] != role_tag(derived) {
            return Err(IoError::CorruptSnapshot(format!(
                "role tag {} at node {idx} does not match grid geometry",
                tags[idx]
            )));
        }
        roles.push(derived);
    }
    Ok(QField::from_parts(spec, data, roles))
}

pub fn write_snapshot(field: &QField, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot_to(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<QField, IoError> {
    read_snapshot_from(&mut BufReader::new(File::open(path)?))
}

/// Legacy VTK structured-points export of one scalar per node (ASCII).
/// Exterior nodes are written as stored (zero by construction).
pub fn write_vtk_scalar(scalar: &ScalarField, name: &str, path: &Path) -> Result<(), IoError> {
    let spec = scalar.spec();
    let n = spec.n();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{name} on [-1,1]^3")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {n} {n} {n}")?;
    writeln!(w, "ORIGIN -1 -1 -1")?;
    writeln!(w, "SPACING {h} {h} {h}", h = spec.h())?;
    writeln!(w, "POINT_DATA {}", spec.node_count())?;
    writeln!(w, "SCALARS {name} double")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    // VTK expects x varying fastest.
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                writeln!(w, "{}", scalar.get([i, j, k]))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One line of the energy trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub dirichlet: f64,
    pub potential: f64,
    pub total: f64,
    pub grad_norm: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iter,dirichlet,potential,total,grad_norm")?;
    for row in rows {
        writeln!(
            w,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            row.iter, row.dirichlet, row.potential, row.total, row.grad_norm
        )?;
    }
    w.flush()?;
    Ok(())
}
