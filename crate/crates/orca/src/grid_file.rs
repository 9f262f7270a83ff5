//! Grid fields on disk: a text header line `GRIDFIELD v1 K J T role`, then
//! `K*J*T` little-endian f32 values in `(k, j, t)` row-major order.

use std::path::Path;

use orca_core::{FieldRole, GridField, GridSpec};

use crate::error::{io_err, Error, Result};

const MAGIC: &str = "GRIDFIELD";
const VERSION: &str = "v1";

pub fn header(field: &GridField) -> String {
    format!("{} {} {} {} {} {}", MAGIC, VERSION, field.rows(), field.cols(), field.steps(), field.role())
}

pub fn encode_grid_field(field: &GridField) -> Vec<u8> {
    let mut out = header(field).into_bytes();
    out.push(b'\n');
    out.reserve(field.values().len() * 4);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid_field(bytes: &[u8]) -> Result<GridField> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("grid field has no header line".into()))?;
    let head = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != MAGIC || parts[1] != VERSION {
        return Err(Error::Format(format!("expected \"{} {} K J T role\", got {:?}", MAGIC, VERSION, head)));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad extent {:?} in {:?}", s, head)));
    let (rows, cols, steps) = (dim(parts[2])?, dim(parts[3])?, dim(parts[4])?);
    let role: FieldRole = parts[5].parse()?;
    let body = &bytes[nl + 1..];
    let want = rows * cols * steps * 4;
    if body.len() != want {
        return Err(Error::Format(format!("header declares {}x{}x{} but body has {} bytes", rows, cols, steps, body.len())));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(GridField::new(rows, cols, steps, values, role)?)
}

pub fn write_grid_field(path: &Path, field: &GridField) -> Result<()> {
    std::fs::write(path, encode_grid_field(field)).map_err(io_err(path))
}

/// Reads a field and checks it against the grid and, when given, the step
/// count and role.
pub fn load_grid_field(path: &Path, spec: &GridSpec, steps: Option<usize>, role: Option<FieldRole>) -> Result<GridField> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let field = decode_grid_field(&bytes)?;
    if field.rows() != spec.rows() || field.cols() != spec.cols() {
        return Err(Error::Format(format!(
            "{}: field is {}x{}, grid is {}x{}",
            path.display(),
            field.rows(),
            field.cols(),
            spec.rows(),
            spec.cols()
        )));
    }
    if let Some(t) = steps {
        if field.steps() != t {
            return Err(Error::Format(format!("{}: field has {} steps, expected {}", path.display(), field.steps(), t)));
        }
    }
    if let Some(r) = role {
        if field.role() != r {
            return Err(Error::Format(format!("{}: role is {}, expected {}", path.display(), field.role(), r)));
        }
    }
    Ok(field)
}
