//! Binary snapshot of a state's spectral coefficients.
//!
//! ```text
//! b"GPST" | u32 version = 1 | u32 n | f64 a | n*n x (f64 re, f64 im)
//! ```
//! All little-endian; coefficients in the grid's flat order.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{Field, Grid};

pub const STATE_MAGIC: [u8; 4] = *b"GPST";
pub const STATE_VERSION: u32 = 1;

pub fn state_to_bytes(f: &Field) -> Vec<u8> {
    let g = f.grid();
    let mut out = Vec::with_capacity(20 + 16 * g.len());
    out.extend_from_slice(&STATE_MAGIC);
    out.extend_from_slice(&STATE_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&g.a().to_le_bytes());
    for z in f.coeffs() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn state_from_bytes(bytes: &[u8]) -> Result<Field> {
    let bad = |msg: String| Error::InvalidParams(format!("state file: {msg}"));
    if bytes.len() < 20 || bytes[..4] != STATE_MAGIC {
        return Err(bad("missing GPST header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != STATE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let a = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let grid = Grid::shared(a, n)?;
    let body = &bytes[20..];
    if body.len() != 16 * grid.len() {
        return Err(bad(format!("expected {} coefficient bytes, found {}", 16 * grid.len(), body.len())));
    }
    let coeffs = body
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            )
        })
        .collect();
    Field::from_coeffs(grid, coeffs)
}

pub fn write_state(f: &Field, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, state_to_bytes(f))?;
    Ok(())
}

pub fn read_state(path: impl AsRef<Path>) -> Result<Field> {
    state_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::State;

    #[test]
    fn round_trip() {
        let grid = Grid::shared(18.0, 32).unwrap();
        let s = State::random(grid, 4);
        let bytes = state_to_bytes(&s);
        let back = state_from_bytes(&bytes).unwrap();
        assert_eq!(back.coeffs(), s.coeffs());
        assert_eq!(back.grid().a(), 18.0);
        assert!(state_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(state_from_bytes(b"nope").is_err());
    }
}
