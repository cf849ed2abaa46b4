//! Matrix serialisation.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"THMAT\0\0\0"
//! 8       4     format version (u32, currently 1)
//! 12      4     reserved, zero
//! 16      8     rows m (u64)
//! 24      8     cols n (u64)
//! 32      8mn   entries, row-major: a[0,0], a[0,1], ..., a[m-1,n-1]
//! ```
//!
//! Writing the same matrix always produces the same bytes.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Result, ThError};

pub const MAGIC: [u8; 8] = *b"THMAT\0\0\0";
pub const VERSION: u32 = 1;

fn validate(a: &Array2<f64>) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(ThError::Format(
            "matrix must have at least one row and column".into(),
        ));
    }
    if let Some(v) = a.iter().find(|v| !v.is_finite()) {
        return Err(ThError::Format(format!("non-finite entry {v}")));
    }
    Ok(())
}

pub fn write_binary<W: Write>(a: &Array2<f64>, mut w: W) -> Result<()> {
    validate(a)?;
    let mut buf = Vec::with_capacity(32 + 8 * a.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
    // `iter` walks in logical row-major order whatever the memory layout.
    for v in a.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut header = [0u8; 32];
    r.read_exact(&mut header)
        .map_err(|_| ThError::Format("truncated matrix header".into()))?;
    if header[..8] != MAGIC {
        return Err(ThError::Format("bad magic; not a matrix file".into()));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(ThError::Format(format!(
            "unsupported matrix format version {version}"
        )));
    }
    let m = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(header[24..32].try_into().unwrap()) as usize;
    let count = m
        .checked_mul(n)
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(|| ThError::Format(format!("implausible dimensions {m}x{n}")))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 8 * count {
        return Err(ThError::Format(format!(
            "expected {} data bytes for {m}x{n}, found {}",
            8 * count,
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let a = Array2::from_shape_vec((m, n), data).map_err(|e| ThError::Format(e.to_string()))?;
    validate(&a)?;
    Ok(a)
}

pub fn save_binary(a: &Array2<f64>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_binary(a, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_binary(path: &Path) -> Result<Array2<f64>> {
    read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Comma-separated rows; blank lines and lines starting with `#` are skipped.
pub fn parse_csv(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| {
                    ThError::Format(format!("line {}: cannot parse {:?}", lineno + 1, t.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(ThError::Format(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    let a = Array2::from_shape_vec((m, n), rows.into_iter().flatten().collect())
        .map_err(|e| ThError::Format(e.to_string()))?;
    validate(&a)?;
    Ok(a)
}

/// Shortest round-trip representation of every entry.
pub fn to_csv(a: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
