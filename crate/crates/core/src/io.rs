//! Artifact serialization: versioned CSV tabulations, binary field dumps,
//! JSON-lines logs. Every file starts with a header carrying the config
//! digest and seed so runs are reproducible byte for byte.

use crate::covariance::{FiniteRangeCovariance, RadialKernel};
use crate::error::{Error, Result};
use crate::grid::Field;
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 digest of a canonicalized configuration string.
pub fn config_digest(canonical: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let out = hasher.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Write a CSV with `# key=value` header lines followed by a column header
/// and rows. Floats print with shortest round-trip formatting, so identical
/// values give identical bytes.
pub fn write_csv(
    path: &Path,
    header: &[(&str, String)],
    columns: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    for (k, v) in header {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Read back a CSV written by `write_csv`: (header map, rows).
pub fn read_csv(path: &Path) -> Result<(Vec<(String, String)>, Vec<Vec<String>>)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut header = Vec::new();
    let mut rows = Vec::new();
    let mut saw_columns = false;
    for line in reader.lines() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once('=') {
                header.push((k.to_string(), v.to_string()));
            }
        } else if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                header.push((k.to_string(), v.to_string()));
            }
        } else if !saw_columns {
            saw_columns = true; // column header line
        } else if !line.is_empty() {
            rows.push(line.split(',').map(|s| s.to_string()).collect());
        }
    }
    Ok((header, rows))
}

/// Kernel tabulation as interchange CSV.
pub fn write_kernel_csv(path: &Path, kernel: &RadialKernel, digest: &str) -> Result<()> {
    let header = [
        ("kind", "radial_kernel".to_string()),
        ("kernel_id", kernel.profile_id.clone()),
        ("grid_spacing", format!("{}", kernel.grid_spacing)),
        ("support_radius", format!("{}", kernel.support_radius)),
        ("normalization", format!("u0={}", kernel.u0)),
        ("config_digest", digest.to_string()),
    ];
    let rows: Vec<Vec<String>> = kernel
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            vec![
                format!("{}", k as f64 * kernel.grid_spacing),
                format!("{v}"),
            ]
        })
        .collect();
    write_csv(path, &header, &["r", "value"], &rows)
}

/// Covariance tabulation as interchange CSV.
pub fn write_covariance_csv(path: &Path, cov: &FiniteRangeCovariance, digest: &str) -> Result<()> {
    let header = [
        ("kind", "finite_range_covariance".to_string()),
        ("kernel_id", cov.kernel.profile_id.clone()),
        ("l_scale", format!("{}", cov.l_scale)),
        ("grid_spacing", format!("{}", cov.dr)),
        ("normalization", format!("u0={}", cov.kernel.u0)),
        ("config_digest", digest.to_string()),
    ];
    let rows: Vec<Vec<String>> = cov
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| vec![format!("{}", k as f64 * cov.dr), format!("{v}")])
        .collect();
    write_csv(path, &header, &["r", "value"], &rows)
}

/// Read a covariance CSV back into (r, value) pairs.
pub fn read_tabulation_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let (_, rows) = read_csv(path)?;
    rows.iter()
        .map(|row| {
            if row.len() != 2 {
                return Err(Error::Config("tabulation row must have 2 columns".into()));
            }
            let r: f64 = row[0]
                .parse()
                .map_err(|e| Error::Config(format!("bad radius: {e}")))?;
            let v: f64 = row[1]
                .parse()
                .map_err(|e| Error::Config(format!("bad value: {e}")))?;
            Ok((r, v))
        })
        .collect()
}

const FIELD_MAGIC: &[u8; 8] = b"SGRGFLD1";

/// Binary field dump: magic, side, spacing, seed, scale tag, then
/// little-endian f64 values in row-major order.
pub fn write_field(path: &Path, field: &Field) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(field.grid.points_per_side as u32).to_le_bytes())?;
    w.write_all(&field.grid.physical_side.to_le_bytes())?;
    w.write_all(&field.seed.to_le_bytes())?;
    let tag = field.scale_tag.as_bytes();
    w.write_all(&(tag.len() as u32).to_le_bytes())?;
    w.write_all(tag)?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field(path: &Path) -> Result<Field> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Config("not a field dump (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    file.read_exact(&mut b4)?;
    let side_points = u32::from_le_bytes(b4) as usize;
    file.read_exact(&mut b8)?;
    let physical_side = f64::from_le_bytes(b8);
    file.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    file.read_exact(&mut b4)?;
    let tag_len = u32::from_le_bytes(b4) as usize;
    let mut tag = vec![0u8; tag_len];
    file.read_exact(&mut tag)?;
    let grid = crate::grid::TorusGrid::new(side_points, physical_side)?;
    let mut values = Vec::with_capacity(grid.n_points());
    for _ in 0..grid.n_points() {
        file.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    Ok(Field {
        grid,
        values,
        seed,
        scale_tag: String::from_utf8_lossy(&tag).into_owned(),
    })
}

/// Append one JSON object per line.
pub fn append_json_line<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = BufWriter::new(file);
    let line = serde_json::to_string(value)
        .map_err(|e| Error::Config(format!("json encode: {e}")))?;
    writeln!(w, "{line}")?;
    Ok(())
}
