//! Field snapshot files: one JSON header line followed by little-endian
//! `f64` samples in row-major order.

use super::{GridSpec, ScalarField};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub d: usize,
    pub n: usize,
    pub name: String,
    pub time: f64,
}

pub fn snapshot_name(name: &str, index: usize) -> String {
    format!("{name}_t{index}.fld")
}

pub fn write_snapshot(dir: &Path, name: &str, index: usize, time: f64, f: &ScalarField) -> Result<PathBuf> {
    let path = dir.join(snapshot_name(name, index));
    let header = SnapshotHeader {
        d: f.grid.d,
        n: f.grid.n,
        name: name.to_string(),
        time,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    let line = serde_json::to_string(&header).map_err(|e| Error::Io(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    for v in &f.values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(path)
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, ScalarField)> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let header: SnapshotHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Io(format!("bad snapshot header: {e}")))?;
    let grid = GridSpec::new(header.d, header.n).map_err(|e| Error::Io(e.to_string()))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::Io(format!(
            "snapshot body has {} bytes, expected {}",
            bytes.len(),
            8 * grid.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, ScalarField::new(grid, values)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(2, 8).unwrap();
        let f = ScalarField::from_fn(grid, |x| x[0] * 3.0 - x[1]);
        let path = write_snapshot(dir.path(), "R", 4, 0.125, &f).unwrap();
        assert!(path.ends_with("R_t4.fld"));
        let (h, g) = read_snapshot(&path).unwrap();
        assert_eq!(h.name, "R");
        assert_eq!(h.time, 0.125);
        assert_eq!(g, f);
        let raw = std::fs::read(&path).unwrap();
        let nl = raw.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(raw.len() - nl - 1, 8 * 64);
    }
}
