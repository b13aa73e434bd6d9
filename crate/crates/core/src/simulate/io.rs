//! Ensemble files and atomic output.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "FBME" | version u16 | H f64 | n u32 | n_paths u32 | seed u64
//!        | n_paths × (n+1) f64, row-major
//!        | T f64 | generator u8            (trailer)
//! ```

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fbm_model::{HurstParameter, TimeGrid};

use super::generate::{generate_cholesky, generate_circulant, Generator};
use super::{PathEnsemble, Seed};

const MAGIC: &[u8; 4] = b"FBME";
const VERSION: u16 = 1;

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error.to_string()))?;
    Ok(())
}

pub fn encode_ensemble(e: &PathEnsemble) -> Vec<u8> {
    let n = e.grid().n_cells();
    let mut out = Vec::with_capacity(34 + 8 * e.paths().len() + 9);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&e.hurst().value().to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(e.n_paths() as u32).to_le_bytes());
    out.extend_from_slice(&e.seed().root.to_le_bytes());
    for v in e.paths() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&e.grid().horizon().to_le_bytes());
    out.push(e.generator().tag());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Io("truncated ensemble file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode_ensemble(bytes: &[u8]) -> Result<PathEnsemble> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Io("not an FBME ensemble file".into()));
    }
    let version = u16::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(Error::Io(format!("unsupported ensemble version {version}")));
    }
    let h = HurstParameter::limit_study(f64::from_le_bytes(c.array()?))?;
    let n = u32::from_le_bytes(c.array()?) as usize;
    let n_paths = u32::from_le_bytes(c.array()?) as usize;
    let seed = Seed::new(u64::from_le_bytes(c.array()?));
    let count = n_paths
        .checked_mul(n + 1)
        .ok_or_else(|| Error::Io("ensemble dimensions overflow".into()))?;
    let raw = c.take(count * 8)?;
    let paths: Vec<f64> = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    // files without the trailer are read as T = 1, circulant
    let (horizon, generator) = if c.pos == bytes.len() {
        (1.0, Generator::Circulant)
    } else {
        let t = f64::from_le_bytes(c.array()?);
        (t, Generator::from_tag(c.array::<1>()?[0])?)
    };
    let grid = TimeGrid::uniform(horizon, n)?;
    PathEnsemble::new(grid, h, paths, seed, generator)
}

pub fn write_ensemble(path: &Path, e: &PathEnsemble) -> Result<()> {
    atomic_write(path, &encode_ensemble(e))
}

pub fn read_ensemble(path: &Path) -> Result<PathEnsemble> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_ensemble(&bytes)
}

/// CSV with a `path` column and one column per grid node.
pub fn write_ensemble_csv(path: &Path, e: &PathEnsemble) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["path".to_string()];
    header.extend(e.grid().nodes().iter().map(|t| format!("t={t}")));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..e.n_paths() {
        let mut row = vec![k.to_string()];
        row.extend(e.path(k).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    atomic_write(path, &bytes)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// File name identifying an ensemble in a cache directory.
pub fn cache_file_name(grid: &TimeGrid, h: HurstParameter, seed: Seed, n_paths: usize, g: Generator) -> String {
    format!(
        "{}-H{}-T{}-n{}-p{}-s{}.fbme",
        match g {
            Generator::Cholesky => "cholesky",
            Generator::Circulant => "circulant",
        },
        h.value(),
        grid.horizon(),
        grid.n_cells(),
        n_paths,
        seed.root
    )
}

/// Loads the ensemble from `dir` when cached, otherwise generates and stores it.
pub fn load_or_generate(
    dir: &Path,
    grid: &TimeGrid,
    h: HurstParameter,
    seed: Seed,
    n_paths: usize,
    g: Generator,
) -> Result<(PathEnsemble, PathBuf)> {
    let file = dir.join(cache_file_name(grid, h, seed, n_paths, g));
    if file.exists() {
        let e = read_ensemble(&file)?;
        if e.grid() == grid && e.hurst() == h && e.seed() == seed && e.n_paths() == n_paths {
            return Ok((e, file));
        }
        log::warn!("cache file {} does not match; regenerating", file.display());
    }
    std::fs::create_dir_all(dir)?;
    let e = match g {
        Generator::Cholesky => generate_cholesky(grid, h, seed, n_paths)?,
        Generator::Circulant => generate_circulant(grid, h, seed, n_paths)?,
    };
    write_ensemble(&file, &e)?;
    Ok((e, file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PathEnsemble {
        let grid = TimeGrid::uniform(2.0, 16).unwrap();
        generate_cholesky(&grid, HurstParameter::new(0.7).unwrap(), Seed::new(42), 5).unwrap()
    }

    #[test]
    fn round_trip() {
        let e = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.fbme");
        write_ensemble(&p, &e).unwrap();
        let back = read_ensemble(&p).unwrap();
        assert_eq!(back, e);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"FBME");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes.len(), 4 + 2 + 8 + 4 + 4 + 8 + 5 * 17 * 8 + 9);
    }

    #[test]
    fn header_only_layout_reads_with_defaults() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let e = generate_circulant(&grid, HurstParameter::new(0.8).unwrap(), Seed::new(1), 3).unwrap();
        let bytes = encode_ensemble(&e);
        let back = decode_ensemble(&bytes[..bytes.len() - 9]).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn rejects_corrupt_files() {
        let bytes = encode_ensemble(&sample());
        assert!(decode_ensemble(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_ensemble(&bad).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode_ensemble(&v2).is_err());
    }

    #[test]
    fn csv_export_and_cache() {
        let e = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_ensemble_csv(&p, &e).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("path,t=0,t=0.125"));
        let (a, f) = load_or_generate(dir.path(), e.grid(), e.hurst(), e.seed(), 5, Generator::Cholesky).unwrap();
        assert_eq!(a, e);
        assert!(f.exists());
        let (b, _) = load_or_generate(dir.path(), e.grid(), e.hurst(), e.seed(), 5, Generator::Cholesky).unwrap();
        assert_eq!(b, e);
    }
}
