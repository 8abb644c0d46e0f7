//! On-disk field cache: a flat little-endian binary array plus a JSON
//! sidecar describing the grid.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Field1D, Field2D};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GKFIELD1";
const FORMAT_VERSION: u32 = 1;

/// Directory named by `GEOKAN_CACHE`, if set.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os("GEOKAN_CACHE").filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Grid description written next to the binary array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub problem: String,
    pub kind: String,
    pub resolution: Vec<usize>,
    pub grids: Vec<Vec<f64>>,
    pub complex: bool,
    pub values_file: String,
}

/// Fields stored under one directory, keyed by name.
#[derive(Debug, Clone)]
pub struct FieldCache {
    dir: PathBuf,
}

/// Values that can live in the cache.
pub trait Cacheable: Sized {
    fn encode(&self, key: &str) -> (Sidecar, Vec<f64>);
    fn decode(side: Sidecar, values: Vec<f64>) -> Result<Self>;
}

impl Cacheable for Field2D {
    fn encode(&self, key: &str) -> (Sidecar, Vec<f64>) {
        let side = Sidecar {
            format_version: FORMAT_VERSION,
            problem: self.problem.clone(),
            kind: "field2d".into(),
            resolution: vec![self.nx(), self.nt()],
            grids: vec![self.x.clone(), self.t.clone()],
            complex: false,
            values_file: format!("{key}.bin"),
        };
        (side, self.values.clone())
    }

    fn decode(s: Sidecar, values: Vec<f64>) -> Result<Self> {
        if s.kind != "field2d" || s.grids.len() != 2 || s.complex {
            return Err(Error::Solver("cached entry is not a real 2-D field".into()));
        }
        let mut g = s.grids.into_iter();
        Field2D::new(s.problem, g.next().unwrap(), g.next().unwrap(), values)
    }
}

impl Cacheable for Field1D {
    fn encode(&self, key: &str) -> (Sidecar, Vec<f64>) {
        let side = Sidecar {
            format_version: FORMAT_VERSION,
            problem: self.problem.clone(),
            kind: "field1d".into(),
            resolution: vec![self.z.len()],
            grids: vec![self.z.clone()],
            complex: true,
            values_file: format!("{key}.bin"),
        };
        (side, self.values.iter().flat_map(|c| [c.re, c.im]).collect())
    }

    fn decode(s: Sidecar, values: Vec<f64>) -> Result<Self> {
        if s.kind != "field1d" || s.grids.len() != 1 || !s.complex {
            return Err(Error::Solver("cached entry is not a complex 1-D field".into()));
        }
        let vals = values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Field1D::new(s.problem, s.grids.into_iter().next().unwrap(), vals)
    }
}

impl FieldCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (self.dir.join(format!("{key}.bin")), self.dir.join(format!("{key}.json")))
    }

    pub fn store<T: Cacheable>(&self, key: &str, value: &T) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let (bin, json) = self.paths(key);
        let (side, values) = value.encode(key);
        let mut bytes = Vec::with_capacity(16 + 8 * values.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in &values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(&bin)?.write_all(&bytes)?;
        let mut f = fs::File::create(&json)?;
        serde_json::to_writer_pretty(&mut f, &side)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// The entry under `key`, or `None` when absent. Corrupt entries are
    /// reported as errors.
    pub fn load<T: Cacheable>(&self, key: &str) -> Result<Option<T>> {
        let (bin, json) = self.paths(key);
        if !bin.exists() || !json.exists() {
            return Ok(None);
        }
        let side: Sidecar = serde_json::from_reader(fs::File::open(&json)?)?;
        if side.format_version != FORMAT_VERSION {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        fs::File::open(&bin)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Solver(format!("{} is not a field cache file", bin.display())));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() != 16 + 8 * n {
            return Err(Error::Solver(format!("{} is truncated", bin.display())));
        }
        let values =
            bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        T::decode(side, values).map(Some)
    }
}

/// Loads `key` from `cache` or computes and stores it.
pub fn cached<T: Cacheable>(cache: Option<&FieldCache>, key: &str, compute: impl FnOnce() -> Result<T>) -> Result<T> {
    if let Some(c) = cache {
        if let Some(v) = c.load(key)? {
            return Ok(v);
        }
    }
    let v = compute()?;
    if let Some(c) = cache {
        c.store(key, &v)?;
    }
    Ok(v)
}
