//! Binary key→tensor checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"NAVCKPT\0"
//! version  u32      currently 1
//! count    u32      number of entries
//! entry*   name_len u16, name (UTF-8), ndim u8, dims (u32 * ndim),
//!          data (f64 * product(dims))
//! ```
//!
//! Entries are sorted by name, so the same parameter map always produces
//! byte-identical files and f64 payloads round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"NAVCKPT\0";
const VERSION: u32 = 1;

/// Named tensor map with a stable on-disk form.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    /// Fetch a required entry, naming it in the error.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let name_bytes = name.as_bytes();
            if name_bytes.len() > u16::MAX as usize {
                return Err(Error::Checkpoint(format!("entry name too long: {name}")));
            }
            w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
            w.write_all(name_bytes)?;
            let shape = tensor.shape();
            if shape.len() > u8::MAX as usize {
                return Err(Error::Checkpoint(format!("rank too large for '{name}'")));
            }
            w.write_all(&[shape.len() as u8])?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in tensor.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let mut ndim = [0u8; 1];
            r.read_exact(&mut ndim)?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel = shape.iter().product::<usize>();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            entries.insert(name, Tensor::from_parts(shape, data));
        }
        Ok(Self { entries })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert("fc1.weight", Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 1e-300, -0.0, 7.5]).unwrap());
        ck.insert("fc1.bias", Tensor::vector(vec![0.5, -0.5]));
        ck.insert("gains.k_e", Tensor::scalar(1.3));
        ck
    }

    #[test]
    fn round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.len(), back.len());
        for (name, t) in ck.iter() {
            let b = back.get(name).unwrap();
            assert_eq!(t.shape(), b.shape());
            for (x, y) in t.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name}");
            }
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        sample().save(&p1).unwrap();
        sample().save(&p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT____").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("absent.ckpt")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn require_names_missing_entry() {
        let ck = sample();
        let err = ck.require("conv9.weight").unwrap_err().to_string();
        assert!(err.contains("conv9.weight"), "{err}");
    }
}
