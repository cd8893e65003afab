//! Checkpoint serialization: named parameter blocks with shapes, stored as
//! little-endian f32, plus a human-readable text manifest alongside.
//!
//! Layout of the binary file:
//! ```text
//! magic "DGCK"  u16 version  u32 n_blocks
//! per block: u16 name_len, name bytes, u8 ndim, u32 dims..., u64 n_values,
//!            n_values * f32 (little-endian)
//! ```

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DGCK";
const VERSION: u16 = 1;

/// One named tensor inside a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamBlock {
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> ParamBlock {
        ParamBlock {
            name: name.into(),
            shape,
            data: data.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

/// A set of named parameter blocks, written and read as one file pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub blocks: Vec<ParamBlock>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Writes `path` (binary) and `<path>.manifest.txt` (one line per block:
    /// name, shape, value count).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            let expected: usize = b.shape.iter().product();
            if expected != b.data.len() {
                return Err(Error::contract(format!(
                    "block {} shape {:?} does not match {} values",
                    b.name,
                    b.shape,
                    b.data.len()
                )));
            }
            let name = b.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(b.shape.len() as u8);
            for &d in &b.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            buf.extend_from_slice(&(b.data.len() as u64).to_le_bytes());
            for &v in &b.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let ctx = || format!("writing checkpoint {}", path.display());
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        f.write_all(&buf).map_err(|e| Error::io(ctx(), e))?;

        let manifest_path = manifest_path(path);
        let mut text = String::new();
        for b in &self.blocks {
            let dims: Vec<String> = b.shape.iter().map(|d| d.to_string()).collect();
            text.push_str(&format!("{} {} {}\n", b.name, dims.join("x"), b.data.len()));
        }
        std::fs::write(&manifest_path, text)
            .map_err(|e| Error::io(format!("writing manifest {}", manifest_path.display()), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        let bad = |reason: &str| Error::format(path.display().to_string(), reason);

        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(bad("truncated"));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {}", version)));
        }
        let n_blocks = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(name_len)?)
                .map_err(|_| bad("block name is not utf-8"))?
                .to_string();
            let ndim = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            let n_values = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            if shape.iter().product::<usize>() != n_values {
                return Err(bad(&format!("block {} shape/value mismatch", name)));
            }
            let raw = take(4 * n_values)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push(ParamBlock { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { blocks })
    }
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".manifest.txt");
    std::path::PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = Checkpoint {
            blocks: vec![
                ParamBlock {
                    name: "preprocessor".into(),
                    shape: vec![2, 3],
                    data: vec![1.0, -2.5, 0.0, 3.5, 4.25, -0.125],
                },
                ParamBlock {
                    name: "policy".into(),
                    shape: vec![4],
                    data: vec![0.1, 0.2, 0.3, 0.4],
                },
            ],
        };
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(ck, back);
        let manifest = std::fs::read_to_string(dir.path().join("model.ckpt.manifest.txt")).unwrap();
        assert!(manifest.contains("preprocessor 2x3 6"));
        assert!(manifest.contains("policy 4 4"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = Checkpoint {
            blocks: vec![ParamBlock {
                name: "q1".into(),
                shape: vec![3],
                data: vec![1.0, 2.0, 3.0],
            }],
        };
        ck.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(crate::error::Error::Format { .. })
        ));
    }

    #[test]
    fn shape_value_mismatch_is_rejected_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint {
            blocks: vec![ParamBlock {
                name: "bad".into(),
                shape: vec![2, 2],
                data: vec![1.0],
            }],
        };
        assert!(ck.save(&dir.path().join("bad.ckpt")).is_err());
    }
}
