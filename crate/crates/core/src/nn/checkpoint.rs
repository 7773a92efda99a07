//! Versioned binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   b"MEMSHCKP"
//! version      u32       1
//! header_len   u32       byte length of the JSON header
//! header       JSON      {"descriptor": <any>, "blocks": [{"name", "rows", "cols"}, ...]}
//! payload      f64 LE    every block's values, row-major, in header order
//! ```
//!
//! A sidecar `<file>.json` repeats the header with the format name and
//! version so shapes can be inspected without parsing the binary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ParamMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MEMSHCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlock {
    pub name: String,
    pub matrix: ParamMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    descriptor: Value,
    blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub descriptor: Value,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: Value,
    pub blocks: Vec<NamedBlock>,
}

impl Checkpoint {
    pub fn new(descriptor: Value) -> Self {
        Self {
            descriptor,
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, matrix: ParamMatrix<f64>) {
        self.blocks.push(NamedBlock {
            name: name.into(),
            matrix,
        });
    }

    pub fn get(&self, name: &str) -> Option<&ParamMatrix<f64>> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &b.matrix)
    }

    /// Blocks whose names start with `prefix`, in stored order, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> Vec<NamedBlock> {
        self.blocks
            .iter()
            .filter_map(|b| {
                b.name.strip_prefix(prefix).map(|rest| NamedBlock {
                    name: rest.to_string(),
                    matrix: b.matrix.clone(),
                })
            })
            .collect()
    }

    pub fn block_infos(&self) -> Vec<BlockInfo> {
        self.blocks
            .iter()
            .map(|b| BlockInfo {
                name: b.name.clone(),
                rows: b.matrix.rows(),
                cols: b.matrix.cols(),
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: "memshare-checkpoint".into(),
            version: FORMAT_VERSION,
            descriptor: self.descriptor.clone(),
            blocks: self.block_infos(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            descriptor: self.descriptor.clone(),
            blocks: self.block_infos(),
        })
        .expect("header serializes");
        let payload: usize = self.blocks.iter().map(|b| b.matrix.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for b in &self.blocks {
            for v in b.matrix.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header_end = 16 + header_len;
        if bytes.len() < header_end {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[16..header_end]).map_err(|e| bad(&e.to_string()))?;
        let mut offset = header_end;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for info in header.blocks {
            let n = info.rows * info.cols;
            let end = offset + n * 8;
            if bytes.len() < end {
                return Err(bad(&format!("truncated payload in block {}", info.name)));
            }
            let values = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let matrix = ParamMatrix::from_vec(info.rows, info.cols, values).map_err(|e| bad(&e.to_string()))?;
            blocks.push(NamedBlock { name: info.name, matrix });
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            descriptor: header.descriptor,
            blocks,
        })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    }

    /// Writes the binary container and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(Self::sidecar_path(path), manifest + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(json!({"kind": "test", "dims": [2, 3]}));
        ck.push("a.w", ParamMatrix::from_vec(2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-300, -7.0]).unwrap());
        ck.push("a.b", ParamMatrix::from_vec(2, 1, vec![0.125, -0.5]).unwrap());
        ck
    }

    #[test]
    fn round_trip_bytes_and_files() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap(), ck);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent_0.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        let manifest: Manifest = serde_json::from_slice(&fs::read(Checkpoint::sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(manifest.blocks, ck.block_infos());
        assert_eq!(manifest.version, FORMAT_VERSION);
    }

    #[test]
    fn payload_is_little_endian_f64_in_order() {
        let bytes = sample().to_bytes();
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let first = f64::from_le_bytes(bytes[16 + header_len..24 + header_len].try_into().unwrap());
        assert_eq!(first, 1.0);
        assert_eq!(bytes.len(), 16 + header_len + 8 * 8);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        let p = Path::new("x");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic, p).is_err());
        let mut wrong_version = bytes;
        wrong_version[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version, p).is_err());
    }
}
