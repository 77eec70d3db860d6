//! Versioned binary container for model checkpoints.
//!
//! Layout: magic, format version, a kind string, a JSON header, named f64
//! matrices, and a SHA-256 checksum over everything before it. All
//! integers are little endian. Writes go through a temp file and a rename
//! so a crash never leaves a truncated checkpoint behind.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use sha2::{Digest, Sha256};

const MAGIC: &[u8; 4] = b"SBCK";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint holds a {found:?} model, expected {expected:?}")]
    KindMismatch { found: String, expected: String },
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
}

/// A kind tag, a free-form JSON header, and named matrices.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Array2<f64>)>,
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.write_u32::<LittleEndian>(s.len() as u32).expect("vec write");
    buf.extend_from_slice(s.as_bytes());
}

fn read_str(cur: &mut Cursor<&[u8]>) -> Result<String, CheckpointError> {
    let len = cur.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 30 {
        return Err(CheckpointError::Corrupt("string length out of range".into()));
    }
    let mut bytes = vec![0u8; len];
    cur.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.write_u32::<LittleEndian>(VERSION).expect("vec write");
        write_str(&mut buf, &self.kind);
        write_str(&mut buf, &self.header.to_string());
        buf.write_u32::<LittleEndian>(self.tensors.len() as u32).expect("vec write");
        for (name, tensor) in &self.tensors {
            write_str(&mut buf, name);
            buf.write_u32::<LittleEndian>(tensor.nrows() as u32).expect("vec write");
            buf.write_u32::<LittleEndian>(tensor.ncols() as u32).expect("vec write");
            for &x in tensor.iter() {
                buf.write_f64::<LittleEndian>(x).expect("vec write");
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(data: &[u8], expected_kind: &str) -> Result<Checkpoint, CheckpointError> {
        if data.len() < MAGIC.len() + 4 + 32 {
            return Err(CheckpointError::Corrupt("file too short".into()));
        }
        let (body, checksum) = data.split_at(data.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != checksum {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }
        let mut cur = Cursor::new(body);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Corrupt("bad magic".into()));
        }
        let version = cur.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: format!("format {version}"),
                expected: format!("format {VERSION}"),
            });
        }
        let kind = read_str(&mut cur)?;
        if kind != expected_kind {
            return Err(CheckpointError::KindMismatch {
                found: kind,
                expected: expected_kind.to_string(),
            });
        }
        let header: serde_json::Value = serde_json::from_str(&read_str(&mut cur)?)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        let count = cur.read_u32::<LittleEndian>()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str(&mut cur)?;
            let rows = cur.read_u32::<LittleEndian>()? as usize;
            let cols = cur.read_u32::<LittleEndian>()? as usize;
            if rows.saturating_mul(cols) > 1 << 28 {
                return Err(CheckpointError::Corrupt("tensor too large".into()));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(cur.read_f64::<LittleEndian>()?);
            }
            let tensor = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            tensors.push((name, tensor));
        }
        if cur.position() as usize != body.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Checkpoint { kind, header, tensors })
    }

    /// Writes atomically: temp file in the same directory, then rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_kind: &str) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_bytes(&fs::read(path)?, expected_kind)
    }
}
