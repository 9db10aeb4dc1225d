//! Binary checkpoint format for alignment-head parameters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TSRAALN1"
//! 8       4     u32 text header length N
//! 12      N     UTF-8 text header (JSON echo of the training config)
//! ..      4     u32 input_dim
//! ..      4     u32 hidden_dim
//! ..      4     u32 branch count (always 3: position, size, angle)
//! per branch:
//!         4     u32 layer count
//!   per layer:
//!         4     u32 out_dim
//!         4     u32 in_dim
//! then raw parameter data as f64 little-endian, in tensor order:
//! for each branch (position, size, angle), for each layer:
//! weights row-major (out x in), then bias (out).
//! ```

use super::{AlignHeadParams, Branch, DenseLayer};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"TSRAALN1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not an alignment checkpoint (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn save_checkpoint(
    path: &Path,
    params: &AlignHeadParams,
    config_echo: &str,
) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    let header = config_echo.as_bytes();
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header);
    buf.extend_from_slice(&(params.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(params.hidden_dim as u32).to_le_bytes());
    let branches = params.branches();
    buf.extend_from_slice(&(branches.len() as u32).to_le_bytes());
    for b in &branches {
        buf.extend_from_slice(&(b.layers.len() as u32).to_le_bytes());
        for l in &b.layers {
            buf.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
            buf.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        }
    }
    for t in params.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(&buf).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a checkpoint, returning the parameters and the text header.
pub fn load_checkpoint(path: &Path) -> Result<(AlignHeadParams, String), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = r.u32()? as usize;
    let header = String::from_utf8(r.take(header_len)?.to_vec())
        .map_err(|_| CheckpointError::Corrupt("non-utf8 text header".into()))?;
    let input_dim = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    let branch_count = r.u32()? as usize;
    if branch_count != 3 {
        return Err(CheckpointError::Corrupt(format!(
            "expected 3 branches, found {branch_count}"
        )));
    }
    let mut shapes = Vec::with_capacity(branch_count);
    for _ in 0..branch_count {
        let layer_count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let out_dim = r.u32()? as usize;
            let in_dim = r.u32()? as usize;
            layers.push((out_dim, in_dim));
        }
        shapes.push(layers);
    }
    let mut branches = Vec::with_capacity(branch_count);
    for layers in &shapes {
        let mut built = Vec::with_capacity(layers.len());
        for &(out_dim, in_dim) in layers {
            let mut weights = vec![0.0; out_dim * in_dim];
            for w in weights.iter_mut() {
                *w = r.f64()?;
            }
            let mut bias = vec![0.0; out_dim];
            for b in bias.iter_mut() {
                *b = r.f64()?;
            }
            built.push(DenseLayer {
                in_dim,
                out_dim,
                weights,
                bias,
            });
        }
        branches.push(Branch { layers: built });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let angle = branches.pop().unwrap();
    let size = branches.pop().unwrap();
    let position = branches.pop().unwrap();
    let params = AlignHeadParams {
        input_dim,
        hidden_dim,
        position,
        size,
        angle,
    };
    // Chain consistency: branch inputs must match the declared input_dim.
    for b in params.branches() {
        let first = b
            .layers
            .first()
            .ok_or_else(|| CheckpointError::Corrupt("empty branch".into()))?;
        if first.in_dim != input_dim {
            return Err(CheckpointError::Corrupt(format!(
                "branch input {} != declared input_dim {input_dim}",
                first.in_dim
            )));
        }
        for pair in b.layers.windows(2) {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(CheckpointError::Corrupt("layer dims do not chain".into()));
            }
        }
    }
    Ok((params, header))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {} (want {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.tsra");
        let params = AlignHeadParams::init(18, 8, 99);
        save_checkpoint(&path, &params, "{\"seed\":99}").unwrap();
        let (back, header) = load_checkpoint(&path).unwrap();
        assert_eq!(header, "{\"seed\":99}");
        assert_eq!(back, params);
        assert_eq!(back.digest(), params.digest());
    }

    #[test]
    fn save_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.tsra");
        let b = dir.path().join("b.tsra");
        let params = AlignHeadParams::init(18, 8, 5);
        save_checkpoint(&a, &params, "echo").unwrap();
        save_checkpoint(&b, &params, "echo").unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsra");
        std::fs::write(&path, b"NOTAHEAD").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::BadMagic)
        ));
        let good = dir.path().join("good.tsra");
        let params = AlignHeadParams::init(18, 8, 5);
        save_checkpoint(&good, &params, "echo").unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Corrupt(_))
        ));
    }
}
