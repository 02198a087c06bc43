//! Checkpoint files: versioned named blocks with per-block checksums.
//!
//! The format is deliberately dumb: a magic string, a version tag, a JSON
//! metadata blob, then each named block as shape plus little-endian f64
//! payload with a CRC32 over everything the block contains. f32 parameters
//! round-trip exactly through the f64 payload (every f32 is a representable
//! f64), and the name-sorted block order makes save -> load -> save
//! byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// File magic.
const MAGIC: &[u8; 8] = b"CANTATA\0";
/// Format version tag; loads reject anything else.
pub const CKPT_VERSION: &str = "ckpt_v1";

/// Named tensor blocks: shape plus flattened f64 data.
pub type Blocks = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn crc_of(name: &str, shape: &[usize], data: &[f64]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(name.as_bytes());
    for &d in shape {
        h.update(&(d as u64).to_le_bytes());
    }
    for &v in data {
        h.update(&v.to_le_bytes());
    }
    h.finalize()
}

/// Write a checkpoint: metadata (step counter, config snapshot, anything
/// JSON) plus the named blocks.
pub fn save_checkpoint(path: &Path, meta: &serde_json::Value, blocks: &Blocks) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let version = CKPT_VERSION.as_bytes();
    buf.extend_from_slice(&(version.len() as u32).to_le_bytes());
    buf.extend_from_slice(version);
    let meta_text = serde_json::to_string(meta)?;
    buf.extend_from_slice(&(meta_text.len() as u64).to_le_bytes());
    buf.extend_from_slice(meta_text.as_bytes());
    buf.extend_from_slice(&(blocks.len() as u64).to_le_bytes());
    for (name, (shape, data)) in blocks {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(crate::invalid_input!(
                "block {name:?}: shape {shape:?} does not hold {} values",
                data.len()
            ));
        }
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&crc_of(name, shape, data).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Read a checkpoint back. Rejects bad magic, version mismatches,
/// truncation, and any block whose checksum fails, naming the block.
pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, Blocks)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint(format!("{path:?} is not a checkpoint file")));
    }
    let vlen = r.u32("version length")? as usize;
    let version = std::str::from_utf8(r.take(vlen, "version")?)
        .map_err(|_| Error::Checkpoint("version tag is not UTF-8".into()))?;
    if version != CKPT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "file has {version:?}, this build reads {CKPT_VERSION:?}"
        )));
    }
    let mlen = r.u64("metadata length")? as usize;
    let meta_text = std::str::from_utf8(r.take(mlen, "metadata")?)
        .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
    let meta: serde_json::Value = serde_json::from_str(meta_text)
        .map_err(|e| Error::Checkpoint(format!("metadata is not JSON: {e}")))?;

    let count = r.u64("block count")? as usize;
    let mut blocks = Blocks::new();
    for _ in 0..count {
        let nlen = r.u32("block name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "block name")?)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let n = r.u64("data length")? as usize;
        if shape.iter().product::<usize>() != n {
            return Err(Error::Checkpoint(format!(
                "block {name:?}: shape {shape:?} does not hold {n} values"
            )));
        }
        let raw = r.take(n * 8, "block data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let stored = r.u32("checksum")?;
        let computed = crc_of(&name, &shape, &data);
        if stored != computed {
            return Err(Error::Checkpoint(format!(
                "block {name:?} failed its checksum (stored {stored:08x}, computed {computed:08x})"
            )));
        }
        if blocks.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate block {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last block",
            bytes.len() - r.pos
        )));
    }
    Ok((meta, blocks))
}
