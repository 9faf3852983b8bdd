//! Versioned binary index file.
//!
//! ```text
//! "RBIX" | version u32 | dim u32 | count u64
//! count × (chunk_id, doc_id, text)     each as u32 length + UTF-8 bytes
//! count × dim f32                      row-major vectors
//! sha256 of all preceding bytes        32 bytes
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{EmbeddingVector, Index, IndexError, StoredChunk};
use crate::hashing::sha256;

const MAGIC: &[u8; 4] = b"RBIX";
pub const INDEX_FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn persist(index: &Index, path: &Path) -> Result<(), IndexError> {
    let mut buf = Vec::with_capacity(HEADER_LEN + index.values.len() * 4 + index.len() * 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(index.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for c in &index.chunks {
        put_str(&mut buf, &c.chunk_id);
        put_str(&mut buf, &c.doc_id);
        put_str(&mut buf, &c.text);
    }
    for v in &index.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = sha256(&buf);
    buf.extend_from_slice(&digest);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    // write-then-rename so a crash never leaves a half-written index behind
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            IndexError::Format(format!("unexpected end of data while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String, IndexError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| IndexError::Format(format!("{what} is not valid UTF-8")))
    }
}

pub fn load(path: &Path) -> Result<Index, IndexError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(IndexError::Format(format!(
            "{}: file is {} bytes, too short for an index",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(IndexError::Format(format!("{}: bad magic bytes", path.display())));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32("version")?;
    if version != INDEX_FORMAT_VERSION {
        return Err(IndexError::Format(format!(
            "{}: index format version {version}, this build reads version {INDEX_FORMAT_VERSION}",
            path.display()
        )));
    }
    if sha256(body) != checksum {
        return Err(IndexError::Format(format!(
            "{}: checksum mismatch (truncated or corrupted file)",
            path.display()
        )));
    }
    let dim = r.u32("dimension")? as usize;
    let count = r.u64("count")? as usize;
    let mut chunks = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        chunks.push(StoredChunk {
            chunk_id: r.string("chunk_id")?,
            doc_id: r.string("doc_id")?,
            text: r.string("text")?,
        });
    }
    let raw = r.take(count * dim * 4, "vectors")?;
    if r.pos != body.len() {
        return Err(IndexError::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            body.len() - r.pos
        )));
    }
    let floats: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let vectors = if dim == 0 {
        Vec::new()
    } else {
        floats
            .chunks_exact(dim)
            .map(|row| EmbeddingVector::new(row.to_vec()))
            .collect::<Result<Vec<_>, _>>()?
    };
    Index::from_parts(chunks, &vectors)
}
