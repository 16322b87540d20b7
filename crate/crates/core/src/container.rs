//! The on-disk tensor container used by trajectory checkpoints and
//! synthetic-dataset snapshots.
//!
//! Layout: magic `TDCK`, format version (u32 LE), record count (u32 LE),
//! then per record a header (name, kind byte, dims, payload offset) followed
//! by all payloads as little-endian f64. Integrity is checked with SHA-256
//! over the whole file, stored by the caller (e.g. in a manifest).

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TDCK";
pub const FORMAT_VERSION: u32 = 1;

/// One named tensor in a container file.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    /// Role tag; parameter records use [`crate::models::ParamKind`] bytes,
    /// other tensors use [`RAW_KIND`].
    pub kind: u8,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Kind byte for records that are not network parameters.
pub const RAW_KIND: u8 = 255;

impl Record {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for rec in records {
        if rec.numel() != rec.data.len() {
            return Err(Error::LayoutMismatch(format!(
                "record {} shape {:?} vs {} values",
                rec.name,
                rec.shape,
                rec.data.len()
            )));
        }
        out.extend_from_slice(&(rec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(rec.name.as_bytes());
        out.push(rec.kind);
        out.extend_from_slice(&(rec.shape.len() as u32).to_le_bytes());
        for &d in &rec.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += rec.data.len() as u64;
    }
    for rec in records {
        for &v in &rec.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write(path: &Path, records: &[Record]) -> Result<String> {
    let bytes = encode(records)?;
    let digest = sha256_hex(&bytes);
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(digest)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedHeader(format!(
                "{}: ran out of bytes reading {what}",
                self.path.display()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn read(path: &Path) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode(&bytes, path)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: u32::from_le_bytes(*MAGIC),
            got: u32::from_le_bytes(magic.try_into().expect("take(4) yields 4 bytes")),
        });
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { got: version, supported: FORMAT_VERSION });
    }
    let count = cur.u32("record count")? as usize;
    let mut headers = Vec::with_capacity(count);
    let mut expected_offset = 0u64;
    for i in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "name")?.to_vec()).map_err(|_| {
            Error::Malformed {
                path: path.display().to_string(),
                detail: format!("record {i} name is not UTF-8"),
            }
        })?;
        let kind = cur.take(1, "kind")?[0];
        let ndim = cur.u32("dim count")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64("dim")? as usize);
        }
        let offset = cur.u64("offset")?;
        if offset != expected_offset {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                detail: format!("record {name}: offset {offset}, expected {expected_offset}"),
            });
        }
        expected_offset += shape.iter().product::<usize>() as u64;
        headers.push((name, kind, shape));
    }
    let payload = &bytes[cur.pos..];
    let want = expected_offset as usize * 8;
    if payload.len() != want {
        return Err(Error::TruncatedPayload(format!(
            "{}: payload is {} bytes, expected {want}",
            path.display(),
            payload.len()
        )));
    }
    let mut records = Vec::with_capacity(count);
    let mut at = 0usize;
    for (name, kind, shape) in headers {
        let numel: usize = shape.iter().product();
        let data = payload[at..at + numel * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        at += numel * 8;
        records.push(Record { name, kind, shape, data });
    }
    Ok(records)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a file and checks it against an expected SHA-256 before decoding.
pub fn read_verified(path: &Path, expected_sha: &str) -> Result<Vec<Record>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let got = sha256_hex(&bytes);
    if got != expected_sha {
        return Err(Error::ChecksumFailure(format!(
            "{}: sha256 {got} != manifest {expected_sha}",
            path.display()
        )));
    }
    decode(&bytes, path)
}
