//! Client update frame.
//!
//! All integers are little-endian `u32`:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PVT1"
//! 4       4     round
//! 8       4     client
//! 12      4     sample_count
//! 16      4     entry_count
//! 20      ...   entry_count × { var_id u32, byte_len u32, byte_len bytes of f32 LE }
//! end-4   4     CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Entries are strictly ascending by `var_id`. Frame length is
//! `24 + Σ (8 + byte_len)`.

use std::collections::BTreeMap;

use crate::client::ClientUpdate;
use crate::taxonomy::VarId;

pub const MAGIC: [u8; 4] = *b"PVT1";
pub const HEADER_LEN: usize = 20;
pub const CHECKSUM_LEN: usize = 4;
/// Header plus checksum.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + CHECKSUM_LEN;
/// `var_id` and `byte_len`.
pub const ENTRY_OVERHEAD: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("frame truncated: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: frame says {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("variable ids out of order: {prev} before {next}")]
    UnsortedIds { prev: u32, next: u32 },
    #[error("duplicate variable id {0}")]
    DuplicateId(u32),
    #[error("entry for variable {var_id} has byte_len {byte_len}, not a multiple of 4")]
    MisalignedPayload { var_id: u32, byte_len: u32 },
    #[error("{0} unexpected bytes after checksum")]
    TrailingBytes(usize),
}

pub fn encoded_len(update: &ClientUpdate) -> usize {
    FRAME_OVERHEAD
        + update
            .deltas
            .values()
            .map(|d| ENTRY_OVERHEAD + 4 * d.len())
            .sum::<usize>()
}

pub fn encode(update: &ClientUpdate) -> Vec<u8> {
    let mut buf = Vec::with_capacity(encoded_len(update));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&update.round.to_le_bytes());
    buf.extend_from_slice(&update.client.to_le_bytes());
    buf.extend_from_slice(&update.sample_count.to_le_bytes());
    buf.extend_from_slice(&(update.deltas.len() as u32).to_le_bytes());
    for (id, delta) in &update.deltas {
        buf.extend_from_slice(&id.0.to_le_bytes());
        buf.extend_from_slice(&((delta.len() * 4) as u32).to_le_bytes());
        for x in delta {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(WireError::Truncated {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses and verifies a frame.
///
/// Checks run in order: length of the fixed header, magic, entry layout,
/// checksum, then id ordering.
pub fn decode(bytes: &[u8]) -> Result<ClientUpdate, WireError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(WireError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let round = r.u32()?;
    let client = r.u32()?;
    let sample_count = r.u32()?;
    let entry_count = r.u32()?;

    let mut entries = Vec::new();
    for _ in 0..entry_count {
        let var_id = r.u32()?;
        let byte_len = r.u32()?;
        if byte_len % 4 != 0 {
            return Err(WireError::MisalignedPayload { var_id, byte_len });
        }
        let payload = r.take(byte_len as usize)?;
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((var_id, values));
    }

    let body_end = r.pos;
    let stored = r.u32()?;
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(WireError::ChecksumMismatch { stored, computed });
    }
    if r.pos != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - r.pos));
    }

    let mut deltas = BTreeMap::new();
    let mut prev: Option<u32> = None;
    for (var_id, values) in entries {
        if let Some(p) = prev {
            if var_id == p {
                return Err(WireError::DuplicateId(var_id));
            }
            if var_id < p {
                return Err(WireError::UnsortedIds { prev: p, next: var_id });
            }
        }
        prev = Some(var_id);
        deltas.insert(VarId(var_id), values);
    }

    Ok(ClientUpdate {
        client,
        round,
        sample_count,
        deltas,
    })
}
