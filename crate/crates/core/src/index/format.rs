//! Binary index file, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "T2IQIDX1"
//! version          u32      currently 1
//! header_len       u32
//! header           header_len bytes of JSON:
//!                  {"descriptor": {...}, "build_timestamp": i64, "corpus_fingerprint": "..."}
//! entry_count      u64
//! entries          entry_count × { id_len: u32, id: UTF-8, vector: dim × f32 }
//! crc32c           u32      CRC-32C of every preceding byte
//! ```
//!
//! `dim` is `descriptor.embedding_dim`. Entries appear in ascending
//! doc_id order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureIndex, IndexError};
use crate::embedding::BackendDescriptor;

pub const MAGIC: &[u8; 8] = b"T2IQIDX1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    descriptor: BackendDescriptor,
    build_timestamp: i64,
    corpus_fingerprint: String,
}

/// Serializes `index` to the on-disk byte layout.
pub fn write_index(index: &FeatureIndex) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        descriptor: index.descriptor.clone(),
        build_timestamp: index.build_timestamp,
        corpus_fingerprint: index.corpus_fingerprint.clone(),
    })
    .expect("index header serializes");

    let id_bytes: usize = index.doc_ids.iter().map(|d| 4 + d.len()).sum();
    let mut buf = Vec::with_capacity(8 + 4 + 4 + header.len() + 8 + id_bytes + index.vectors.len() * 4 + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for (doc_id, vector) in index.iter() {
        buf.extend_from_slice(&(doc_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(doc_id.as_bytes());
        for v in vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32c::crc32c(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.buf.len())
            .ok_or_else(|| IndexError::CorruptIndex(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses and validates index bytes.
///
/// Checks run in order: length, magic, version, checksum, then structure.
pub fn read_index(bytes: &[u8]) -> Result<FeatureIndex, IndexError> {
    if bytes.len() < MAGIC.len() + 4 + 4 {
        return Err(IndexError::CorruptIndex("file too short".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(IndexError::CorruptIndex("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(IndexError::VersionUnsupported(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32c::crc32c(body);
    if stored != actual {
        return Err(IndexError::CorruptIndex(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }

    let mut r = Reader { buf: body, pos: 12 };
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| IndexError::CorruptIndex(format!("header: {e}")))?;
    let dim = header.descriptor.embedding_dim;
    let count = r.u64()?;
    let count = usize::try_from(count).map_err(|_| IndexError::CorruptIndex("entry count overflows".into()))?;
    // Each entry needs at least 4 + 4·dim bytes.
    if count.saturating_mul(4 + 4 * dim) > body.len() {
        return Err(IndexError::CorruptIndex(format!("entry count {count} exceeds file size")));
    }

    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u32()? as usize;
        let doc_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|e| IndexError::CorruptIndex(format!("doc_id: {e}")))?
            .to_owned();
        let values = r
            .take(dim * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push((doc_id, values));
    }
    if r.pos != body.len() {
        return Err(IndexError::CorruptIndex(format!("{} trailing bytes", body.len() - r.pos)));
    }
    if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(IndexError::CorruptIndex("entries are not in ascending doc_id order".into()));
    }

    let index = FeatureIndex::from_entries(header.descriptor, entries, header.build_timestamp)
        .map_err(|e| IndexError::CorruptIndex(e.to_string()))?;
    if index.corpus_fingerprint != header.corpus_fingerprint {
        return Err(IndexError::CorruptIndex("corpus fingerprint does not match entries".into()));
    }
    Ok(index)
}

pub fn save_index(index: &FeatureIndex, path: impl AsRef<Path>) -> Result<(), IndexError> {
    let path = path.as_ref();
    std::fs::write(path, write_index(index)).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_index(path: impl AsRef<Path>) -> Result<FeatureIndex, IndexError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_index(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TestBackend;

    fn sample() -> FeatureIndex {
        let descriptor = BackendDescriptor {
            embedding_dim: 3,
            ..TestBackend::descriptor_template()
        };
        FeatureIndex::from_entries(
            descriptor,
            vec![
                ("doc-b".into(), vec![1.0, -2.5, 3.25]),
                ("doc-a".into(), vec![0.0, f32::MIN_POSITIVE, -0.0]),
                ("ü".into(), vec![1e-30, 7.0, 8.0]),
            ],
            1_700_000_000_123,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let idx = sample();
        let bytes = write_index(&idx);
        let back = read_index(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(write_index(&back), bytes);
        // -0.0 == 0.0 under PartialEq; compare bit patterns too.
        let bits = |i: &FeatureIndex| i.vectors().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&idx));
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = write_index(&sample());
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x01;
            let err = read_index(&bad).unwrap_err();
            assert!(
                matches!(err, IndexError::CorruptIndex(_) | IndexError::VersionUnsupported(_)),
                "byte {i}: {err:?}"
            );
        }
    }

    #[test]
    fn future_version_is_unsupported() {
        let mut bytes = write_index(&sample());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_index(&bytes), Err(IndexError::VersionUnsupported(2))));
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = write_index(&sample());
        for len in [0, 5, 12, 40, bytes.len() - 1] {
            assert!(matches!(read_index(&bytes[..len]), Err(IndexError::CorruptIndex(_))));
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.bin");
        save_index(&sample(), &path).unwrap();
        assert_eq!(load_index(&path).unwrap(), sample());
        assert!(matches!(load_index(dir.path().join("missing")), Err(IndexError::Io { .. })));
    }
}
