//! Binary index file:
//!
//! ```text
//! "DDIX" | u32 version | u8 kind (0 flat, 1 ivf, 2 lsh) | u32 dim | u64 N
//! flat: N x u64 ids | N x dim f32
//! ivf:  u32 nlist | nlist x dim f32 centroids | per list: u64 len, len x u64 ids, len x dim f32
//! lsh:  u32 bits | bits x dim f32 hyperplanes | N x u64 ids | N x dim f32
//!       | N x ceil(bits/64) u64 signatures
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::ivf::InvertedList;
use super::{FlatIndex, IndexKind, IvfIndex, LshIndex, VectorIndex};
use crate::error::{FormatError, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};

pub const INDEX_MAGIC: [u8; 4] = *b"DDIX";
pub const INDEX_VERSION: u32 = 1;

pub fn save_index(index: &VectorIndex, path: &Path) -> Result<()> {
    write_atomic(path, &write_index(index))
}

pub fn load_index(path: &Path) -> Result<VectorIndex> {
    Ok(read_index(&read_file(path)?)?)
}

pub fn write_index(index: &VectorIndex) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(&INDEX_MAGIC);
    w.u32(INDEX_VERSION);
    w.u8(index.kind().tag());
    w.u32(index.dim() as u32);
    w.u64(index.len() as u64);
    match index {
        VectorIndex::Flat(f) => {
            w.u64s(f.ids());
            w.f32s(f.data());
        }
        VectorIndex::Ivf(ivf) => {
            w.u32(ivf.nlist() as u32);
            w.f32s(ivf.centroids());
            for list in ivf.lists() {
                w.u64(list.len() as u64);
                w.u64s(&list.ids);
                w.f32s(&list.data);
            }
        }
        VectorIndex::Lsh(l) => {
            w.u32(l.bits() as u32);
            w.f32s(l.hyperplanes());
            w.u64s(l.ids());
            w.f32s(l.data());
            w.u64s(l.signatures());
        }
    }
    w.into_inner()
}

pub fn read_index(bytes: &[u8]) -> Result<VectorIndex, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(INDEX_MAGIC)?;
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: INDEX_VERSION,
        });
    }
    let kind = match r.u8()? {
        0 => IndexKind::Flat,
        1 => IndexKind::Ivf,
        2 => IndexKind::Lsh,
        other => return Err(FormatError::UnknownKind(other)),
    };
    let dim = r.u32()? as usize;
    let n = r.len_u64()?;
    if dim == 0 || n == 0 {
        return Err(FormatError::ShapeMismatch(format!("dim {dim}, count {n}")));
    }
    let block = |count: usize| {
        count
            .checked_mul(dim)
            .ok_or_else(|| FormatError::Corrupt("vector block overflows".into()))
    };

    let index = match kind {
        IndexKind::Flat => {
            let ids = r.u64s(n)?;
            let data = r.f32s(block(n)?)?;
            VectorIndex::Flat(FlatIndex::from_raw(ids, dim, data))
        }
        IndexKind::Ivf => {
            let nlist = r.u32()? as usize;
            if nlist == 0 || nlist > n {
                return Err(FormatError::ShapeMismatch(format!("nlist {nlist} for {n} entries")));
            }
            let centroids = r.f32s(block(nlist)?)?;
            let mut lists = Vec::with_capacity(nlist);
            let mut total = 0usize;
            for _ in 0..nlist {
                let len = r.len_u64()?;
                total = total.saturating_add(len);
                if total > n {
                    return Err(FormatError::ShapeMismatch(format!(
                        "inverted lists hold more than the declared {n} entries"
                    )));
                }
                let ids = r.u64s(len)?;
                let data = r.f32s(block(len)?)?;
                lists.push(InvertedList { ids, data });
            }
            if total != n {
                return Err(FormatError::ShapeMismatch(format!(
                    "inverted lists hold {total} entries, header declares {n}"
                )));
            }
            VectorIndex::Ivf(IvfIndex::from_raw(dim, centroids, lists))
        }
        IndexKind::Lsh => {
            let bits = r.u32()? as usize;
            if bits == 0 {
                return Err(FormatError::ShapeMismatch("LSH with zero bits".into()));
            }
            let hyperplanes = r.f32s(block(bits)?)?;
            let ids = r.u64s(n)?;
            let data = r.f32s(block(n)?)?;
            let signatures = r.u64s(n * bits.div_ceil(64))?;
            VectorIndex::Lsh(LshIndex::from_raw(dim, bits, hyperplanes, ids, data, signatures))
        }
    };
    r.finish()?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::index::{EntrySet, IndexSpec, IvfParams, LshParams, SearchParams};
    use crate::par::Exec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set() -> EntrySet {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = (0..200 * 6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EntrySet::new((0..200).map(|i| 1000 - i).collect(), 6, data).unwrap()
    }

    fn specs() -> [IndexSpec; 3] {
        [
            IndexSpec::Flat,
            IndexSpec::Ivf(IvfParams::new(7, 1)),
            IndexSpec::Lsh(LshParams { bits: 80, seed: 2 }),
        ]
    }

    #[test]
    fn round_trip_every_kind() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (k, spec) in specs().into_iter().enumerate() {
            let idx = VectorIndex::build(set(), spec, Exec::Parallel).unwrap();
            let path = dir.path().join(format!("{k}.ddix"));
            save_index(&idx, &path).unwrap();
            let back = load_index(&path).unwrap();
            assert_eq!(back, idx);
            let params = SearchParams { topk: 5, nprobe: 3, rescore: 40 };
            for _ in 0..20 {
                let q: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                assert_eq!(
                    back.search(&q, &params, Exec::Sequential).unwrap(),
                    idx.search(&q, &params, Exec::Sequential).unwrap()
                );
            }
        }
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        for spec in specs() {
            let bytes = write_index(&VectorIndex::build(set(), spec, Exec::Sequential).unwrap());

            let mut b = bytes.clone();
            b[1] = b'?';
            assert!(matches!(read_index(&b), Err(FormatError::BadMagic { .. })));

            let mut b = bytes.clone();
            b[4..8].copy_from_slice(&2u32.to_le_bytes());
            assert!(matches!(read_index(&b), Err(FormatError::UnsupportedVersion { found: 2, .. })));

            let mut b = bytes.clone();
            b[8] = 7;
            assert_eq!(read_index(&b), Err(FormatError::UnknownKind(7)));

            assert!(matches!(read_index(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated { .. })));

            let mut b = bytes.clone();
            b.extend_from_slice(&[0, 0]);
            assert!(matches!(read_index(&b), Err(FormatError::Corrupt(_))));
        }
        let missing = load_index(Path::new("/nonexistent/idx"));
        assert!(matches!(missing, Err(Error::Io { .. })));
    }
}
