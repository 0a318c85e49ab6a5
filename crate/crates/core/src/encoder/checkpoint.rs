//! Binary checkpoint:
//!
//! ```text
//! "DDE1" | u32 version | u32 vocab_size u32 emb_dim u32 dim u32 max_ctx u32 max_res
//! | ctx E, W, b | res E, W, b          (row-major little-endian f32)
//! | u32 token_count | (u32 byte_len, utf-8 bytes) per token, in id order
//! ```

use std::path::Path;

use super::{DualEncoder, EncoderConfig, Side, TowerParams};
use crate::corpus::Vocabulary;
use crate::error::{Error, FormatError, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DDE1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(enc: &DualEncoder<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(enc))
}

pub fn load_checkpoint(path: &Path) -> Result<DualEncoder<f32>> {
    decode(&read_file(path)?)
}

pub(crate) fn encode(enc: &DualEncoder<f32>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    let c = enc.config();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    for v in [enc.vocab().len(), c.emb_dim, c.dim, c.max_ctx_tokens, c.max_res_tokens] {
        w.u32(v as u32);
    }
    for side in [Side::Context, Side::Response] {
        for (_, block) in enc.tower(side).blocks() {
            w.f32s(block);
        }
    }
    let tokens = enc.vocab().tokens();
    w.u32(tokens.len() as u32);
    for t in tokens {
        w.u32(t.len() as u32);
        w.bytes(t.as_bytes());
    }
    w.into_inner()
}

pub(crate) fn decode(bytes: &[u8]) -> Result<DualEncoder<f32>> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        }
        .into());
    }
    let mut header = [0usize; 5];
    for h in &mut header {
        *h = r.u32()? as usize;
    }
    let [vocab_size, emb_dim, dim, max_ctx_tokens, max_res_tokens] = header;
    let config = EncoderConfig {
        emb_dim,
        dim,
        max_ctx_tokens,
        max_res_tokens,
    };
    config
        .validate()
        .map_err(|e| FormatError::ShapeMismatch(e.to_string()))?;

    let mut towers = Vec::with_capacity(2);
    for _ in 0..2 {
        let embedding = r.f32s(vocab_size * emb_dim)?;
        let projection = r.f32s(dim * emb_dim)?;
        let bias = r.f32s(dim)?;
        towers.push(TowerParams {
            vocab_size,
            emb_dim,
            dim,
            embedding,
            projection,
            bias,
        });
    }

    let count = r.u32()? as usize;
    if count != vocab_size {
        return Err(FormatError::ShapeMismatch(format!(
            "header declares {vocab_size} tokens, vocabulary block holds {count}"
        ))
        .into());
    }
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        let s = std::str::from_utf8(raw)
            .map_err(|_| FormatError::Corrupt("vocabulary token is not utf-8".into()))?;
        tokens.push(s.to_string());
    }
    r.finish()?;

    let vocab = Vocabulary::from_tokens(tokens).map_err(|e| match e {
        Error::Format(f) => f,
        other => FormatError::Corrupt(other.to_string()),
    })?;
    let res = towers.pop().expect("two towers");
    let ctx = towers.pop().expect("two towers");
    DualEncoder::from_parts(config, vocab, ctx, res)
        .map_err(|e| FormatError::ShapeMismatch(e.to_string()).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn model() -> DualEncoder<f32> {
        let vocab = build_vocab(["the quick brown fox jumps"], 100, 1).unwrap();
        let config = EncoderConfig {
            emb_dim: 6,
            dim: 5,
            max_ctx_tokens: 32,
            max_res_tokens: 8,
        };
        DualEncoder::init(config, vocab, 42).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let enc = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dde");
        save_checkpoint(&enc, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        for side in [Side::Context, Side::Response] {
            for ((_, a), (_, b)) in enc.tower(side).blocks().iter().zip(back.tower(side).blocks()) {
                let a: Vec<u32> = a.iter().map(|x| x.to_bits()).collect();
                let b: Vec<u32> = b.iter().map(|x| x.to_bits()).collect();
                assert_eq!(a, b);
            }
        }
        assert_eq!(back, enc);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&model());

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::Format(FormatError::BadMagic { .. }))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode(&bad_version),
            Err(Error::Format(FormatError::UnsupportedVersion { found: 9, .. }))
        ));

        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        // claim a larger vocabulary than the parameter blocks hold
        let mut bad_shape = bytes.clone();
        bad_shape[8..12].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(decode(&bad_shape), Err(Error::Format(FormatError::ShapeMismatch(_)))));

        let mut trailing = bytes;
        trailing.push(0);
        assert!(matches!(decode(&trailing), Err(Error::Format(FormatError::Corrupt(_)))));
    }
}
