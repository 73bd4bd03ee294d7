//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"GRSC" | version u32 | V u64 | d u64 | h u64 | Lmax u64 | vocab hash u64
//! | meta length u32 | meta (UTF-8) | parameter arrays as f32
//! ```
//!
//! Arrays follow in a fixed order (token, position, condition projection,
//! task, W1, b1, W2, b2, output, output bias), each row-major.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{ModelShape, ScorerParams};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"GRSC";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint was trained against vocabulary {found:016x}, but vocabulary {expected:016x} was supplied")]
    VocabHashMismatch { expected: u64, found: u64 },
    #[error("checkpoint is truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("checkpoint metadata is not UTF-8")]
    BadMeta,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ScorerParams<T>,
    pub vocab_hash: u64,
    /// Free-form text stored with the weights (the run's provenance header).
    pub meta: String,
}

pub fn encode<T: Scalar>(params: &ScorerParams<T>, vocab_hash: u64, meta: &str) -> Vec<u8> {
    let shape = params.shape();
    let mut out = Vec::with_capacity(48 + meta.len() + 4 * params.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for x in [shape.vocab, shape.cond_dim, shape.hidden, shape.max_len] {
        out.extend_from_slice(&(x as u64).to_le_bytes());
    }
    out.extend_from_slice(&vocab_hash.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for s in params.slices() {
        for &x in s {
            out.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated { offset: self.pos, needed: n });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a checkpoint; with `expected_vocab` set, the stored vocabulary
/// fingerprint must match it.
pub fn decode<T: Scalar>(buf: &[u8], expected_vocab: Option<u64>) -> Result<Checkpoint<T>, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.bytes(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION });
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u64()? as usize;
    }
    let vocab_hash = r.u64()?;
    if let Some(expected) = expected_vocab {
        if expected != vocab_hash {
            return Err(CheckpointError::VocabHashMismatch { expected, found: vocab_hash });
        }
    }
    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.bytes(meta_len)?)
        .map_err(|_| CheckpointError::BadMeta)?
        .to_owned();
    let [vocab, cond_dim, hidden, max_len] = dims;
    let shape = ModelShape { vocab, cond_dim, hidden, max_len };
    let needed = [vocab * hidden * 2 + vocab, max_len * hidden, cond_dim * hidden, 2 * hidden, 2 * hidden * hidden + 2 * hidden]
        .iter()
        .sum::<usize>()
        * 4;
    if buf.len() - r.pos < needed {
        return Err(CheckpointError::Truncated { offset: r.pos, needed });
    }
    let mut params = ScorerParams::<T>::zeros(shape);
    for s in params.slices_mut() {
        let raw = r.bytes(4 * s.len())?;
        for (x, chunk) in s.iter_mut().zip(raw.chunks_exact(4)) {
            *x = T::from_f32(f32::from_le_bytes(chunk.try_into().expect("4 bytes"))).expect("f32 fits");
        }
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
    }
    Ok(Checkpoint { params, vocab_hash, meta })
}

pub fn save_checkpoint<T: Scalar>(
    params: &ScorerParams<T>,
    vocab_hash: u64,
    meta: &str,
    path: &Path,
) -> Result<(), CheckpointError> {
    fs::write(path, encode(params, vocab_hash, meta))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path, expected_vocab: Option<u64>) -> Result<Checkpoint<T>, CheckpointError> {
    decode(&fs::read(path)?, expected_vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::Task;

    fn params() -> ScorerParams<f32> {
        let shape = ModelShape { vocab: 12, cond_dim: 3, hidden: 5, max_len: 4 };
        let mut p = ScorerParams::init(shape, 9);
        let q = ScorerParams::<f32>::init(shape, 10);
        p.w_out.assign(&q.token_embed);
        p.b_out.iter_mut().enumerate().for_each(|(i, b)| *b = i as f32 / 7.0);
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let p = params();
        save_checkpoint(&p, 0xABCD, "#!genret meta", &path).unwrap();
        let ck = load_checkpoint::<f32>(&path, Some(0xABCD)).unwrap();
        assert_eq!(ck.params, p);
        assert_eq!(ck.meta, "#!genret meta");
        let cond = [0.2, 0.3, -0.9];
        assert_eq!(
            ck.params.score_next(&cond, Task::Retrieve, &[4, 5]).unwrap(),
            p.score_next(&cond, Task::Retrieve, &[4, 5]).unwrap()
        );
    }

    #[test]
    fn vocab_mismatch() {
        let bytes = encode(&params(), 1, "");
        assert!(matches!(
            decode::<f32>(&bytes, Some(2)),
            Err(CheckpointError::VocabHashMismatch { expected: 2, found: 1 })
        ));
        assert!(decode::<f32>(&bytes, None).is_ok());
    }

    #[test]
    fn truncated_and_corrupt_files() {
        let bytes = encode(&params(), 1, "m");
        for cut in [0, 3, 10, 50, bytes.len() - 1] {
            assert!(decode::<f32>(&bytes[..cut], None).is_err(), "cut {cut}");
        }
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            decode::<f32>(&wrong_version, None),
            Err(CheckpointError::VersionMismatch { found: 9, expected: 1 })
        ));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode::<f32>(&bad_magic, None), Err(CheckpointError::BadMagic)));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode::<f32>(&extra, None), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn f64_params_load_as_rounded_f32() {
        let shape = ModelShape { vocab: 4, cond_dim: 2, hidden: 3, max_len: 2 };
        let p = ScorerParams::<f64>::init(shape, 1);
        let ck = decode::<f64>(&encode(&p, 0, ""), None).unwrap();
        for (a, b) in ck.params.slices().iter().zip(p.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }
}
