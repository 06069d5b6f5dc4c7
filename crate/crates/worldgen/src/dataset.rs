//! `OMVW` dataset files. All integers and floats are little-endian.
//!
//! ```text
//! header:  magic "OMVW" | version u32 = 1 | sample_count u64
//! sample:  seed u64 | F u16 | H u16 | W u16 | pad u16
//!          rgb f32[F*H*W*3] | depth f32[F*H*W] | cameras f32[F*9]
//!          caption (len u16, u16 ids) | qa_count u16
//!          qa: category u8 | question (len u16, ids) | answer (len u16, ids)
//! ```

use std::fs;
use std::path::Path;

use omniview_geom::{Camera, PoseVector, POSE_DIM};
use thiserror::Error;

use crate::qa::{QaCategory, QaPair};
use crate::sample::MultiviewSample;
use crate::vocab::{Token, Vocabulary};
use crate::Result;

pub const DATASET_MAGIC: &[u8; 4] = b"OMVW";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("dataset format error at byte {offset}: {message}")]
pub struct FormatError {
    pub offset: u64,
    pub message: String,
}

pub fn write_dataset_bytes(samples: &[MultiviewSample]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.seed.to_le_bytes());
        for dim in [s.frame_count, s.height, s.width, 0] {
            out.extend_from_slice(&(dim as u16).to_le_bytes());
        }
        for v in s.frames.iter().chain(&s.depth).chain(s.poses.iter().flatten()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_tokens(&mut out, &s.caption);
        out.extend_from_slice(&(s.qa.len() as u16).to_le_bytes());
        for qa in &s.qa {
            out.push(qa.category as u8);
            put_tokens(&mut out, &qa.question);
            put_tokens(&mut out, &qa.answer);
        }
    }
    out
}

fn put_tokens(out: &mut Vec<u8>, tokens: &[Token]) {
    out.extend_from_slice(&(tokens.len() as u16).to_le_bytes());
    for t in tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
}

pub fn write_dataset(samples: &[MultiviewSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, write_dataset_bytes(samples))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<MultiviewSample>> {
    let bytes = fs::read(path)?;
    Ok(read_dataset_bytes(&bytes)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> FormatError {
        FormatError { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!("truncated while reading {what} ({n} bytes needed, {} left)", self.bytes.len() - self.pos))),
        }
    }

    fn u8(&mut self, what: &str) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> std::result::Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.err("size overflow"))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn tokens(&mut self, what: &str) -> std::result::Result<Vec<Token>, FormatError> {
        let len = self.u16(what)? as usize;
        let start = self.pos;
        let bytes = self.take(2 * len, what)?;
        let vocab = Vocabulary::standard().len();
        let tokens: Vec<Token> = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        if let Some(k) = tokens.iter().position(|&t| t as usize >= vocab) {
            return Err(FormatError { offset: (start + 2 * k) as u64, message: format!("token id {} out of vocabulary", tokens[k]) });
        }
        Ok(tokens)
    }
}

pub fn read_dataset_bytes(bytes: &[u8]) -> std::result::Result<Vec<MultiviewSample>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != DATASET_MAGIC {
        return Err(FormatError { offset: 0, message: "bad magic".into() });
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(FormatError { offset: 4, message: format!("unsupported version {version}") });
    }
    let count = r.u64("sample count")?;
    let mut samples = Vec::new();
    for _ in 0..count {
        let seed = r.u64("seed")?;
        let at = r.pos;
        let (f, h, w) = (r.u16("F")? as usize, r.u16("H")? as usize, r.u16("W")? as usize);
        if r.u16("pad")? != 0 {
            return Err(FormatError { offset: (at + 6) as u64, message: "nonzero padding".into() });
        }
        if f == 0 || h == 0 || w == 0 {
            return Err(FormatError { offset: at as u64, message: format!("empty sample shape {f}x{h}x{w}") });
        }
        let n = f * h * w;
        let frames = r.f32s(3 * n, "rgb")?;
        let depth = r.f32s(n, "depth")?;
        let pose_at = r.pos;
        let flat = r.f32s(f * POSE_DIM, "cameras")?;
        let poses: Vec<[f32; POSE_DIM]> = flat.chunks_exact(POSE_DIM).map(|c| c.try_into().unwrap()).collect();
        for (k, p) in poses.iter().enumerate() {
            if Camera::from_pose_vector(&PoseVector::from_f32(p)).is_err() {
                return Err(FormatError { offset: (pose_at + 4 * POSE_DIM * k) as u64, message: format!("invalid camera {k}") });
            }
        }
        let caption = r.tokens("caption")?;
        let qa_count = r.u16("qa count")?;
        let mut qa = Vec::with_capacity(qa_count as usize);
        for _ in 0..qa_count {
            let cat_at = r.pos;
            let cat = r.u8("qa category")?;
            let category = QaCategory::from_u8(cat)
                .ok_or(FormatError { offset: cat_at as u64, message: format!("unknown qa category {cat}") })?;
            let question = r.tokens("question")?;
            let answer = r.tokens("answer")?;
            qa.push(QaPair { category, question, answer });
        }
        samples.push(MultiviewSample { seed, frame_count: f, height: h, width: w, frames, depth, poses, caption, qa });
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{generate_dataset, SampleSpec};

    fn small() -> Vec<MultiviewSample> {
        generate_dataset(3, 2, SampleSpec { frames: 2, height: 4, width: 6 }).unwrap()
    }

    #[test]
    fn empty_file_is_header_only() {
        let bytes = write_dataset_bytes(&[]);
        assert_eq!(bytes.len(), 16);
        assert_eq!(read_dataset_bytes(&bytes).unwrap(), vec![]);
    }

    #[test]
    fn round_trip_is_structural_and_byte_exact() {
        let samples = small();
        let bytes = write_dataset_bytes(&samples);
        let back = read_dataset_bytes(&bytes).unwrap();
        assert_eq!(back, samples);
        assert_eq!(write_dataset_bytes(&back), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.omvw");
        let samples = small();
        write_dataset(&samples, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), samples);
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = write_dataset_bytes(&small());
        for cut in 0..bytes.len() {
            let err = read_dataset_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.offset as usize <= cut, "{err}");
        }
    }

    #[test]
    fn corruptions_are_reported() {
        let bytes = write_dataset_bytes(&small());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(read_dataset_bytes(&bad).unwrap_err().offset, 0);
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(read_dataset_bytes(&bad).unwrap_err().message.contains("version"));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(read_dataset_bytes(&bad).unwrap_err().message.contains("trailing"));
    }
}
