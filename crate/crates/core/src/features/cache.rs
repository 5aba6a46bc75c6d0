//! `PVCF` feature container.
//!
//! Layout (little-endian): magic `PVCF`, version `u32`, kind tag `u32`,
//! frames `u32`, width `u32`, hop in microseconds `u32`, then `T x D` `f32`
//! values row-major.
//!
//! A per-utterance cache file is three such records back to back: mel, F0
//! (kind `f0`, width 1, 0 for unvoiced) and content.

use std::path::Path;

use ndarray::Array2;

use super::{F0Track, FeatureKind, FrameMatrix};
use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PVCF";
const VERSION: u32 = 1;

pub fn encode_frame_matrix(m: &FrameMatrix) -> Vec<u8> {
    let mut w = Writer::new();
    write_record(&mut w, m);
    w.finish()
}

fn write_record(w: &mut Writer, m: &FrameMatrix) {
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(m.kind().tag());
    w.u32(m.num_frames() as u32);
    w.u32(m.dim() as u32);
    w.u32((m.hop_seconds() * 1e6).round() as u32);
    w.f32s(m.data().iter().copied());
}

pub fn decode_frame_matrix(bytes: &[u8]) -> Result<FrameMatrix> {
    let mut r = Reader::new(bytes);
    let m = read_record(&mut r)?;
    r.finish()?;
    Ok(m)
}

fn read_record(r: &mut Reader) -> Result<FrameMatrix> {
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature container version {version}")));
    }
    let kind = FeatureKind::from_tag(r.u32()?)?;
    let frames = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let hop_us = r.u32()?;
    let values = r.f32s(frames.checked_mul(dim).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    let data = Array2::from_shape_vec((frames, dim), values).map_err(|e| Error::Format(e.to_string()))?;
    FrameMatrix::new(data, hop_us as f64 * 1e-6, kind)
}

pub fn save_frame_matrix(path: impl AsRef<Path>, m: &FrameMatrix) -> Result<()> {
    binio::write_file(path.as_ref(), &encode_frame_matrix(m))
}

pub fn load_frame_matrix(path: impl AsRef<Path>) -> Result<FrameMatrix> {
    decode_frame_matrix(&binio::read_file(path.as_ref())?)
}

/// Everything extracted from one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub mel: FrameMatrix,
    pub f0: F0Track,
    pub content: FrameMatrix,
}

impl UtteranceFeatures {
    pub fn new(mel: FrameMatrix, f0: F0Track, content: FrameMatrix) -> Result<Self> {
        mel.expect_kind(FeatureKind::Mel)?;
        content.expect_kind(FeatureKind::Content)?;
        let t = mel.num_frames();
        if f0.len() != t || content.num_frames() != t {
            return Err(Error::Contract(format!(
                "mel has {t} frames, f0 {}, content {}",
                f0.len(),
                content.num_frames()
            )));
        }
        Ok(UtteranceFeatures { mel, f0, content })
    }

    pub fn num_frames(&self) -> usize {
        self.mel.num_frames()
    }

    pub fn encode(&self) -> Vec<u8> {
        let f0 = Array2::from_shape_vec((self.f0.len(), 1), self.f0.values().to_vec()).expect("column shape");
        let f0 = FrameMatrix::new(f0, self.f0.hop_seconds(), FeatureKind::F0).expect("f0 values are finite");
        let mut w = Writer::new();
        write_record(&mut w, &self.mel);
        write_record(&mut w, &f0);
        write_record(&mut w, &self.content);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let mel = read_record(&mut r)?;
        let f0 = read_record(&mut r)?;
        let content = read_record(&mut r)?;
        r.finish()?;
        f0.expect_kind(FeatureKind::F0)
            .map_err(|e| Error::Format(format!("second record: {e}")))?;
        if f0.dim() != 1 {
            return Err(Error::Format(format!("f0 record has width {}", f0.dim())));
        }
        let track = F0Track::new(f0.data().column(0).to_vec(), f0.hop_seconds())?;
        Self::new(mel, track, content).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&binio::read_file(path.as_ref())?)
    }
}
