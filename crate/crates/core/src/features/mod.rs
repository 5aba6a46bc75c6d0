//! Waveform I/O and frame-level acoustic features.
//!
//! Every extractor uses the same centered framing: frame `t` is centered on
//! sample `t * hop + hop / 2`, samples outside the signal read as zero, and a
//! waveform of `n` samples yields `ceil(n / hop)` frames.

mod audio;
mod cache;
mod content;
mod f0;
mod mel;

pub use audio::{load_waveform, resample, save_waveform, Waveform};
pub use cache::{decode_frame_matrix, encode_frame_matrix, load_frame_matrix, save_frame_matrix, UtteranceFeatures};
pub use content::ContentProjection;
pub use f0::{extract_f0, F0Track};
pub use mel::{mel_filterbank, mel_spectrogram, Stft};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a [`FrameMatrix`] holds. The discriminant is the on-disk kind tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mel = 0,
    Content = 1,
    Prosody = 2,
    FilteredProsody = 3,
    F0 = 4,
}

impl FeatureKind {
    pub fn tag(self) -> u32 {
        self as u32
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            0 => FeatureKind::Mel,
            1 => FeatureKind::Content,
            2 => FeatureKind::Prosody,
            3 => FeatureKind::FilteredProsody,
            4 => FeatureKind::F0,
            other => return Err(Error::Format(format!("unknown feature kind tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mel => "mel",
            FeatureKind::Content => "content",
            FeatureKind::Prosody => "prosody",
            FeatureKind::FilteredProsody => "filtered_prosody",
            FeatureKind::F0 => "f0",
        }
    }
}

/// Time-major `T x D` matrix of per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    data: Array2<f64>,
    hop_seconds: f64,
    kind: FeatureKind,
}

impl FrameMatrix {
    pub fn new(data: Array2<f64>, hop_seconds: f64, kind: FeatureKind) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::EmptyInput(format!("{} matrix with zero frames", kind.name())));
        }
        if data.ncols() == 0 {
            return Err(Error::Contract(format!("{} matrix with zero columns", kind.name())));
        }
        if !(hop_seconds > 0.0 && hop_seconds.is_finite()) {
            return Err(Error::Contract(format!("hop must be positive, got {hop_seconds}")));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite entry {bad} in {} matrix", kind.name())));
        }
        Ok(FrameMatrix {
            data,
            hop_seconds,
            kind,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn expect_kind(&self, kind: FeatureKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Contract(format!(
                "expected {} features, got {}",
                kind.name(),
                self.kind.name()
            )));
        }
        Ok(())
    }

    /// Stack several matrices of the same kind and width along time.
    pub fn concat(parts: &[FrameMatrix]) -> Result<FrameMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyInput("nothing to concatenate".into()))?;
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        if parts.iter().any(|p| p.dim() != first.dim() || p.kind != first.kind) {
            return Err(Error::Contract("mixed kinds or widths in concat".into()));
        }
        let data = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::Contract(e.to_string()))?;
        FrameMatrix::new(data, first.hop_seconds, first.kind)
    }
}

/// Framing and filterbank parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    pub f0_min: f64,
    pub f0_max: f64,
    pub voicing_threshold: f64,
    pub content_dim: usize,
    /// Number of cepstral coefficients kept before fitting the content
    /// projection; 0 disables liftering.
    pub content_lifter: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 24_000,
            n_mels: 80,
            win_ms: 50.0,
            hop_ms: 10.0,
            n_fft: 2048,
            fmin: 0.0,
            fmax: 12_000.0,
            log_floor: 1e-5,
            f0_min: 60.0,
            f0_max: 500.0,
            voicing_threshold: 0.4,
            content_dim: 128,
            content_lifter: 0,
        }
    }
}

impl FeatureConfig {
    pub fn win_samples(&self) -> usize {
        (self.win_ms * 1e-3 * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * 1e-3 * self.sample_rate as f64).round() as usize
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_samples() as f64 / self.sample_rate as f64
    }

    /// `ceil(num_samples / hop)`.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop_samples())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.hop_samples() == 0 || self.win_samples() == 0 {
            return bad("window and hop must be at least one sample");
        }
        if self.n_fft < self.win_samples() {
            return bad("n_fft must be at least the window length");
        }
        if self.n_mels == 0 || !(self.fmax > self.fmin) || self.fmax > self.sample_rate as f64 / 2.0 {
            return bad("mel range must satisfy fmin < fmax <= Nyquist");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        if !(self.f0_min > 0.0 && self.f0_max > self.f0_min) {
            return bad("f0 range must satisfy 0 < f0_min < f0_max");
        }
        if self.content_dim == 0 {
            return bad("content_dim must be positive");
        }
        Ok(())
    }
}
