//! Iterative phase reconstruction from log-mel frames.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{mel_filterbank, FeatureConfig, FeatureKind, FrameMatrix, Stft, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocoderConfig {
    pub iterations: usize,
    pub seed: u64,
}

impl Default for VocoderConfig {
    fn default() -> Self {
        VocoderConfig { iterations: 32, seed: 0 }
    }
}

/// Linear magnitude from log-mel: each mel band's energy is spread back over
/// its filter, divided by the filter's area.
pub fn mel_to_linear(mel: &FrameMatrix, cfg: &FeatureConfig) -> Result<Array2<f64>> {
    mel.expect_kind(FeatureKind::Mel)?;
    if mel.dim() != cfg.n_mels {
        return Err(Error::Contract(format!(
            "mel width {} does not match configured {} bands",
            mel.dim(),
            cfg.n_mels
        )));
    }
    let fb = mel_filterbank(cfg);
    let area = fb.sum_axis(Axis(1)).mapv(|a| if a > 0.0 { 1.0 / a } else { 0.0 });
    let energy = mel.data().mapv(f64::exp) * &area;
    Ok(energy.dot(&fb))
}

/// Griffin-Lim reconstruction; the output has `T * hop` samples.
pub fn griffin_lim(mel: &FrameMatrix, cfg: &FeatureConfig, vc: &VocoderConfig) -> Result<Waveform> {
    cfg.validate()?;
    let mag = mel_to_linear(mel, cfg)?;
    let stft = Stft::new(cfg);
    let frames = mel.num_frames();
    let len = frames * cfg.hop_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(vc.seed);
    let mut spec = mag.mapv(|m| Complex64::from_polar(m, rng.gen_range(0.0..std::f64::consts::TAU)));
    let mut signal = stft.synthesize(&spec, len);
    for _ in 0..vc.iterations {
        let est = stft.analyze(&signal, frames);
        spec.zip_mut_with(&est, |s, e| {
            let n = e.norm();
            let phase = if n > 1e-12 { e / n } else { Complex64::new(1.0, 0.0) };
            *s = phase * s.norm();
        });
        signal = stft.synthesize(&spec, len);
    }
    Waveform::new(signal, cfg.sample_rate)
}
