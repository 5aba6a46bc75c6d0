use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{FeatureConfig, FeatureKind, FrameMatrix, Waveform};
use crate::error::{Error, Result};

/// Centered short-time Fourier analysis/synthesis with a periodic Hann window.
pub struct Stft {
    win: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let win = cfg.win_samples();
        let n_fft = cfg.n_fft;
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
            .collect();
        let mut planner = FftPlanner::new();
        Stft {
            win,
            hop: cfg.hop_samples(),
            n_fft,
            window,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// First sample covered by frame `t` (may be negative).
    pub(crate) fn frame_start(&self, t: usize) -> isize {
        (t * self.hop + self.hop / 2) as isize - (self.win / 2) as isize
    }

    /// Complex spectra, one row per frame.
    pub fn analyze(&self, x: &[f64], num_frames: usize) -> Array2<Complex64> {
        let bins = self.num_bins();
        let mut out = Array2::zeros((num_frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for t in 0..num_frames {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            let start = self.frame_start(t);
            for i in 0..self.win {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < x.len() {
                    buf[i].re = x[idx as usize] * self.window[i];
                }
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                out[[t, k]] = buf[k];
            }
        }
        out
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`], producing `len` samples.
    pub fn synthesize(&self, spec: &Array2<Complex64>, len: usize) -> Vec<f64> {
        let bins = self.num_bins();
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for t in 0..spec.nrows() {
            for k in 0..bins {
                buf[k] = spec[[t, k]];
            }
            for k in bins..self.n_fft {
                buf[k] = buf[self.n_fft - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = self.frame_start(t);
            for i in 0..self.win {
                let idx = start + i as isize;
                if idx >= 0 && (idx as usize) < len {
                    let w = self.window[i];
                    out[idx as usize] += buf[i].re / self.n_fft as f64 * w;
                    norm[idx as usize] += w * w;
                }
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        out
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale, `n_mels x (n_fft / 2 + 1)`, unit peak.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Array2<f64> {
    let bins = cfg.n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = Array2::zeros((cfg.n_mels, bins));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f >= left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f <= right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w.max(0.0);
        }
    }
    fb
}

/// Log-compressed mel magnitudes, `ceil(len / hop) x n_mels`.
pub fn mel_spectrogram(w: &Waveform, cfg: &FeatureConfig) -> Result<FrameMatrix> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::Contract(format!(
            "waveform rate {} does not match feature rate {}",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    if w.len() < cfg.win_samples() {
        return Err(Error::EmptyInput(format!(
            "waveform of {} samples is shorter than one {}-sample frame",
            w.len(),
            cfg.win_samples()
        )));
    }
    let stft = Stft::new(cfg);
    let frames = cfg.num_frames(w.len());
    let spec = stft.analyze(w.samples(), frames);
    let mag = spec.mapv(|c| c.norm());
    let fb = mel_filterbank(cfg);
    let mel = mag.dot(&fb.t()).mapv(|v| v.max(cfg.log_floor).ln());
    FrameMatrix::new(mel, cfg.hop_seconds(), FeatureKind::Mel)
}
