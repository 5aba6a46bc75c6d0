use super::{FeatureConfig, Waveform};
use crate::error::{Error, Result};

/// Per-frame fundamental frequency in Hz; 0 marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    values: Vec<f64>,
    hop_seconds: f64,
}

impl F0Track {
    pub fn new(values: Vec<f64>, hop_seconds: f64) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Contract("f0 values must be finite and non-negative".into()));
        }
        if !(hop_seconds > 0.0) {
            return Err(Error::Contract("hop must be positive".into()));
        }
        Ok(F0Track {
            values,
            hop_seconds,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_seconds
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|v| **v > 0.0).count() as f64 / self.values.len() as f64
    }
}

const SILENCE_RMS: f64 = 1e-4;
const LOWPASS_HZ: f64 = 1000.0;
const MEDIAN_FRAMES: usize = 5;
const MIN_VOICED_RUN: usize = 3;
const LAG_PENALTY: f64 = 0.3;
const OUTLIER_FRAMES: usize = 9;
const OUTLIER_OCTAVES: f64 = 0.3;

fn biquad_lowpass(x: &mut [f64], cutoff: f64, sr: f64, q: f64) {
    let w0 = 2.0 * std::f64::consts::PI * cutoff / sr;
    let alpha = w0.sin() / (2.0 * q);
    let cw = w0.cos();
    let a0 = 1.0 + alpha;
    let b0 = (1.0 - cw) / 2.0 / a0;
    let b1 = (1.0 - cw) / a0;
    let a1 = -2.0 * cw / a0;
    let a2 = (1.0 - alpha) / a0;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b1 * x1 + b0 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Zero-phase fourth-order Butterworth low-pass (forward and reverse passes).
fn lowpass(x: &[f64], cutoff: f64, sr: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    for _ in 0..2 {
        biquad_lowpass(&mut y, cutoff, sr, 0.541_196_1);
        biquad_lowpass(&mut y, cutoff, sr, 1.306_563);
        y.reverse();
    }
    y
}

fn median_filter(x: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..x.len())
        .map(|i| {
            let mut w = x[i.saturating_sub(half)..(i + half + 1).min(x.len())].to_vec();
            w.sort_by(f64::total_cmp);
            w[w.len() / 2]
        })
        .collect()
}

/// Drops voiced runs shorter than `MIN_VOICED_RUN`, pulls frames more than
/// `OUTLIER_OCTAVES` away from a wide running median back onto it, then
/// median-filters.
fn smooth_track(values: &mut [f64]) {
    let mut t = 0;
    while t < values.len() {
        if values[t] == 0.0 {
            t += 1;
            continue;
        }
        let end = (t..values.len()).find(|&i| values[i] == 0.0).unwrap_or(values.len());
        if end - t < MIN_VOICED_RUN {
            values[t..end].iter_mut().for_each(|v| *v = 0.0);
        } else {
            let run = &mut values[t..end];
            let wide = median_filter(run, OUTLIER_FRAMES);
            for (v, m) in run.iter_mut().zip(&wide) {
                if (*v / m).log2().abs() > OUTLIER_OCTAVES {
                    *v = *m;
                }
            }
            let narrow = median_filter(run, MEDIAN_FRAMES);
            run.copy_from_slice(&narrow);
        }
        t = end;
    }
}

/// Normalized cross-correlation pitch tracker on the mel framing.
///
/// The signal is low-passed at 1 kHz before correlation. The local NCCF peak
/// with the highest score wins, where the score discounts longer lags
/// linearly to suppress sub-octave errors; the lag is refined by parabolic
/// interpolation. Voiced
/// runs shorter than three frames are dropped, octave outliers are pulled onto
/// a nine-frame running median, and the track is median-filtered over five
/// frames.
pub fn extract_f0(w: &Waveform, cfg: &FeatureConfig) -> Result<F0Track> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::Contract(format!(
            "waveform rate {} does not match feature rate {}",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    let win = cfg.win_samples();
    if w.len() < win {
        return Err(Error::EmptyInput(format!(
            "waveform of {} samples is shorter than one frame",
            w.len()
        )));
    }
    let hop = cfg.hop_samples();
    let sr = cfg.sample_rate as f64;
    let min_lag = (sr / cfg.f0_max).floor().max(2.0) as usize;
    let max_lag = ((sr / cfg.f0_min).ceil() as usize).min(win - 2);
    let frames = cfg.num_frames(w.len());
    let x = lowpass(w.samples(), LOWPASS_HZ, sr);

    let mut frame = vec![0.0; win];
    let mut nccf = vec![0.0; max_lag + 2];
    let mut values: Vec<f64> = (0..frames)
        .map(|t| {
            let start = (t * hop + hop / 2) as isize - (win / 2) as isize;
            for (i, v) in frame.iter_mut().enumerate() {
                let idx = start + i as isize;
                *v = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    0.0
                };
            }
            let rms = (frame.iter().map(|v| v * v).sum::<f64>() / win as f64).sqrt();
            if rms < SILENCE_RMS {
                return 0.0;
            }
            // prefix sums of energy for O(1) window energies
            let mut energy = vec![0.0; win + 1];
            for i in 0..win {
                energy[i + 1] = energy[i] + frame[i] * frame[i];
            }
            let mut best = f64::MIN;
            for lag in (min_lag - 1)..=(max_lag + 1) {
                let n = win - lag;
                let cross: f64 = frame[..n].iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum();
                let e0 = energy[n];
                let e1 = energy[win] - energy[lag];
                let denom = (e0 * e1).sqrt();
                nccf[lag] = if denom > 1e-12 { cross / denom } else { 0.0 };
                if (min_lag..=max_lag).contains(&lag) {
                    best = best.max(nccf[lag]);
                }
            }
            if best < cfg.voicing_threshold {
                return 0.0;
            }
            let score = |l: usize| nccf[l] * (1.0 - LAG_PENALTY * l as f64 / max_lag as f64);
            let pick = (min_lag..=max_lag)
                .filter(|&l| nccf[l] >= nccf[l - 1] && nccf[l] >= nccf[l + 1])
                .max_by(|&a, &b| score(a).total_cmp(&score(b)))
                .unwrap_or(min_lag);
            let (a, b, c) = (nccf[pick - 1], nccf[pick], nccf[pick + 1]);
            let curvature = a - 2.0 * b + c;
            let offset = if curvature.abs() > 1e-12 {
                (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            sr / (pick as f64 + offset)
        })
        .collect();
    smooth_track(&mut values);
    F0Track::new(values, cfg.hop_seconds())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(segments: &[(f64, usize)]) -> Waveform {
        let mut phase = 0.0f64;
        let mut out = Vec::new();
        for &(f, n) in segments {
            for _ in 0..n {
                out.push(0.5 * phase.sin());
                phase += 2.0 * PI * f / 24_000.0;
            }
        }
        Waveform::new(out, 24_000).unwrap()
    }

    #[test]
    fn pure_200hz_tone() {
        let cfg = FeatureConfig::default();
        let f0 = extract_f0(&tone(&[(200.0, 24_000)]), &cfg).unwrap();
        assert_eq!(f0.len(), 100);
        // interior frames are fully inside the signal
        for &v in &f0.values()[3..97] {
            assert!((v - 200.0).abs() <= 5.0, "{v}");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let cfg = FeatureConfig::default();
        let f0 = extract_f0(&Waveform::new(vec![0.0; 24_000], 24_000).unwrap(), &cfg).unwrap();
        assert!(f0.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_plateaus() {
        let cfg = FeatureConfig::default();
        let f0 = extract_f0(&tone(&[(200.0, 12_000), (300.0, 12_000)]), &cfg).unwrap();
        for &v in &f0.values()[3..45] {
            assert!((v - 200.0).abs() <= 5.0, "{v}");
        }
        for &v in &f0.values()[55..97] {
            assert!((v - 300.0).abs() <= 5.0, "{v}");
        }
    }

    #[test]
    fn harmonic_rich_signal_tracks_fundamental() {
        let cfg = FeatureConfig::default();
        let x: Vec<f64> = (0..24_000)
            .map(|i| {
                let t = i as f64 / 24_000.0;
                (1..8).map(|h| (2.0 * PI * 150.0 * h as f64 * t).sin() / h as f64).sum::<f64>() * 0.2
            })
            .collect();
        let f0 = extract_f0(&Waveform::new(x, 24_000).unwrap(), &cfg).unwrap();
        for &v in &f0.values()[3..97] {
            assert!((v - 150.0).abs() <= 5.0, "{v}");
        }
    }
}
