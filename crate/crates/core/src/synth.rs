//! Seeded toy corpus: harmonic vowel sequences with formant envelopes,
//! known phone boundaries and per-phone F0 drawn independently of the
//! vowel. Speakers differ in formant scale, spectral tilt and F0 range.
//! Every utterance also comes rendered at constant pitch, which gives a
//! pitch-free view of its content.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{RawSegment, SILENCE_LABEL};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, Waveform};

/// Vowel label and its first three formants in Hz.
pub const VOWELS: [(&str, [f64; 3]); 5] = [
    ("a", [730.0, 1090.0, 2440.0]),
    ("e", [530.0, 1840.0, 2480.0]),
    ("i", [270.0, 2290.0, 3010.0]),
    ("o", [570.0, 840.0, 2410.0]),
    ("u", [300.0, 870.0, 2240.0]),
];

const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];
const MAX_HARMONIC_HZ: f64 = 5000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_phones: usize,
    pub max_phones: usize,
    pub min_phone_frames: usize,
    pub max_phone_frames: usize,
    /// Leading and trailing silence, in frames.
    pub edge_silence_frames: usize,
    /// Half-width of the uniform per-phone pitch draw, in semitones.
    pub pitch_range_semitones: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_speakers: 2,
            utterances_per_speaker: 40,
            min_phones: 6,
            max_phones: 10,
            min_phone_frames: 10,
            max_phone_frames: 25,
            edge_silence_frames: 4,
            pitch_range_semitones: 4.5,
            seed: 0,
        }
    }
}

/// Voice parameters of one synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpeaker {
    pub f0_base: f64,
    pub formant_scale: f64,
    /// Spectral slope exponent applied as `(f / 500)^-tilt`.
    pub tilt: f64,
}

impl SynthSpeaker {
    /// Speaker `k`: F0 bases 150, 180, 210 Hz..., formants scaled by 0.9 +
    /// 0.18k, alternating tilt.
    pub fn preset(k: usize) -> Self {
        SynthSpeaker {
            f0_base: 150.0 + 30.0 * k as f64,
            formant_scale: 0.9 + 0.18 * k as f64,
            tilt: if k % 2 == 0 { 0.6 } else { 1.1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: usize,
    pub waveform: Waveform,
    pub segments: Vec<RawSegment>,
    /// Generating F0 per frame, 0 in silence.
    pub f0: Vec<f64>,
    /// The same phones, timing and noise rendered at the speaker's base
    /// pitch throughout.
    pub flat_waveform: Waveform,
}

fn envelope(f: f64, formants: &[f64; 3], spk: &SynthSpeaker) -> f64 {
    let mut a = 0.02;
    for (i, &fc) in formants.iter().enumerate() {
        let x = (f - fc) / BANDWIDTHS[i];
        a += [1.0, 0.6, 0.35][i] / (1.0 + x * x);
    }
    a * (f.max(50.0) / 500.0).powf(-spk.tilt)
}

fn smooth(x: &[f64], radius: usize) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// One utterance from an explicit phone plan: `(vowel index or None for
/// silence, frames, F0 in Hz)`.
pub fn render(
    plan: &[(Option<usize>, usize, f64)],
    spk: &SynthSpeaker,
    features: &FeatureConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Waveform, Vec<RawSegment>, Vec<f64>)> {
    let hop = features.hop_samples();
    let sr = features.sample_rate as f64;
    let frames: usize = plan.iter().map(|p| p.1).sum();
    if frames == 0 {
        return Err(Error::EmptyInput("empty synthesis plan".into()));
    }
    let mut gain = Vec::with_capacity(frames);
    let mut f0 = Vec::with_capacity(frames);
    let mut formants: [Vec<f64>; 3] = Default::default();
    let mut segments = Vec::new();
    let mut start = 0;
    let mut last_vowel = 0;
    for &(vowel, n, hz) in plan {
        let v = vowel.unwrap_or(last_vowel);
        last_vowel = v;
        for _ in 0..n {
            gain.push(if vowel.is_some() { 1.0 } else { 0.0 });
            f0.push(if vowel.is_some() { hz } else { 0.0 });
            for k in 0..3 {
                formants[k].push(VOWELS[v].1[k] * spk.formant_scale);
            }
        }
        let label = vowel.map_or(SILENCE_LABEL, |v| VOWELS[v].0);
        let t0 = start as f64 * hop as f64 / sr;
        let t1 = (start + n) as f64 * hop as f64 / sr;
        segments.push(RawSegment::new(label, t0, t1));
        start += n;
    }
    let gain = smooth(&gain, 1);
    let formants = formants.map(|f| smooth(&f, 2));
    // glide pitch across boundaries, holding it through silence
    let mut held = f0.clone();
    let first = held.iter().copied().find(|&v| v > 0.0).unwrap_or(spk.f0_base);
    let mut prev = first;
    for v in held.iter_mut() {
        if *v > 0.0 {
            prev = *v;
        } else {
            *v = prev;
        }
    }
    let pitch = smooth(&held, 1);

    let len = frames * hop;
    let mut samples = vec![0.0; len];
    let mut phase = 0.0f64;
    let max_h = (MAX_HARMONIC_HZ / (spk.f0_base * 0.6)).ceil() as usize;
    let mut amps = vec![vec![0.0; max_h + 1]; frames];
    for t in 0..frames {
        let fm = [formants[0][t], formants[1][t], formants[2][t]];
        // harmonic density grows as pitch falls; hold frame power constant
        let density = (pitch[t] / spk.f0_base).sqrt();
        for h in 1..=max_h {
            let f = h as f64 * pitch[t];
            if f < MAX_HARMONIC_HZ {
                amps[t][h] = envelope(f, &fm, spk) * gain[t] * density;
            }
        }
    }
    for (i, s) in samples.iter_mut().enumerate() {
        // frame centers sit at t * hop + hop / 2
        let pos = (i as f64 - hop as f64 / 2.0) / hop as f64;
        let t0 = pos.floor().clamp(0.0, (frames - 1) as f64) as usize;
        let t1 = (t0 + 1).min(frames - 1);
        let w = (pos - t0 as f64).clamp(0.0, 1.0);
        let hz = pitch[t0] * (1.0 - w) + pitch[t1] * w;
        phase = (phase + std::f64::consts::TAU * hz / sr) % std::f64::consts::TAU;
        let mut acc = 0.0;
        for h in 1..=max_h {
            let a = amps[t0][h] * (1.0 - w) + amps[t1][h] * w;
            if a > 0.0 {
                acc += a * (h as f64 * phase).sin();
            }
        }
        *s = 0.05 * acc + rng.gen_range(-1e-4..1e-4);
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        samples.iter_mut().for_each(|v| *v *= 0.95 / peak);
    }
    Ok((Waveform::new(samples, features.sample_rate)?, segments, f0))
}

/// The full corpus, speaker-major, ids `spk{s}_{u:03}`.
pub fn synth_corpus(cfg: &SynthConfig, features: &FeatureConfig) -> Result<Vec<SynthUtterance>> {
    if cfg.num_speakers == 0 || cfg.utterances_per_speaker == 0 {
        return Err(Error::Config("synthetic corpus needs speakers and utterances".into()));
    }
    if cfg.min_phones == 0 || cfg.min_phones > cfg.max_phones || cfg.min_phone_frames == 0 || cfg.min_phone_frames > cfg.max_phone_frames {
        return Err(Error::Config("synthetic phone counts and lengths must be positive ranges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for s in 0..cfg.num_speakers {
        let spk = SynthSpeaker::preset(s);
        for u in 0..cfg.utterances_per_speaker {
            let n = rng.gen_range(cfg.min_phones..=cfg.max_phones);
            let mut plan = Vec::with_capacity(n + 2);
            if cfg.edge_silence_frames > 0 {
                plan.push((None, cfg.edge_silence_frames, 0.0));
            }
            let mut prev_vowel = usize::MAX;
            for _ in 0..n {
                let mut v = rng.gen_range(0..VOWELS.len());
                if v == prev_vowel {
                    v = (v + 1) % VOWELS.len();
                }
                prev_vowel = v;
                let frames = rng.gen_range(cfg.min_phone_frames..=cfg.max_phone_frames);
                let semis = rng.gen_range(-cfg.pitch_range_semitones..=cfg.pitch_range_semitones);
                plan.push((Some(v), frames, spk.f0_base * 2f64.powf(semis / 12.0)));
            }
            if cfg.edge_silence_frames > 0 {
                plan.push((None, cfg.edge_silence_frames, 0.0));
            }
            let mut flat_rng = rng.clone();
            let (waveform, segments, f0) = render(&plan, &spk, features, &mut rng)?;
            let flat_plan: Vec<_> = plan.iter().map(|&(v, n, _)| (v, n, v.map_or(0.0, |_| spk.f0_base))).collect();
            let (flat_waveform, _, _) = render(&flat_plan, &spk, features, &mut flat_rng)?;
            out.push(SynthUtterance {
                id: format!("spk{s}_{u:03}"),
                speaker: s,
                waveform,
                segments,
                f0,
                flat_waveform,
            });
        }
    }
    Ok(out)
}
