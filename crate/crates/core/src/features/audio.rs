use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Mono signal with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Contract("waveform contains non-finite samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Read a linear-PCM wave file, average channels to mono and resample to `target_rate`.
pub fn load_waveform(path: impl AsRef<Path>, target_rate: u32) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
    };
    if interleaved.is_empty() || channels == 0 {
        return Err(Error::EmptyInput(format!("{} has no audio", path.display())));
    }
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| {
            let v = frame.iter().sum::<f64>() / channels as f64;
            if v.is_finite() {
                v.clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    let wave = Waveform::new(mono, spec.sample_rate)?;
    Ok(resample(&wave, target_rate))
}

/// Write a mono 16-bit wave file.
pub fn save_waveform(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &wave.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `round(len * target / source)`; equal rates return the
/// input unchanged.
pub fn resample(wave: &Waveform, target_rate: u32) -> Waveform {
    if wave.sample_rate == target_rate || wave.samples.is_empty() {
        return Waveform {
            samples: wave.samples.clone(),
            sample_rate: target_rate,
        };
    }
    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let out_len = (wave.samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let x = &wave.samples;
    let samples = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(x.len() - 1);
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let window = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += xk * cutoff * sinc(cutoff * d) * window;
            }
            acc.clamp(-1.0, 1.0)
        })
        .collect();
    Waveform {
        samples,
        sample_rate: target_rate,
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}
