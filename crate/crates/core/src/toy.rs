//! Toy prosody-transfer benchmark on the synthetic corpus: train one model
//! per prosody mode, convert held-out utterances to the other speaker and
//! score F0 correlation between source and converted speech.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::{to_frames, FramePhoneMap};
use crate::error::{Error, Result};
use crate::eval::prosody_consistency;
use crate::features::{extract_f0, ContentProjection, FeatureConfig};
use crate::model::{train, ModelConfig, ProsodyMode, TrainingConfig, TrainingExample};
use crate::pipeline::{analyze, Analysis, Pipeline};
use crate::prosody::ProsodyEncoderConfig;
use crate::quantizer::{stack_rows, ProductCodebook};
use crate::synth::{synth_corpus, SynthConfig, SynthUtterance};
use crate::vocoder::{griffin_lim, VocoderConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub corpus: SynthConfig,
    /// Utterances per speaker held out for conversion.
    pub held_out_per_speaker: usize,
    pub content_dim: usize,
    pub content_lifter: usize,
    pub codebook_size: usize,
    pub codebook_iterations: usize,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub vocoder: VocoderConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let codebook_size = 64;
        ToyConfig {
            corpus: SynthConfig {
                min_phones: 5,
                max_phones: 8,
                min_phone_frames: 8,
                max_phone_frames: 16,
                ..SynthConfig::default()
            },
            held_out_per_speaker: 10,
            content_dim: 12,
            content_lifter: 0,
            codebook_size,
            codebook_iterations: 20,
            model: ModelConfig {
                n_mels: 80,
                content_dim: 12,
                content_channels: 32,
                content_kernel: 5,
                content_rnn: 16,
                num_speakers: 2,
                speaker_dim: 8,
                prenet_dim: 32,
                decoder_rnn: 64,
                prosody: ProsodyEncoderConfig {
                    codebook_size,
                    embed_dim: 16,
                    conv_channels: vec![8; 6],
                    kernel: 3,
                    rnn_hidden: 16,
                },
            },
            training: TrainingConfig {
                batch_size: 4,
                ..TrainingConfig::default()
            },
            vocoder: VocoderConfig::default(),
        }
    }
}

/// Per-mode outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyResult {
    pub mode: ProsodyMode,
    pub final_loss: f64,
    pub consistency: Vec<f64>,
    pub seconds: f64,
}

impl ToyResult {
    pub fn mean_consistency(&self) -> f64 {
        self.consistency.iter().sum::<f64>() / self.consistency.len().max(1) as f64
    }
}

/// Corpus features shared by every mode.
pub struct ToyData {
    pub utterances: Vec<SynthUtterance>,
    pub analyses: Vec<Analysis>,
    pub maps: Vec<FramePhoneMap>,
    pub projection: ContentProjection,
    pub codebook: ProductCodebook,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub features: FeatureConfig,
}

impl ToyData {
    pub fn build(cfg: &ToyConfig) -> Result<Self> {
        let features = FeatureConfig {
            content_dim: cfg.content_dim,
            content_lifter: cfg.content_lifter,
            ..FeatureConfig::default()
        };
        let utterances = synth_corpus(&cfg.corpus, &features)?;
        let per = cfg.corpus.utterances_per_speaker;
        if cfg.held_out_per_speaker == 0 || cfg.held_out_per_speaker >= per {
            return Err(Error::Config("held_out_per_speaker must leave training utterances".into()));
        }
        let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
        for (i, u) in utterances.iter().enumerate() {
            if i - u.speaker * per < per - cfg.held_out_per_speaker {
                train_ids.push(i);
            } else {
                test_ids.push(i);
            }
        }
        let mel_of = |w| crate::features::mel_spectrogram(w, &features);
        let mels: Vec<_> = utterances.iter().map(|u| mel_of(&u.waveform)).collect::<Result<_>>()?;
        let flat_mels: Vec<_> = utterances.iter().map(|u| mel_of(&u.flat_waveform)).collect::<Result<_>>()?;
        let train_mels: Vec<_> = train_ids.iter().map(|&i| mels[i].clone()).collect();
        let train_flat: Vec<_> = train_ids.iter().map(|&i| flat_mels[i].clone()).collect();
        let projection = ContentProjection::fit(&train_flat, &features)?;
        let (codebook, _) = ProductCodebook::train(
            &stack_rows(&train_mels)?,
            cfg.codebook_size,
            cfg.codebook_iterations,
            cfg.training.seed,
        )?;
        let mut analyses = Vec::with_capacity(utterances.len());
        let mut maps = Vec::with_capacity(utterances.len());
        for (u, flat) in utterances.iter().zip(&flat_mels) {
            let mut a = analyze(&u.waveform, &features, &projection, &codebook)?;
            // content comes from the constant-pitch rendering, standing in
            // for a pitch-independent linguistic representation
            a.content = projection.transform(flat)?;
            let (_, map) = to_frames(&u.segments, a.mel.num_frames(), features.hop_seconds())?;
            analyses.push(a);
            maps.push(map);
        }
        Ok(ToyData {
            utterances,
            analyses,
            maps,
            projection,
            codebook,
            train_ids,
            test_ids,
            features,
        })
    }

    pub fn examples(&self) -> Vec<TrainingExample> {
        self.train_ids
            .iter()
            .map(|&i| TrainingExample {
                content: self.analyses[i].content.clone(),
                indices: self.analyses[i].indices.clone(),
                alignment: Some(self.maps[i].clone()),
                speaker: self.utterances[i].speaker,
                mel: self.analyses[i].mel.clone(),
            })
            .collect()
    }
}

/// Trains in `mode` and scores cross-speaker conversions of the held-out set.
pub fn run_mode(cfg: &ToyConfig, data: &ToyData, mode: ProsodyMode, on_epoch: &mut dyn FnMut(&crate::model::EpochLog)) -> Result<ToyResult> {
    let start = Instant::now();
    let training = TrainingConfig {
        prosody_mode: mode,
        ..cfg.training.clone()
    };
    let mut final_loss = f64::NAN;
    let checkpoint = train(&data.examples(), &cfg.model, &training, &mut |l| {
        final_loss = l.loss;
        on_epoch(l);
    })?;
    let pipeline = Pipeline {
        features: data.features.clone(),
        projection: data.projection.clone(),
        codebook: data.codebook.clone(),
        checkpoint,
        vocoder: cfg.vocoder.clone(),
    };
    let mut consistency = Vec::with_capacity(data.test_ids.len());
    for &i in &data.test_ids {
        let u = &data.utterances[i];
        let target = (u.speaker + 1) % cfg.model.num_speakers;
        let conv = pipeline.convert(&data.analyses[i], Some(&data.maps[i]), target, mode)?;
        let wave = griffin_lim(&conv.mel, &data.features, &cfg.vocoder)?;
        let f0 = extract_f0(&wave, &data.features)?;
        consistency.push(prosody_consistency(&data.analyses[i].f0, &f0)?);
    }
    Ok(ToyResult {
        mode,
        final_loss,
        consistency,
        seconds: start.elapsed().as_secs_f64(),
    })
}
