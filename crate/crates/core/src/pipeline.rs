//! End-to-end conversion from a waveform: analysis, quantization, prosody
//! encoding and filtering, decoding and phase reconstruction.

use crate::alignment::FramePhoneMap;
use crate::error::{Error, Result};
use crate::features::{extract_f0, mel_spectrogram, ContentProjection, F0Track, FeatureConfig, FrameMatrix, Waveform};
use crate::model::{Checkpoint, ModelInput, ProsodyMode, ProsodySettings, Streams};
use crate::prosody::FilteredProsody;
use crate::quantizer::{IndexSequence, ProductCodebook};
use crate::vocoder::{griffin_lim, VocoderConfig};

/// Per-utterance features the model consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub mel: FrameMatrix,
    pub f0: F0Track,
    pub content: FrameMatrix,
    pub indices: IndexSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub mel: FrameMatrix,
    /// The decoder's conditioning, stream by stream.
    pub streams: Streams,
    pub filtered: Option<FilteredProsody>,
    pub waveform: Option<Waveform>,
}

/// Everything needed to convert: feature settings, content projection,
/// product codebook and a trained checkpoint.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub features: FeatureConfig,
    pub projection: ContentProjection,
    pub codebook: ProductCodebook,
    pub checkpoint: Checkpoint,
    pub vocoder: VocoderConfig,
}

/// Mel, F0, content and indices for one waveform.
pub fn analyze(wave: &Waveform, features: &FeatureConfig, projection: &ContentProjection, codebook: &ProductCodebook) -> Result<Analysis> {
    let mel = mel_spectrogram(wave, features)?;
    let f0 = extract_f0(wave, features)?;
    let content = projection.transform(&mel)?;
    let indices = codebook.quantize(&mel)?;
    Ok(Analysis { mel, f0, content, indices })
}

impl Pipeline {
    pub fn mode(&self) -> ProsodyMode {
        self.checkpoint.training.prosody_mode
    }

    pub fn analyze(&self, wave: &Waveform) -> Result<Analysis> {
        analyze(wave, &self.features, &self.projection, &self.codebook)
    }

    /// Decodes `analysis` for `target_speaker`. `mode` must match the mode
    /// the checkpoint was trained in.
    pub fn convert(
        &self,
        analysis: &Analysis,
        alignment: Option<&FramePhoneMap>,
        target_speaker: usize,
        mode: ProsodyMode,
    ) -> Result<Conversion> {
        if mode != self.mode() {
            return Err(Error::Contract(format!(
                "checkpoint was trained in mode {} but {mode} was requested",
                self.mode()
            )));
        }
        let model = &self.checkpoint.model;
        let input = ModelInput {
            content: &analysis.content,
            indices: &analysis.indices,
            alignment,
            speaker: target_speaker,
        };
        let settings = ProsodySettings::inference(mode, self.checkpoint.training.tau);
        let streams = model.streams(&input, settings)?;
        let filtered = model.filtered_prosody(&input, mode, settings.tau)?;
        let mel = model.decode_streams(&streams, analysis.mel.hop_seconds())?;
        Ok(Conversion {
            mel,
            streams,
            filtered,
            waveform: None,
        })
    }

    /// [`Self::convert`] followed by phase reconstruction.
    pub fn convert_waveform(
        &self,
        wave: &Waveform,
        alignment: Option<&FramePhoneMap>,
        target_speaker: usize,
        mode: ProsodyMode,
    ) -> Result<Conversion> {
        let analysis = self.analyze(wave)?;
        let mut conv = self.convert(&analysis, alignment, target_speaker, mode)?;
        conv.waveform = Some(griffin_lim(&conv.mel, &self.features, &self.vocoder)?);
        Ok(conv)
    }
}
