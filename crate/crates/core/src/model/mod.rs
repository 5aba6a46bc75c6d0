//! Conversion model: content encoder, speaker table, prosody path and an
//! autoregressive mel decoder over the concatenated conditioning streams.

mod checkpoint;
mod content;
mod decoder;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use content::{ContentCache, ContentEncoder, CONTENT_CONV_LAYERS};
pub use decoder::{Decoder, DecoderCache, PrenetMasks};
pub use train::{lr_at, teacher_forced_loss, train, train_more, EpochLog, TrainingConfig, TrainingExample};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::FramePhoneMap;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FrameMatrix};
use crate::nn::{impl_params, Embedding, Params};
use crate::prosody::{
    repeat_rows, repeat_rows_backward, rdpf_blocks, select_in_blocks, AdpfCache, AdpfParams, EncoderCache,
    FilteredProsody, ProsodyEncoder, ProsodyEncoderConfig, RdpfMode, PROSODY_DIM,
};
use crate::quantizer::IndexSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProsodyMode {
    /// No prosody stream; the decoder sees zeros.
    None,
    /// Unfiltered prosody vectors.
    Base,
    Rdpf,
    Adpf,
}

impl ProsodyMode {
    pub fn name(self) -> &'static str {
        match self {
            ProsodyMode::None => "none",
            ProsodyMode::Base => "base",
            ProsodyMode::Rdpf => "rdpf",
            ProsodyMode::Adpf => "adpf",
        }
    }
}

impl std::str::FromStr for ProsodyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ProsodyMode::None),
            "base" => Ok(ProsodyMode::Base),
            "rdpf" => Ok(ProsodyMode::Rdpf),
            "adpf" => Ok(ProsodyMode::Adpf),
            other => Err(Error::Config(format!("unknown prosody mode '{other}' (none, base, rdpf, adpf)"))),
        }
    }
}

impl std::fmt::Display for ProsodyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub content_dim: usize,
    pub content_channels: usize,
    pub content_kernel: usize,
    /// Units per direction of the content GRU.
    pub content_rnn: usize,
    pub num_speakers: usize,
    pub speaker_dim: usize,
    pub prenet_dim: usize,
    pub decoder_rnn: usize,
    pub prosody: ProsodyEncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_mels: 80,
            content_dim: 128,
            content_channels: 512,
            content_kernel: 5,
            content_rnn: 256,
            num_speakers: 2,
            speaker_dim: 64,
            prenet_dim: 256,
            decoder_rnn: 512,
            prosody: ProsodyEncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Shrunken dimensions for cheap gradient checks: mel 8, content 16,
    /// conv channels 8.
    pub fn test_config() -> Self {
        ModelConfig {
            n_mels: 8,
            content_dim: 16,
            content_channels: 8,
            content_kernel: 5,
            content_rnn: 4,
            num_speakers: 3,
            speaker_dim: 4,
            prenet_dim: 8,
            decoder_rnn: 8,
            prosody: ProsodyEncoderConfig {
                codebook_size: 6,
                embed_dim: 4,
                conv_channels: vec![4; 6],
                kernel: 3,
                rnn_hidden: 4,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n_mels", self.n_mels),
            ("content_dim", self.content_dim),
            ("content_channels", self.content_channels),
            ("content_rnn", self.content_rnn),
            ("num_speakers", self.num_speakers),
            ("speaker_dim", self.speaker_dim),
            ("prenet_dim", self.prenet_dim),
            ("decoder_rnn", self.decoder_rnn),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.content_kernel % 2 == 0 {
            return Err(Error::Config("model.content_kernel must be odd".into()));
        }
        self.prosody.validate()
    }

    pub fn content_out_dim(&self) -> usize {
        2 * self.content_rnn
    }

    /// Decoder conditioning width: content + prosody + speaker.
    pub fn cond_dim(&self) -> usize {
        self.content_out_dim() + PROSODY_DIM + self.speaker_dim
    }
}

/// Per-bin mel normalization; stored with the model but never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct MelNorm {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl MelNorm {
    pub const MIN_STD: f64 = 1e-3;

    pub fn identity(dim: usize) -> Self {
        MelNorm {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn fit<'a>(mels: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<Self> {
        let mut parts = Vec::new();
        for m in mels {
            parts.push(m);
        }
        if parts.is_empty() {
            return Err(Error::EmptyInput("no mel frames to fit normalization".into()));
        }
        let all = concatenate(Axis(0), &parts).map_err(|e| Error::Contract(format!("mel widths differ: {e}")))?;
        let mean = all.mean_axis(Axis(0)).unwrap();
        let std = all.std_axis(Axis(0), 0.0).mapv(|v| v.max(Self::MIN_STD));
        Ok(MelNorm { mean, std })
    }

    pub fn normalize(&self, mel: ArrayView2<f64>) -> Array2<f64> {
        (&mel - &self.mean) / &self.std
    }

    pub fn denormalize(&self, mel: ArrayView2<f64>) -> Array2<f64> {
        &mel * &self.std + &self.mean
    }
}

/// All trainable parameters plus the fixed mel normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct VcModel {
    pub config: ModelConfig,
    pub content_encoder: ContentEncoder,
    pub speaker_table: Embedding,
    pub decoder: Decoder,
    pub prosody_encoder: ProsodyEncoder,
    pub adpf: AdpfParams,
    pub mel_norm: MelNorm,
}

impl_params!(VcModel {} nested { content_encoder, speaker_table, decoder, prosody_encoder, adpf });

/// Top-level parameter groups, in visiting order.
pub const PARAM_GROUPS: [&str; 5] = ["content_encoder", "speaker_table", "decoder", "prosody_encoder", "adpf"];

/// The three per-frame conditioning streams fed to the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub content: Array2<f64>,
    pub prosody: Array2<f64>,
    pub speaker: Array1<f64>,
}

impl Streams {
    pub fn num_frames(&self) -> usize {
        self.content.nrows()
    }

    pub fn concat(&self) -> Array2<f64> {
        let t = self.num_frames();
        let spk = self.speaker.broadcast((t, self.speaker.len())).unwrap();
        concatenate![Axis(1), self.content, self.prosody, spk]
    }
}

/// One utterance as seen by the model.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub content: &'a FrameMatrix,
    pub indices: &'a IndexSequence,
    pub alignment: Option<&'a FramePhoneMap>,
    pub speaker: usize,
}

/// How the prosody path is run for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProsodySettings {
    pub mode: ProsodyMode,
    pub tau: usize,
    pub rdpf_mode: RdpfMode,
    pub rdpf_seed: u64,
}

impl ProsodySettings {
    /// Fixed-timestamp selection, as used at conversion time.
    pub fn inference(mode: ProsodyMode, tau: usize) -> Self {
        ProsodySettings {
            mode,
            tau,
            rdpf_mode: RdpfMode::Deterministic,
            rdpf_seed: 0,
        }
    }
}

/// Training-time prenet dropout for one utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrenetDropout {
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum ProsodyCache {
    None,
    Base(EncoderCache),
    Rdpf(EncoderCache, Vec<(usize, usize)>, Vec<usize>),
    Adpf(EncoderCache, AdpfCache),
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    content: ContentCache,
    prosody: ProsodyCache,
    speaker: usize,
    decoder: DecoderCache,
    num_frames: usize,
}

impl VcModel {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let content_encoder = ContentEncoder::new(
            config.content_dim,
            config.content_channels,
            config.content_kernel,
            config.content_rnn,
            &mut rng,
        );
        let speaker_table = Embedding::new(config.num_speakers, config.speaker_dim, &mut rng);
        let decoder = Decoder::new(config.n_mels, config.cond_dim(), config.prenet_dim, config.decoder_rnn, &mut rng);
        let prosody_encoder = ProsodyEncoder::init_with(&config.prosody, &mut rng)?;
        let adpf = AdpfParams::new(PROSODY_DIM, PROSODY_DIM, &mut rng);
        Ok(VcModel {
            config: config.clone(),
            content_encoder,
            speaker_table,
            decoder,
            prosody_encoder,
            adpf,
            mel_norm: MelNorm::identity(config.n_mels),
        })
    }

    /// Number of trainable scalars in each of [`PARAM_GROUPS`].
    pub fn census(&self) -> Vec<(&'static str, usize)> {
        let mut counts = vec![0usize; PARAM_GROUPS.len()];
        self.visit("", &mut |name, _, v| {
            let group = name.split('.').next().unwrap_or("");
            let i = PARAM_GROUPS
                .iter()
                .position(|g| *g == group)
                .unwrap_or_else(|| panic!("tensor {name} belongs to no parameter group"));
            counts[i] += v.len();
        });
        PARAM_GROUPS.iter().copied().zip(counts).collect()
    }

    fn check_input(&self, input: &ModelInput, mode: ProsodyMode) -> Result<usize> {
        input.content.expect_kind(FeatureKind::Content)?;
        let t = input.content.num_frames();
        if mode != ProsodyMode::None && input.indices.len() != t {
            return Err(Error::Contract(format!(
                "index sequence has {} frames but content has {t}",
                input.indices.len()
            )));
        }
        if input.speaker >= self.config.num_speakers {
            return Err(Error::Contract(format!(
                "speaker id {} out of range for {} speakers",
                input.speaker, self.config.num_speakers
            )));
        }
        if mode == ProsodyMode::Adpf && input.alignment.is_none() {
            return Err(Error::MissingInput("alignment is required in adpf mode".into()));
        }
        Ok(t)
    }

    fn prosody_forward(&self, input: &ModelInput, t: usize, s: ProsodySettings) -> Result<(Array2<f64>, ProsodyCache)> {
        if s.mode == ProsodyMode::None {
            return Ok((Array2::zeros((t, PROSODY_DIM)), ProsodyCache::None));
        }
        let (p, enc) = self.prosody_encoder.forward(input.indices)?;
        Ok(match s.mode {
            ProsodyMode::None => unreachable!(),
            ProsodyMode::Base => (p, ProsodyCache::Base(enc)),
            ProsodyMode::Rdpf => {
                let blocks = rdpf_blocks(t, s.tau)?;
                let sel = select_in_blocks(&blocks, s.tau, s.rdpf_mode, s.rdpf_seed);
                (repeat_rows(p.view(), &blocks, &sel), ProsodyCache::Rdpf(enc, blocks, sel))
            }
            ProsodyMode::Adpf => {
                let map = input.alignment.expect("checked by check_input");
                let (out, cache) = self.adpf.forward(p.view(), map)?;
                (out, ProsodyCache::Adpf(enc, cache))
            }
        })
    }

    /// The decoder's conditioning, computed stream by stream.
    pub fn streams(&self, input: &ModelInput, settings: ProsodySettings) -> Result<Streams> {
        let t = self.check_input(input, settings.mode)?;
        let (content, _) = self.content_encoder.forward(input.content.data().view())?;
        let (prosody, _) = self.prosody_forward(input, t, settings)?;
        let speaker = self.speaker_table.table.row(input.speaker).to_owned();
        Ok(Streams {
            content,
            prosody,
            speaker,
        })
    }

    /// Teacher-forced forward on normalized targets; returns normalized mel.
    pub fn forward_train(
        &self,
        input: &ModelInput,
        target_norm: ArrayView2<f64>,
        settings: ProsodySettings,
        dropout: Option<PrenetDropout>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let t = self.check_input(input, settings.mode)?;
        if target_norm.dim() != (t, self.config.n_mels) {
            return Err(Error::Contract(format!(
                "target mel is {:?}, expected ({t}, {})",
                target_norm.dim(),
                self.config.n_mels
            )));
        }
        let (content, content_cache) = self.content_encoder.forward(input.content.data().view())?;
        let (prosody, prosody_cache) = self.prosody_forward(input, t, settings)?;
        let speaker = self.speaker_table.table.row(input.speaker).to_owned();
        let cond = Streams {
            content,
            prosody,
            speaker,
        }
        .concat();
        let prev = Decoder::shift_targets(target_norm);
        let masks = dropout.map(|d| PrenetMasks::sample(t, self.decoder.prenet_dim(), d.rate, d.seed));
        let (out, decoder) = self.decoder.forward_teacher(cond.view(), prev.view(), masks.as_ref());
        Ok((
            out,
            ForwardCache {
                content: content_cache,
                prosody: prosody_cache,
                speaker: input.speaker,
                decoder,
                num_frames: t,
            },
        ))
    }

    /// Accumulates gradients of a loss with upstream `d_out` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>, grad: &mut VcModel) {
        let d_cond = self.decoder.backward(&cache.decoder, d_out, &mut grad.decoder);
        let c = self.config.content_out_dim();
        let d_content = d_cond.slice(s![.., ..c]);
        let d_prosody = d_cond.slice(s![.., c..c + PROSODY_DIM]);
        let d_speaker = d_cond.slice(s![.., c + PROSODY_DIM..]).sum_axis(Axis(0));
        self.content_encoder
            .backward(&cache.content, d_content, &mut grad.content_encoder);
        grad.speaker_table
            .table
            .row_mut(cache.speaker)
            .scaled_add(1.0, &d_speaker);
        match &cache.prosody {
            ProsodyCache::None => {}
            ProsodyCache::Base(enc) => self.prosody_encoder.backward(enc, d_prosody, &mut grad.prosody_encoder),
            ProsodyCache::Rdpf(enc, blocks, sel) => {
                let d_p = repeat_rows_backward(d_prosody, blocks, sel, cache.num_frames);
                self.prosody_encoder.backward(enc, d_p.view(), &mut grad.prosody_encoder);
            }
            ProsodyCache::Adpf(enc, adpf_cache) => {
                let d_p = self.adpf.backward(adpf_cache, d_prosody, &mut grad.adpf);
                self.prosody_encoder.backward(enc, d_p.view(), &mut grad.prosody_encoder);
            }
        }
    }

    /// Self-fed decoding from precomputed streams; returns log-mel.
    pub fn decode_streams(&self, streams: &Streams, hop_seconds: f64) -> Result<FrameMatrix> {
        let cond = streams.concat();
        let out = self.decoder.run_free(cond.view());
        FrameMatrix::new(self.mel_norm.denormalize(out.view()), hop_seconds, FeatureKind::Mel)
    }

    /// Filtered prosody as a standalone artifact (deterministic selection).
    pub fn filtered_prosody(&self, input: &ModelInput, mode: ProsodyMode, tau: usize) -> Result<Option<FilteredProsody>> {
        if mode == ProsodyMode::None {
            return Ok(None);
        }
        let t = self.check_input(input, mode)?;
        let hop = input.content.hop_seconds();
        let embedded = self.prosody_encoder.embed(input.indices)?;
        let p = self.prosody_encoder.encode(embedded.view(), hop)?;
        debug_assert_eq!(p.num_frames(), t);
        Ok(Some(match mode {
            ProsodyMode::None => unreachable!(),
            ProsodyMode::Base => FilteredProsody::passthrough(&p)?,
            ProsodyMode::Rdpf => crate::prosody::rdpf(&p, tau, RdpfMode::Deterministic, 0)?,
            ProsodyMode::Adpf => crate::prosody::adpf(&p, input.alignment.unwrap(), &self.adpf)?,
        }))
    }
}

/// Mean absolute error and its gradient with respect to `pred`.
pub fn mae(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = pred.len() as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n;
    let grad = diff.mapv(|d| if d > 0.0 { 1.0 / n } else if d < 0.0 { -1.0 / n } else { 0.0 });
    (loss, grad)
}

#[cfg(test)]
mod tests;
