//! Run configuration: one TOML document covering every stage.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! wav_dir = "corpus/wavs"          # *.wav, utterance id = file stem
//! alignment_dir = "corpus/align"   # optional: <id>.tsv or <id>.TextGrid
//! speakers = "corpus/speakers.tsv" # optional: <id>\t<speaker>; default is the id prefix before '_'
//! work_dir = "work"
//!
//! [features]    # FeatureConfig
//! [quantizer]   # codebook_size, iterations
//! [model]       # ModelConfig
//! [training]    # TrainingConfig; its seed is replaced by the top-level seed
//! [vocoder]
//! [evaluation]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{ClassifierConfig, DEFAULT_ENROLL_UTTERANCES};
use crate::features::FeatureConfig;
use crate::model::{ModelConfig, TrainingConfig};
use crate::quantizer::DEFAULT_CODEBOOK_SIZE;
use crate::vocoder::VocoderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub wav_dir: PathBuf,
    pub alignment_dir: Option<PathBuf>,
    pub speakers: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            wav_dir: PathBuf::from("wavs"),
            alignment_dir: None,
            speakers: None,
            work_dir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerConfig {
    pub codebook_size: usize,
    pub iterations: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            iterations: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Classifier,
    Stats,
    /// Argmax over the first `onehot_bins` bins; for fixtures.
    Onehot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub embedder: EmbedderKind,
    pub onehot_bins: usize,
    pub enroll_utterances: usize,
    /// Fixed cosine threshold; the equal-error-rate threshold when absent.
    pub threshold: Option<f64>,
    pub classifier: ClassifierConfig,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            embedder: EmbedderKind::Classifier,
            onehot_bins: 8,
            enroll_utterances: DEFAULT_ENROLL_UTTERANCES,
            threshold: None,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub features: FeatureConfig,
    pub quantizer: QuantizerConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub vocoder: VocoderConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: PathsConfig::default(),
            features: FeatureConfig::default(),
            quantizer: QuantizerConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            vocoder: VocoderConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.wav_dir);
        fix(&mut self.paths.work_dir);
        if let Some(p) = self.paths.alignment_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paths.speakers.as_mut() {
            fix(p);
        }
    }

    /// Propagates the single seed to every randomized stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.seed = seed;
        self.vocoder.seed = seed;
        self.evaluation.classifier.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if self.quantizer.codebook_size < 2 || self.quantizer.iterations == 0 {
            return Err(Error::Config("quantizer.codebook_size must be ≥ 2 and iterations positive".into()));
        }
        if self.model.prosody.codebook_size != self.quantizer.codebook_size {
            return Err(Error::Config(format!(
                "model.prosody.codebook_size ({}) must equal quantizer.codebook_size ({})",
                self.model.prosody.codebook_size, self.quantizer.codebook_size
            )));
        }
        if self.model.n_mels != self.features.n_mels {
            return Err(Error::Config(format!(
                "model.n_mels ({}) must equal features.n_mels ({})",
                self.model.n_mels, self.features.n_mels
            )));
        }
        if self.model.content_dim != self.features.content_dim {
            return Err(Error::Config(format!(
                "model.content_dim ({}) must equal features.content_dim ({})",
                self.model.content_dim, self.features.content_dim
            )));
        }
        if self.evaluation.enroll_utterances == 0 {
            return Err(Error::Config("evaluation.enroll_utterances must be positive".into()));
        }
        if let Some(t) = self.evaluation.threshold {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::Config("evaluation.threshold must lie in [-1, 1]".into()));
            }
        }
        Ok(())
    }

    /// Canonical JSON of every semantic key (paths excluded), keys sorted.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().unwrap().remove("paths");
        v.to_string()
    }

    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
