use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mae, Checkpoint, MelNorm, ModelInput, PrenetDropout, ProsodyMode, ProsodySettings, VcModel};
use crate::alignment::FramePhoneMap;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FrameMatrix};
use crate::nn::{flatten, num_params, unflatten, zeros_like, Adam};
use crate::prosody::RdpfMode;
use crate::quantizer::IndexSequence;

/// Utterances whose gradients are held in memory at once. Fixed so that
/// the summation order does not depend on the thread count.
const GRAD_GROUP: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub prosody_mode: ProsodyMode,
    /// Block length for fixed-rate selection.
    pub tau: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Drop probability on both prenet layers during training.
    pub prenet_dropout: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr0: 0.001,
            decay_rate: 0.7,
            decay_every: 10,
            epochs: 140,
            batch_size: 32,
            seed: 0,
            prosody_mode: ProsodyMode::Adpf,
            tau: 32,
            grad_clip: 1.0,
            prenet_dropout: 0.5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config("training.lr0 must be positive".into()));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config("training.decay_rate must be in (0, 1]".into()));
        }
        if self.decay_every == 0 || self.epochs == 0 || self.batch_size == 0 || self.tau == 0 {
            return Err(Error::Config(
                "training.decay_every, epochs, batch_size and tau must be positive".into(),
            ));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::Config("training.grad_clip must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::Config("training.prenet_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `lr0 · decay_rate^floor(epoch / decay_every)`.
pub fn lr_at(cfg: &TrainingConfig, epoch: usize) -> f64 {
    cfg.lr0 * cfg.decay_rate.powi((epoch / cfg.decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub content: FrameMatrix,
    pub indices: IndexSequence,
    pub alignment: Option<FramePhoneMap>,
    pub speaker: usize,
    pub mel: FrameMatrix,
}

impl TrainingExample {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            content: &self.content,
            indices: &self.indices,
            alignment: self.alignment.as_ref(),
            speaker: self.speaker,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-utterance loss over the epoch's updates.
    pub loss: f64,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{}\t{}", self.epoch, self.lr, self.loss)
    }
}

fn check_data(data: &[TrainingExample], model: &VcModel, mode: ProsodyMode) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    for (i, ex) in data.iter().enumerate() {
        ex.mel.expect_kind(FeatureKind::Mel)?;
        if ex.mel.num_frames() != ex.content.num_frames() {
            return Err(Error::Contract(format!(
                "utterance {i}: mel has {} frames, content has {}",
                ex.mel.num_frames(),
                ex.content.num_frames()
            )));
        }
        if ex.mel.dim() != model.config.n_mels {
            return Err(Error::Contract(format!(
                "utterance {i}: mel width {} but model expects {}",
                ex.mel.dim(),
                model.config.n_mels
            )));
        }
        if mode == ProsodyMode::Adpf && ex.alignment.is_none() {
            return Err(Error::MissingInput(format!("utterance {i}: alignment is required in adpf mode")));
        }
    }
    Ok(())
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn utterance_settings(cfg: &TrainingConfig, epoch: usize, utt: usize) -> ProsodySettings {
    ProsodySettings {
        mode: cfg.prosody_mode,
        tau: cfg.tau,
        rdpf_mode: RdpfMode::Random,
        rdpf_seed: mix(mix(cfg.seed, epoch as u64), utt as u64),
    }
}

fn utterance_dropout(cfg: &TrainingConfig, settings: ProsodySettings) -> Option<PrenetDropout> {
    (cfg.prenet_dropout > 0.0).then(|| PrenetDropout {
        rate: cfg.prenet_dropout,
        seed: mix(settings.rdpf_seed, 1),
    })
}

fn utterance_grad(
    model: &VcModel,
    ex: &TrainingExample,
    settings: ProsodySettings,
    dropout: Option<PrenetDropout>,
) -> Result<(f64, Vec<f64>)> {
    let target = model.mel_norm.normalize(ex.mel.data().view());
    let (pred, cache) = model.forward_train(&ex.input(), target.view(), settings, dropout)?;
    let (loss, d_pred) = mae(pred.view(), target.view());
    let mut grad = zeros_like(model);
    model.backward(&cache, d_pred.view(), &mut grad);
    Ok((loss, flatten(&grad)))
}

/// Mean teacher-forced loss over `data` on normalized mel.
pub fn teacher_forced_loss(model: &VcModel, data: &[TrainingExample], settings: ProsodySettings) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("no utterances to score".into()));
    }
    let losses = data
        .par_iter()
        .map(|ex| {
            let target = model.mel_norm.normalize(ex.mel.data().view());
            let (pred, _) = model.forward_train(&ex.input(), target.view(), settings, None)?;
            Ok(mae(pred.view(), target.view()).0)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Fresh model with normalization fitted on `data`, trained for
/// `cfg.epochs` epochs.
pub fn train(
    data: &[TrainingExample],
    model_cfg: &super::ModelConfig,
    cfg: &TrainingConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut model = VcModel::init(model_cfg, cfg.seed)?;
    check_data(data, &model, cfg.prosody_mode)?;
    model.mel_norm = MelNorm::fit(data.iter().map(|ex| ex.mel.data().view()))?;
    let n = num_params(&model);
    let mut ckpt = Checkpoint {
        model,
        optimizer: Adam::new(n),
        epoch: 0,
        training: cfg.clone(),
    };
    train_more(&mut ckpt, data, on_epoch)?;
    Ok(ckpt)
}

/// Continues from `ckpt.epoch` up to `ckpt.training.epochs`.
pub fn train_more(ckpt: &mut Checkpoint, data: &[TrainingExample], on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<()> {
    let cfg = ckpt.training.clone();
    cfg.validate()?;
    check_data(data, &ckpt.model, cfg.prosody_mode)?;
    let mut flat = flatten(&ckpt.model);
    for epoch in ckpt.epoch..cfg.epochs {
        let lr = lr_at(&cfg, epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = vec![0.0; flat.len()];
            let mut batch_loss = 0.0;
            for group in batch.chunks(GRAD_GROUP) {
                let results = group
                    .par_iter()
                    .map(|&i| {
                        let settings = utterance_settings(&cfg, epoch, i);
                        utterance_grad(&ckpt.model, &data[i], settings, utterance_dropout(&cfg, settings))
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (loss, g) in results {
                    batch_loss += loss;
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let mut utterances = batch.to_vec();
                utterances.sort_unstable();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                    utterances,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if cfg.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let c = cfg.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= c);
                }
            }
            ckpt.optimizer.update(&mut flat, &grad, lr);
            unflatten(&mut ckpt.model, &flat);
            loss_sum += batch_loss;
        }
        ckpt.epoch = epoch + 1;
        let log = EpochLog {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
        };
        log::info!("epoch {epoch} lr {lr} loss {:.5}", log.loss);
        on_epoch(&log);
    }
    Ok(())
}
