//! Objective scoring: speaker similarity through false acceptance against an
//! enrolled target, and prosody consistency through F0 correlation.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{F0Track, FeatureKind, FrameMatrix};
use crate::nn::{flatten, impl_params, num_params, relu, relu_backward, unflatten, zeros_like, Adam, Linear};

/// Deterministic map from a mel matrix to a unit-norm vector.
pub trait SpeakerEmbedder: Send + Sync {
    fn embed(&self, mel: &FrameMatrix) -> Result<Array1<f64>>;

    fn name(&self) -> &str;
}

fn unit(v: Array1<f64>) -> Result<Array1<f64>> {
    let n = v.dot(&v).sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::Validation("embedding has zero or non-finite norm".into()));
    }
    Ok(v / n)
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let d = a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
    d.clamp(-1.0, 1.0)
}

/// Per-bin mean and standard deviation over time, optionally centered on a
/// population mean before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsEmbedder {
    center: Option<Array1<f64>>,
}

impl StatsEmbedder {
    pub fn new() -> Self {
        StatsEmbedder { center: None }
    }

    /// Centers on the mean raw statistics vector of `mels`.
    pub fn centered(mels: &[&FrameMatrix]) -> Result<Self> {
        if mels.is_empty() {
            return Err(Error::EmptyInput("no utterances to center statistics".into()));
        }
        let mut acc: Option<Array1<f64>> = None;
        for m in mels {
            let s = Self::raw(m)?;
            acc = Some(match acc {
                None => s,
                Some(a) => a + s,
            });
        }
        Ok(StatsEmbedder {
            center: Some(acc.unwrap() / mels.len() as f64),
        })
    }

    fn raw(mel: &FrameMatrix) -> Result<Array1<f64>> {
        mel.expect_kind(FeatureKind::Mel)?;
        let d = mel.data();
        let mean = d.mean_axis(Axis(0)).unwrap();
        let std = d.std_axis(Axis(0), 0.0);
        Ok(ndarray::concatenate![Axis(0), mean, std])
    }
}

impl Default for StatsEmbedder {
    fn default() -> Self {
        Self::new()
    }
}

impl SpeakerEmbedder for StatsEmbedder {
    fn embed(&self, mel: &FrameMatrix) -> Result<Array1<f64>> {
        let mut v = Self::raw(mel)?;
        if let Some(c) = &self.center {
            if c.len() != v.len() {
                return Err(Error::Contract(format!("centering vector has {} dims, mel stats {}", c.len(), v.len())));
            }
            v -= c;
        }
        unit(v)
    }

    fn name(&self) -> &str {
        "stats"
    }
}

/// One-hot of the loudest of the first `k` bins of the time-averaged mel.
/// Useful as an exact oracle in tests and fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotEmbedder {
    pub k: usize,
}

impl SpeakerEmbedder for OneHotEmbedder {
    fn embed(&self, mel: &FrameMatrix) -> Result<Array1<f64>> {
        mel.expect_kind(FeatureKind::Mel)?;
        if self.k == 0 || self.k > mel.dim() {
            return Err(Error::Contract(format!("one-hot width {} invalid for {} bins", self.k, mel.dim())));
        }
        let avg = mel.data().mean_axis(Axis(0)).unwrap();
        let mut best = 0;
        for j in 1..self.k {
            if avg[j] > avg[best] {
                best = j;
            }
        }
        let mut v = Array1::zeros(self.k);
        v[best] = 1.0;
        Ok(v)
    }

    fn name(&self) -> &str {
        "onehot"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 32,
            epochs: 300,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Frame-wise ReLU layer, mean pooling over time, linear speaker logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    pub frame: Linear,
    pub out: Linear,
}

impl_params!(ClassifierNet {} nested { frame, out });

/// Speaker classifier whose pooled hidden layer is the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEmbedder {
    pub net: ClassifierNet,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl ClassifierNet {
    fn pooled(&self, x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let a = relu(self.frame.forward(x.view()));
        let p = a.mean_axis(Axis(0)).unwrap();
        (a, p)
    }

    /// Cross-entropy of one utterance and its gradient.
    pub fn loss_grad(&self, x: &Array2<f64>, label: usize, grad: &mut ClassifierNet) -> f64 {
        let (a, p) = self.pooled(x);
        let p2 = p.view().insert_axis(Axis(0));
        let logits = self.out.forward(p2).row(0).to_owned();
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exp = logits.mapv(|v| (v - max).exp());
        let z = exp.sum();
        let loss = z.ln() + max - logits[label];
        let mut d_logits = exp / z;
        d_logits[label] -= 1.0;
        let d_p = self.out.backward(p2, d_logits.view().insert_axis(Axis(0)), &mut grad.out);
        let t = x.nrows() as f64;
        let d_a = d_p.row(0).broadcast(a.dim()).unwrap().mapv(|v| v / t);
        let d_pre = relu_backward(a.view(), d_a.view());
        self.frame.backward(x.view(), d_pre.view(), &mut grad.frame);
        loss
    }
}

impl ClassifierEmbedder {
    /// Full-batch Adam on cross-entropy over `(mel, speaker)` pairs.
    pub fn train(data: &[(&FrameMatrix, usize)], num_speakers: usize, cfg: &ClassifierConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("no utterances to train the speaker classifier".into()));
        }
        if cfg.hidden == 0 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
            return Err(Error::Config("classifier hidden, epochs and lr must be positive".into()));
        }
        for (m, s) in data {
            m.expect_kind(FeatureKind::Mel)?;
            if *s >= num_speakers {
                return Err(Error::Contract(format!("speaker label {s} out of range for {num_speakers}")));
            }
        }
        let views: Vec<_> = data.iter().map(|(m, _)| m.data().view()).collect();
        let all = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Contract(format!("mel widths differ: {e}")))?;
        let mean = all.mean_axis(Axis(0)).unwrap();
        let std = all.std_axis(Axis(0), 0.0).mapv(|v| v.max(1e-3));
        let inputs: Vec<Array2<f64>> = data.iter().map(|(m, _)| (m.data() - &mean) / &std).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n_mels = mean.len();
        let mut net = ClassifierNet {
            frame: Linear::new(n_mels, cfg.hidden, &mut rng),
            out: Linear::new(cfg.hidden, num_speakers, &mut rng),
        };
        let mut adam = Adam::new(num_params(&net));
        let mut flat = flatten(&net);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut grad = zeros_like(&net);
            for &i in &order {
                net.loss_grad(&inputs[i], data[i].1, &mut grad);
            }
            let mut g = flatten(&grad);
            let scale = 1.0 / data.len() as f64;
            g.iter_mut().for_each(|v| *v *= scale);
            adam.update(&mut flat, &g, cfg.lr);
            unflatten(&mut net, &flat);
        }
        Ok(ClassifierEmbedder { net, mean, std })
    }

    pub fn predict(&self, mel: &FrameMatrix) -> Result<usize> {
        let x = self.normalize(mel)?;
        let (_, p) = self.net.pooled(&x);
        let logits = self.net.out.forward(p.view().insert_axis(Axis(0)));
        let row = logits.row(0);
        Ok((0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b }))
    }

    fn normalize(&self, mel: &FrameMatrix) -> Result<Array2<f64>> {
        mel.expect_kind(FeatureKind::Mel)?;
        if mel.dim() != self.mean.len() {
            return Err(Error::Contract(format!("mel width {} but classifier expects {}", mel.dim(), self.mean.len())));
        }
        Ok((mel.data() - &self.mean) / &self.std)
    }
}

impl SpeakerEmbedder for ClassifierEmbedder {
    fn embed(&self, mel: &FrameMatrix) -> Result<Array1<f64>> {
        let x = self.normalize(mel)?;
        let (_, p) = self.net.pooled(&x);
        // a small offset keeps an all-inactive hidden layer from having zero norm
        unit(p + 1e-9)
    }

    fn name(&self) -> &str {
        "classifier"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub label: String,
    pub embedding: Array1<f64>,
}

pub const DEFAULT_ENROLL_UTTERANCES: usize = 10;

/// Mean embedding of `mels`, re-normalized.
pub fn enroll(label: &str, mels: &[&FrameMatrix], embedder: &dyn SpeakerEmbedder) -> Result<Enrollment> {
    if mels.is_empty() {
        return Err(Error::EmptyInput(format!("no enrollment utterances for '{label}'")));
    }
    let mut acc: Option<Array1<f64>> = None;
    for m in mels {
        let e = embedder.embed(m)?;
        acc = Some(match acc {
            None => e,
            Some(a) => a + e,
        });
    }
    Ok(Enrollment {
        label: label.to_string(),
        embedding: unit(acc.unwrap() / mels.len() as f64)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarReport {
    pub far: f64,
    pub threshold: f64,
    pub accepted: usize,
    pub total: usize,
}

/// Cosine scores of each embedding against the enrollment.
pub fn scores(mels: &[&FrameMatrix], target: &Enrollment, embedder: &dyn SpeakerEmbedder) -> Result<Vec<f64>> {
    mels.iter()
        .map(|m| Ok(cosine(embedder.embed(m)?.view(), target.embedding.view())))
        .collect()
}

/// Fraction of scores at or above `threshold`.
pub fn far_from_scores(scores: &[f64], threshold: f64) -> Result<FarReport> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to evaluate".into()));
    }
    if threshold.is_nan() {
        return Err(Error::Contract("threshold is NaN".into()));
    }
    let accepted = scores.iter().filter(|&&s| s >= threshold).count();
    Ok(FarReport {
        far: accepted as f64 / scores.len() as f64,
        threshold,
        accepted,
        total: scores.len(),
    })
}

/// Acceptance rate of converted utterances as the target speaker.
pub fn far(converted: &[&FrameMatrix], target: &Enrollment, embedder: &dyn SpeakerEmbedder, threshold: f64) -> Result<FarReport> {
    if converted.is_empty() {
        return Err(Error::EmptyInput("no converted utterances to score".into()));
    }
    far_from_scores(&scores(converted, target, embedder)?, threshold)
}

/// Threshold where false acceptance of impostors and false rejection of
/// genuine trials are closest; returns `(threshold, equal error rate)`.
pub fn eer_threshold(genuine: &[f64], impostor: &[f64]) -> Result<(f64, f64)> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyInput("equal error rate needs genuine and impostor scores".into()));
    }
    let mut candidates: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let rate = |t: f64| {
        let fa = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let fr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        (fa, fr)
    };
    let mut best = (f64::INFINITY, candidates[0], 1.0);
    for &t in &candidates {
        let (fa, fr) = rate(t);
        let gap = (fa - fr).abs();
        if gap < best.0 {
            best = (gap, t, 0.5 * (fa + fr));
        }
    }
    Ok((best.1, best.2))
}

/// Minimum co-voiced frames for a correlation to be reported.
pub const MIN_COVOICED: usize = 8;

/// `track` resampled to `len` frames by linear time interpolation. A frame
/// is voiced only when both neighbours it interpolates between are voiced.
pub fn stretch_f0(track: &[f64], len: usize) -> Vec<f64> {
    let n = track.len();
    if n == 0 || len == 0 {
        return vec![0.0; len];
    }
    if n == 1 || len == 1 {
        return vec![track[0]; len];
    }
    (0..len)
        .map(|i| {
            let x = i as f64 * (n - 1) as f64 / (len - 1) as f64;
            let j = (x.floor() as usize).min(n - 1);
            let frac = x - j as f64;
            if frac < 1e-12 || j + 1 >= n {
                track[j]
            } else if track[j] > 0.0 && track[j + 1] > 0.0 {
                track[j] * (1.0 - frac) + track[j + 1] * frac
            } else {
                0.0
            }
        })
        .collect()
}

/// Pearson correlation between source and converted F0 over frames voiced
/// in both, after stretching the converted track to the source length.
/// Returns 0 with fewer than [`MIN_COVOICED`] such frames or zero variance.
pub fn prosody_consistency(source: &F0Track, converted: &F0Track) -> Result<f64> {
    if source.is_empty() || converted.is_empty() {
        return Err(Error::EmptyInput("prosody consistency needs two non-empty F0 tracks".into()));
    }
    let s = source.values();
    let c = stretch_f0(converted.values(), s.len());
    let pairs: Vec<(f64, f64)> = s.iter().zip(&c).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (*a, *b)).collect();
    if pairs.len() < MIN_COVOICED {
        return Ok(0.0);
    }
    Ok(pearson(&pairs))
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(x, y), (a, b)| (x + a, y + b));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa <= 1e-12 * n || sbb <= 1e-12 * n {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// `system<TAB>metric<TAB>value` rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<(String, String, f64)>,
}

impl EvalReport {
    pub fn push(&mut self, system: &str, metric: &str, value: f64) {
        self.rows.push((system.to_string(), metric.to_string(), value));
    }

    pub fn get(&self, system: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == system && r.1 == metric).map(|r| r.2)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("system\tmetric\tvalue\n");
        for (s, m, v) in &self.rows {
            writeln!(out, "{s}\t{m}\t{v}").unwrap();
        }
        out
    }
}
