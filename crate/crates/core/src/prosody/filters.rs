use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PROSODY_DIM;
use crate::alignment::FramePhoneMap;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FrameMatrix};
use crate::nn::{impl_params, Gru, GruCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    None,
    Rdpf,
    Adpf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RdpfMode {
    /// Local index `tau - 1` of every full block, last frame of a short one.
    Deterministic,
    /// Uniform within each block from a seeded generator.
    Random,
}

/// Prosody after downsample-upsample, with the frames it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredProsody {
    matrix: FrameMatrix,
    provenance: Provenance,
    selected_frames: Vec<usize>,
}

impl FilteredProsody {
    /// Wraps unfiltered prosody; every frame counts as selected.
    pub fn passthrough(p: &FrameMatrix) -> Result<Self> {
        Ok(FilteredProsody {
            matrix: FrameMatrix::new(p.data().clone(), p.hop_seconds(), FeatureKind::FilteredProsody)?,
            provenance: Provenance::None,
            selected_frames: (0..p.num_frames()).collect(),
        })
    }

    pub fn matrix(&self) -> &FrameMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> FrameMatrix {
        self.matrix
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn selected_frames(&self) -> &[usize] {
        &self.selected_frames
    }
}

/// `[start, end)` blocks of `tau` frames; the final block may be short.
pub fn rdpf_blocks(num_frames: usize, tau: usize) -> Result<Vec<(usize, usize)>> {
    if tau < 1 {
        return Err(Error::Contract("rdpf tau must be at least 1".into()));
    }
    Ok((0..num_frames)
        .step_by(tau)
        .map(|s| (s, (s + tau).min(num_frames)))
        .collect())
}

/// Phone segments as blocks, for the per-phone grouping variant.
pub fn rdpf_phone_blocks(map: &FramePhoneMap) -> Vec<(usize, usize)> {
    map.runs()
}

/// One frame per block. Deterministic picks `start + tau - 1`, clamped to
/// the block's last frame.
pub fn select_in_blocks(blocks: &[(usize, usize)], tau: usize, mode: RdpfMode, seed: u64) -> Vec<usize> {
    match mode {
        RdpfMode::Deterministic => blocks
            .iter()
            .map(|&(s, e)| s.saturating_add(tau.max(1) - 1).min(e - 1))
            .collect(),
        RdpfMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            blocks.iter().map(|&(s, e)| rng.gen_range(s..e)).collect()
        }
    }
}

/// Row `t` of the output is `x[selected[b]]` where block `b` contains `t`.
pub fn repeat_rows(x: ArrayView2<f64>, blocks: &[(usize, usize)], selected: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((blocks.last().map_or(0, |b| b.1), x.ncols()));
    for (&(s, e), &src) in blocks.iter().zip(selected) {
        let row = x.row(src);
        for t in s..e {
            out.row_mut(t).assign(&row);
        }
    }
    out
}

pub fn repeat_rows_backward(
    dy: ArrayView2<f64>,
    blocks: &[(usize, usize)],
    selected: &[usize],
    num_frames: usize,
) -> Array2<f64> {
    let mut dx = Array2::zeros((num_frames, dy.ncols()));
    for (&(s, e), &src) in blocks.iter().zip(selected) {
        for t in s..e {
            dx.row_mut(src).scaled_add(1.0, &dy.row(t));
        }
    }
    dx
}

/// Fixed-rate block selection and repetition.
pub fn rdpf(p: &FrameMatrix, tau: usize, mode: RdpfMode, seed: u64) -> Result<FilteredProsody> {
    let blocks = rdpf_blocks(p.num_frames(), tau)?;
    let selected = select_in_blocks(&blocks, tau, mode, seed);
    finish(p, &blocks, selected, Provenance::Rdpf)
}

/// Block selection over phone segments instead of fixed-rate blocks.
/// Deterministic mode picks each segment's final frame.
pub fn rdpf_phones(p: &FrameMatrix, map: &FramePhoneMap, mode: RdpfMode, seed: u64) -> Result<FilteredProsody> {
    check_map(p.num_frames(), map)?;
    let blocks = rdpf_phone_blocks(map);
    let selected = select_in_blocks(&blocks, usize::MAX, mode, seed);
    finish(p, &blocks, selected, Provenance::Rdpf)
}

fn finish(p: &FrameMatrix, blocks: &[(usize, usize)], selected: Vec<usize>, provenance: Provenance) -> Result<FilteredProsody> {
    let out = repeat_rows(p.data().view(), blocks, &selected);
    Ok(FilteredProsody {
        matrix: FrameMatrix::new(out, p.hop_seconds(), FeatureKind::FilteredProsody)?,
        provenance,
        selected_frames: selected,
    })
}

fn check_map(num_frames: usize, map: &FramePhoneMap) -> Result<()> {
    if map.len() != num_frames {
        return Err(Error::Contract(format!(
            "alignment covers {} frames but prosody has {num_frames}",
            map.len()
        )));
    }
    Ok(())
}

/// Causal recurrence run over every frame; the state at each phone's final
/// frame is repeated across the phone.
#[derive(Debug, Clone, PartialEq)]
pub struct AdpfParams {
    pub gru: Gru,
}

impl_params!(AdpfParams {} nested { gru });

#[derive(Debug, Clone)]
pub struct AdpfCache {
    input: Array2<f64>,
    gru: GruCache,
    blocks: Vec<(usize, usize)>,
    selected: Vec<usize>,
}

impl AdpfCache {
    pub fn selected_frames(&self) -> &[usize] {
        &self.selected
    }
}

impl AdpfParams {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        AdpfParams {
            gru: Gru::new(input, hidden, rng),
        }
    }

    /// [`PROSODY_DIM`] in and out.
    pub fn init(seed: u64) -> Self {
        Self::new(PROSODY_DIM, PROSODY_DIM, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden()
    }

    /// Hidden state after each frame, from a zero initial state.
    pub fn hidden_states(&self, p: ArrayView2<f64>) -> Array2<f64> {
        self.gru.forward(p, false).0
    }

    pub fn forward(&self, p: ArrayView2<f64>, map: &FramePhoneMap) -> Result<(Array2<f64>, AdpfCache)> {
        check_map(p.nrows(), map)?;
        if p.ncols() != self.gru.input_dim() {
            return Err(Error::Contract(format!(
                "adpf expects {}-dim input, got {}",
                self.gru.input_dim(),
                p.ncols()
            )));
        }
        let (h, gru) = self.gru.forward(p, false);
        let blocks = map.runs();
        let selected = map.last_frames();
        let out = repeat_rows(h.view(), &blocks, &selected);
        Ok((
            out,
            AdpfCache {
                input: p.to_owned(),
                gru,
                blocks,
                selected,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient.
    pub fn backward(&self, cache: &AdpfCache, d_out: ArrayView2<f64>, grad: &mut AdpfParams) -> Array2<f64> {
        let d_h = repeat_rows_backward(d_out, &cache.blocks, &cache.selected, cache.input.nrows());
        self.gru.backward(cache.input.view(), &cache.gru, d_h.view(), &mut grad.gru)
    }
}

pub fn adpf(p: &FrameMatrix, map: &FramePhoneMap, params: &AdpfParams) -> Result<FilteredProsody> {
    let (out, cache) = params.forward(p.data().view(), map)?;
    Ok(FilteredProsody {
        matrix: FrameMatrix::new(out, p.hop_seconds(), FeatureKind::FilteredProsody)?,
        provenance: Provenance::Adpf,
        selected_frames: cache.selected,
    })
}

/// Parameter and input gradients of `sum(adpf(p) ⊙ upstream)`.
pub fn adpf_grad(
    p: ArrayView2<f64>,
    map: &FramePhoneMap,
    params: &AdpfParams,
    upstream: ArrayView2<f64>,
) -> Result<(AdpfParams, Array2<f64>)> {
    let (out, cache) = params.forward(p, map)?;
    if upstream.dim() != out.dim() {
        return Err(Error::Contract(format!(
            "upstream gradient shape {:?} does not match output {:?}",
            upstream.dim(),
            out.dim()
        )));
    }
    let mut grad = crate::nn::zeros_like(params);
    let dp = params.backward(&cache, upstream, &mut grad);
    Ok((grad, dp))
}
