use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PROSODY_DIM;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FrameMatrix};
use crate::nn::{
    impl_params, max_pool_time, max_pool_time_backward, relu, relu_backward, upsample_time, upsample_time_backward,
    BiGru, BiGruCache, Conv, Embedding, Linear,
};
use crate::quantizer::IndexSequence;

pub const NUM_CONV_LAYERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProsodyEncoderConfig {
    pub codebook_size: usize,
    /// Width of each of the two embedding tables.
    pub embed_dim: usize,
    /// Output channels of the six convolutions (input has one channel).
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub rnn_hidden: usize,
}

impl Default for ProsodyEncoderConfig {
    fn default() -> Self {
        ProsodyEncoderConfig {
            codebook_size: crate::quantizer::DEFAULT_CODEBOOK_SIZE,
            embed_dim: 128,
            conv_channels: vec![32, 32, 64, 64, 64, 64],
            kernel: 3,
            rnn_hidden: 32,
        }
    }
}

impl ProsodyEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 {
            return Err(Error::Config("prosody codebook_size must be at least 2".into()));
        }
        if self.conv_channels.len() != NUM_CONV_LAYERS {
            return Err(Error::Config(format!(
                "prosody encoder needs exactly {NUM_CONV_LAYERS} conv layers, got {}",
                self.conv_channels.len()
            )));
        }
        if self.kernel % 2 == 0 || self.embed_dim == 0 || self.rnn_hidden == 0 || self.conv_channels.contains(&0) {
            return Err(Error::Config("prosody encoder sizes must be positive with an odd kernel".into()));
        }
        Ok(())
    }
}

/// Dual embedding tables, time max-pool, six 2-D convolutions over
/// (time, embedding) maps, a bidirectional GRU and a projection to
/// [`PROSODY_DIM`], upsampled back to the input frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyEncoder {
    pub table_a: Embedding,
    pub table_b: Embedding,
    pub convs: Vec<Conv>,
    pub birnn: BiGru,
    pub out_proj: Linear,
}

impl_params!(ProsodyEncoder {} nested { table_a, table_b, convs, birnn, out_proj });

#[derive(Debug, Clone)]
pub struct EncoderCache {
    idx_a: Vec<usize>,
    idx_b: Vec<usize>,
    frames: usize,
    pool_arg: Vec<usize>,
    conv_cols: Vec<Array2<f64>>,
    conv_out: Vec<Array2<f64>>,
    rnn_in: Array2<f64>,
    rnn_cache: BiGruCache,
    rnn_out: Array2<f64>,
}

impl ProsodyEncoder {
    /// Seeded uniform initialization scaled by fan-in.
    pub fn init(cfg: &ProsodyEncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(cfg, &mut rng)
    }

    pub(crate) fn init_with(cfg: &ProsodyEncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let table_a = Embedding::new(cfg.codebook_size, cfg.embed_dim, rng);
        let table_b = Embedding::new(cfg.codebook_size, cfg.embed_dim, rng);
        let mut convs = Vec::with_capacity(NUM_CONV_LAYERS);
        let mut in_ch = 1;
        for &out_ch in &cfg.conv_channels {
            convs.push(Conv::new(in_ch, out_ch, (cfg.kernel, cfg.kernel), rng));
            in_ch = out_ch;
        }
        let rnn_in = 2 * cfg.embed_dim * in_ch;
        let birnn = BiGru::new(rnn_in, cfg.rnn_hidden, rng);
        let out_proj = Linear::new(birnn.output_dim(), PROSODY_DIM, rng);
        Ok(ProsodyEncoder {
            table_a,
            table_b,
            convs,
            birnn,
            out_proj,
        })
    }

    pub fn codebook_size(&self) -> usize {
        self.table_a.rows()
    }

    fn map_width(&self) -> usize {
        self.table_a.dim() + self.table_b.dim()
    }

    /// Row `t` is `table_a[idx[t][0]] ⊕ table_b[idx[t][1]]`.
    pub fn embed(&self, idx: &IndexSequence) -> Result<Array2<f64>> {
        let a: Vec<usize> = idx.indices().iter().map(|p| p[0]).collect();
        let b: Vec<usize> = idx.indices().iter().map(|p| p[1]).collect();
        let ea = self.table_a.forward(&a)?;
        let eb = self.table_b.forward(&b)?;
        Ok(concatenate![Axis(1), ea, eb])
    }

    /// Frame-level prosody vectors from an embedded sequence.
    pub fn encode(&self, embedded: ArrayView2<f64>, hop_seconds: f64) -> Result<FrameMatrix> {
        let (out, _) = self.forward_embedded(embedded)?;
        FrameMatrix::new(out, hop_seconds, FeatureKind::Prosody)
    }

    fn forward_embedded(&self, embedded: ArrayView2<f64>) -> Result<(Array2<f64>, PartialCache)> {
        let frames = embedded.nrows();
        if frames < 2 {
            return Err(Error::EmptyInput(format!("prosody encoder needs at least 2 frames, got {frames}")));
        }
        if embedded.ncols() != self.map_width() {
            return Err(Error::Contract(format!(
                "embedded width {} does not match encoder width {}",
                embedded.ncols(),
                self.map_width()
            )));
        }
        let (pooled, pool_arg) = max_pool_time(embedded);
        let t_len = pooled.nrows();
        let f_len = pooled.ncols();
        // one input channel: the (time, width) map flattened position-major
        let mut map = pooled.into_shape_with_order((t_len * f_len, 1)).unwrap();
        let mut conv_cols = Vec::with_capacity(self.convs.len());
        let mut conv_out = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (y, cols) = conv.forward(map.view(), t_len, f_len);
            let y = relu(y);
            conv_cols.push(cols);
            conv_out.push(y.clone());
            map = y;
        }
        let channels = map.ncols();
        let rnn_in = map.into_shape_with_order((t_len, f_len * channels)).unwrap();
        let (rnn_out, rnn_cache) = self.birnn.forward(rnn_in.view());
        let proj = self.out_proj.forward(rnn_out.view());
        let out = upsample_time(proj.view(), frames);
        Ok((
            out,
            PartialCache {
                frames,
                pool_arg,
                conv_cols,
                conv_out,
                rnn_in,
                rnn_cache,
                rnn_out,
            },
        ))
    }

    /// Forward from indices, keeping everything needed for [`Self::backward`].
    pub fn forward(&self, idx: &IndexSequence) -> Result<(Array2<f64>, EncoderCache)> {
        let embedded = self.embed(idx)?;
        let (out, p) = self.forward_embedded(embedded.view())?;
        Ok((
            out,
            EncoderCache {
                idx_a: idx.indices().iter().map(|p| p[0]).collect(),
                idx_b: idx.indices().iter().map(|p| p[1]).collect(),
                frames: p.frames,
                pool_arg: p.pool_arg,
                conv_cols: p.conv_cols,
                conv_out: p.conv_out,
                rnn_in: p.rnn_in,
                rnn_cache: p.rnn_cache,
                rnn_out: p.rnn_out,
            },
        ))
    }

    pub fn backward(&self, cache: &EncoderCache, d_out: ArrayView2<f64>, grad: &mut ProsodyEncoder) {
        let t_len = cache.rnn_in.nrows();
        let f_len = self.map_width();
        let d_proj = upsample_time_backward(d_out, t_len);
        let d_rnn_out = self.out_proj.backward(cache.rnn_out.view(), d_proj.view(), &mut grad.out_proj);
        let d_rnn_in = self
            .birnn
            .backward(cache.rnn_in.view(), &cache.rnn_cache, d_rnn_out.view(), &mut grad.birnn);
        let channels = self.convs.last().unwrap().out_channels();
        let mut d_map = d_rnn_in.into_shape_with_order((t_len * f_len, channels)).unwrap();
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let d_pre = relu_backward(cache.conv_out[i].view(), d_map.view());
            d_map = conv.backward(&cache.conv_cols[i], d_pre.view(), t_len, f_len, &mut grad.convs[i]);
        }
        let d_pooled = d_map.into_shape_with_order((t_len, f_len)).unwrap();
        let d_embedded = max_pool_time_backward(&cache.pool_arg, d_pooled.view(), cache.frames);
        let half = self.table_a.dim();
        self.table_a
            .backward(&cache.idx_a, d_embedded.slice(s![.., ..half]), &mut grad.table_a);
        self.table_b
            .backward(&cache.idx_b, d_embedded.slice(s![.., half..]), &mut grad.table_b);
    }
}

struct PartialCache {
    frames: usize,
    pool_arg: Vec<usize>,
    conv_cols: Vec<Array2<f64>>,
    conv_out: Vec<Array2<f64>>,
    rnn_in: Array2<f64>,
    rnn_cache: BiGruCache,
    rnn_out: Array2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::*;
    use crate::nn::{flatten, zeros_like, Params};
    use rand::Rng;

    fn small_cfg() -> ProsodyEncoderConfig {
        ProsodyEncoderConfig {
            codebook_size: 5,
            embed_dim: 3,
            conv_channels: vec![2, 2, 3, 3, 2, 2],
            kernel: 3,
            rnn_hidden: 3,
        }
    }

    fn random_idx(rng: &mut ChaCha8Rng, t: usize, v: usize) -> IndexSequence {
        IndexSequence::new((0..t).map(|_| [rng.gen_range(0..v), rng.gen_range(0..v)]).collect(), v).unwrap()
    }

    #[test]
    fn embedding_lookup_matches_scalar_loop() {
        let enc = ProsodyEncoder::init(&small_cfg(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let idx = random_idx(&mut rng, 9, 5);
        let e = enc.embed(&idx).unwrap();
        assert_eq!(e.dim(), (9, 6));
        for (t, pair) in idx.indices().iter().enumerate() {
            for j in 0..3 {
                assert_eq!(e[[t, j]], enc.table_a.table[[pair[0], j]]);
                assert_eq!(e[[t, 3 + j]], enc.table_b.table[[pair[1], j]]);
            }
        }
    }

    #[test]
    fn zero_tables_embed_to_zero() {
        let mut enc = ProsodyEncoder::init(&small_cfg(), 1).unwrap();
        enc.table_a.table.fill(0.0);
        enc.table_b.table.fill(0.0);
        let idx = IndexSequence::new(vec![[0, 0], [4, 2]], 5).unwrap();
        assert!(enc.embed(&idx).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_index_rejected() {
        let enc = ProsodyEncoder::init(&small_cfg(), 1).unwrap();
        let idx = IndexSequence::new(vec![[0, 9], [1, 1]], 10).unwrap();
        assert!(matches!(enc.embed(&idx), Err(Error::Contract(_))));
    }

    #[test]
    fn default_shapes_and_length_contract() {
        let cfg = ProsodyEncoderConfig::default();
        let enc = ProsodyEncoder::init(&cfg, 0).unwrap();
        assert_eq!(enc.table_a.table.dim(), (320, 128));
        assert_eq!(enc.convs.len(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [2usize, 5] {
            let idx = random_idx(&mut rng, t, 320);
            let (out, _) = enc.forward(&idx).unwrap();
            assert_eq!(out.dim(), (t, PROSODY_DIM));
        }
    }

    #[test]
    fn lengths_even_and_odd() {
        let enc = ProsodyEncoder::init(&small_cfg(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in 2..30 {
            let idx = random_idx(&mut rng, t, 5);
            let e = enc.embed(&idx).unwrap();
            let p = enc.encode(e.view(), 0.01).unwrap();
            assert_eq!((p.num_frames(), p.dim()), (t, PROSODY_DIM));
            assert_eq!(p, enc.encode(e.view(), 0.01).unwrap());
        }
    }

    #[test]
    fn single_frame_is_empty_input() {
        let enc = ProsodyEncoder::init(&small_cfg(), 4).unwrap();
        let idx = IndexSequence::new(vec![[0, 0]], 5).unwrap();
        assert!(matches!(enc.forward(&idx), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn seeds() {
        let a = ProsodyEncoder::init(&small_cfg(), 7).unwrap();
        let b = ProsodyEncoder::init(&small_cfg(), 7).unwrap();
        let c = ProsodyEncoder::init(&small_cfg(), 8).unwrap();
        assert_eq!(flatten(&a), flatten(&b));
        assert_ne!(flatten(&a), flatten(&c));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let enc = ProsodyEncoder::init(&small_cfg(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let idx = random_idx(&mut rng, 8, 5);
        let probe = probe_weights(&mut rng, 8, PROSODY_DIM);
        let (_, cache) = enc.forward(&idx).unwrap();
        let mut grad = zeros_like(&enc);
        enc.backward(&cache, probe.view(), &mut grad);
        let worst = check_params(&enc, &grad, |e| (e.forward(&idx).unwrap().0 * &probe).sum(), 1e-6);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn every_tensor_gets_gradient() {
        let cfg = ProsodyEncoderConfig {
            conv_channels: vec![4; 6],
            ..small_cfg()
        };
        let enc = ProsodyEncoder::init(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let idx = random_idx(&mut rng, 12, 5);
        let probe = probe_weights(&mut rng, 12, PROSODY_DIM);
        let (_, cache) = enc.forward(&idx).unwrap();
        let mut grad = zeros_like(&enc);
        enc.backward(&cache, probe.view(), &mut grad);
        grad.visit("", &mut |name, _, g| {
            assert!(g.iter().any(|&v| v != 0.0), "{name} has an all-zero gradient");
        });
    }
}
