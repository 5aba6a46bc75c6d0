use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{impl_params, relu, relu_backward, Gru, GruCache, Linear};

/// Autoregressive mel decoder: a two-layer ReLU prenet on the previous
/// frame, a GRU over `[prenet, cond]`, and a linear head over `[h, cond]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub prenet1: Linear,
    pub prenet2: Linear,
    pub core: Gru,
    pub proj: Linear,
}

impl_params!(Decoder {} nested { prenet1, prenet2, core, proj });

/// Inverted-dropout masks for the two prenet layers: each entry is 0 or
/// `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrenetMasks {
    pub m1: Array2<f64>,
    pub m2: Array2<f64>,
}

impl PrenetMasks {
    pub fn sample(frames: usize, width: usize, rate: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let mut draw = || Array2::from_shape_fn((frames, width), |_| if rng.gen::<f64>() < rate { 0.0 } else { keep });
        let m1 = draw();
        let m2 = draw();
        PrenetMasks { m1, m2 }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    prev: Array2<f64>,
    masks: Option<PrenetMasks>,
    a1: Array2<f64>,
    a2: Array2<f64>,
    core_in: Array2<f64>,
    core: GruCache,
    proj_in: Array2<f64>,
}

impl Decoder {
    pub fn new(mel_dim: usize, cond_dim: usize, prenet: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let prenet1 = Linear::new(mel_dim, prenet, rng);
        let prenet2 = Linear::new(prenet, prenet, rng);
        let core = Gru::new(prenet + cond_dim, hidden, rng);
        let mut proj = Linear::new(hidden + cond_dim, mel_dim, rng);
        proj.b.fill(0.0);
        Decoder {
            prenet1,
            prenet2,
            core,
            proj,
        }
    }

    pub fn mel_dim(&self) -> usize {
        self.proj.output_dim()
    }

    pub fn cond_dim(&self) -> usize {
        self.proj.input_dim() - self.core.hidden()
    }

    pub fn prenet_dim(&self) -> usize {
        self.prenet2.output_dim()
    }

    /// Previous-frame input for teacher forcing: a zero go-frame, then
    /// `target[..T-1]`.
    pub fn shift_targets(target: ArrayView2<f64>) -> Array2<f64> {
        let mut prev = Array2::zeros(target.dim());
        if target.nrows() > 1 {
            prev.slice_mut(s![1.., ..]).assign(&target.slice(s![..-1, ..]));
        }
        prev
    }

    /// Teacher-forced pass; `masks` applies prenet dropout.
    pub fn forward_teacher(
        &self,
        cond: ArrayView2<f64>,
        prev: ArrayView2<f64>,
        masks: Option<&PrenetMasks>,
    ) -> (Array2<f64>, DecoderCache) {
        let mut a1 = relu(self.prenet1.forward(prev));
        if let Some(m) = masks {
            a1 *= &m.m1;
        }
        let mut a2 = relu(self.prenet2.forward(a1.view()));
        if let Some(m) = masks {
            a2 *= &m.m2;
        }
        let core_in = concatenate![Axis(1), a2, cond];
        let (h, core) = self.core.forward(core_in.view(), false);
        let proj_in = concatenate![Axis(1), h, cond];
        let out = self.proj.forward(proj_in.view());
        (
            out,
            DecoderCache {
                prev: prev.to_owned(),
                masks: masks.cloned(),
                a1,
                a2,
                core_in,
                core,
                proj_in,
            },
        )
    }

    /// Returns the gradient with respect to `cond`.
    pub fn backward(&self, cache: &DecoderCache, d_out: ArrayView2<f64>, grad: &mut Decoder) -> Array2<f64> {
        let hd = self.core.hidden();
        let pd = self.prenet_dim();
        let d_proj_in = self.proj.backward(cache.proj_in.view(), d_out, &mut grad.proj);
        let d_h = d_proj_in.slice(s![.., ..hd]);
        let mut d_cond = d_proj_in.slice(s![.., hd..]).to_owned();
        let d_core_in = self.core.backward(cache.core_in.view(), &cache.core, d_h, &mut grad.core);
        d_cond += &d_core_in.slice(s![.., pd..]);
        let mut d_a2 = d_core_in.slice(s![.., ..pd]).to_owned();
        if let Some(m) = &cache.masks {
            d_a2 *= &m.m2;
        }
        let d_a2 = relu_backward(cache.a2.view(), d_a2.view());
        let mut d_a1 = self.prenet2.backward(cache.a1.view(), d_a2.view(), &mut grad.prenet2);
        if let Some(m) = &cache.masks {
            d_a1 *= &m.m1;
        }
        let d_a1 = relu_backward(cache.a1.view(), d_a1.view());
        self.prenet1.backward(cache.prev.view(), d_a1.view(), &mut grad.prenet1);
        d_cond
    }

    /// Self-fed decoding: each output frame becomes the next prenet input.
    pub fn run_free(&self, cond: ArrayView2<f64>) -> Array2<f64> {
        let t_len = cond.nrows();
        let hd = self.core.hidden();
        let pd = self.prenet_dim();
        // conditioning contributions are frame-local, so project them once
        let xp_cond = cond.dot(&self.core.w_x.slice(s![pd.., ..])) + &self.core.b_x;
        let out_cond = cond.dot(&self.proj.w.slice(s![hd.., ..])) + &self.proj.b;
        let w_x_pre = self.core.w_x.slice(s![..pd, ..]);
        let w_out_h = self.proj.w.slice(s![..hd, ..]);
        let mut out = Array2::zeros((t_len, self.mel_dim()));
        let mut prev = Array1::zeros(self.mel_dim());
        let mut h = vec![0.0; hd];
        for t in 0..t_len {
            let a1 = (prev.dot(&self.prenet1.w) + &self.prenet1.b).mapv_into(|v: f64| v.max(0.0));
            let a2 = (a1.dot(&self.prenet2.w) + &self.prenet2.b).mapv_into(|v: f64| v.max(0.0));
            let xp = a2.dot(&w_x_pre) + xp_cond.row(t);
            h = self.core.step(xp.as_slice().unwrap(), &h);
            let y = Array1::from(h.clone()).dot(&w_out_h) + out_cond.row(t);
            out.row_mut(t).assign(&y);
            prev = y;
        }
        out
    }
}
