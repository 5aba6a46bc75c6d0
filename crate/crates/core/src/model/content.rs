use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{impl_params, relu, relu_backward, BiGru, BiGruCache, Conv};

pub const CONTENT_CONV_LAYERS: usize = 3;

/// Three same-padded 1-D convolutions with ReLU, then a bidirectional GRU.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentEncoder {
    pub convs: Vec<Conv>,
    pub rnn: BiGru,
}

impl_params!(ContentEncoder {} nested { convs, rnn });

#[derive(Debug, Clone)]
pub struct ContentCache {
    cols: Vec<Array2<f64>>,
    outs: Vec<Array2<f64>>,
    rnn: BiGruCache,
}

impl ContentEncoder {
    pub fn new(input: usize, channels: usize, kernel: usize, rnn_hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::with_capacity(CONTENT_CONV_LAYERS);
        let mut in_ch = input;
        for _ in 0..CONTENT_CONV_LAYERS {
            convs.push(Conv::new(in_ch, channels, (kernel, 1), rng));
            in_ch = channels;
        }
        ContentEncoder {
            convs,
            rnn: BiGru::new(channels, rnn_hidden, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn output_dim(&self) -> usize {
        self.rnn.output_dim()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ContentCache)> {
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("content sequence with zero frames".into()));
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::Contract(format!(
                "content width {} does not match encoder input {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let t_len = x.nrows();
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut outs = Vec::with_capacity(self.convs.len());
        let mut h = x.to_owned();
        for conv in &self.convs {
            let (y, c) = conv.forward(h.view(), t_len, 1);
            h = relu(y);
            cols.push(c);
            outs.push(h.clone());
        }
        let (out, rnn) = self.rnn.forward(h.view());
        Ok((out, ContentCache { cols, outs, rnn }))
    }

    pub fn backward(&self, cache: &ContentCache, d_out: ArrayView2<f64>, grad: &mut ContentEncoder) -> Array2<f64> {
        let t_len = d_out.nrows();
        let last = cache.outs.last().unwrap();
        let mut d = self.rnn.backward(last.view(), &cache.rnn, d_out, &mut grad.rnn);
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let d_pre = relu_backward(cache.outs[i].view(), d.view());
            d = conv.backward(&cache.cols[i], d_pre.view(), t_len, 1, &mut grad.convs[i]);
        }
        d
    }
}
