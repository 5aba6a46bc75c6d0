//! Layers with hand-written backward passes.
//!
//! Every layer owns its parameters as standard-layout `f64` arrays. Gradients
//! are accumulated into a zeroed clone of the same layer type, so the
//! parameter tree and the gradient tree always share names and shapes.

mod adam;
mod conv;
mod embedding;
mod gru;
mod linear;
mod ops;

pub use adam::Adam;
pub use conv::Conv;
pub use embedding::Embedding;
pub use gru::{BiGru, BiGruCache, Gru, GruCache};
pub use linear::Linear;
pub use ops::{max_pool_time, max_pool_time_backward, relu, relu_backward, upsample_time, upsample_time_backward};

use ndarray::{Array, Array1, Array2, Dimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Named parameter tensors, visited in a fixed order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<D: Dimension>(
    prefix: &str,
    name: &str,
    a: &Array<f64, D>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    f(&join(prefix, name), a.shape(), a.as_slice().expect("standard layout"));
}

pub(crate) fn visit_array_mut<D: Dimension>(
    prefix: &str,
    name: &str,
    a: &mut Array<f64, D>,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = a.shape().to_vec();
    f(&join(prefix, name), &shape, a.as_slice_mut().expect("standard layout"));
}

/// Implements [`Params`] by listing array fields and nested [`Params`] fields.
macro_rules! impl_params {
    ($ty:ty { $($arr:ident),* $(,)? } $(nested { $($sub:ident),* $(,)? })?) => {
        impl $crate::nn::Params for $ty {
            fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
                $($crate::nn::visit_array(prefix, stringify!($arr), &self.$arr, f);)*
                $($($crate::nn::Params::visit(&self.$sub, &$crate::nn::join(prefix, stringify!($sub)), f);)*)?
            }
            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
                $($crate::nn::visit_array_mut(prefix, stringify!($arr), &mut self.$arr, f);)*
                $($($crate::nn::Params::visit_mut(&mut self.$sub, &$crate::nn::join(prefix, stringify!($sub)), f);)*)?
            }
        }
    };
}
pub(crate) use impl_params;

impl<T: Params> Params for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

pub fn num_params(p: &dyn Params) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, _, v| n += v.len());
    n
}

pub fn flatten(p: &dyn Params) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, _, v| out.extend_from_slice(v));
    out
}

pub fn unflatten(p: &mut dyn Params, values: &[f64]) {
    let mut pos = 0;
    p.visit_mut("", &mut |_, _, v| {
        v.copy_from_slice(&values[pos..pos + v.len()]);
        pos += v.len();
    });
    assert_eq!(pos, values.len(), "flat parameter length mismatch");
}

/// Zeroed copy with identical structure, used as a gradient accumulator.
pub fn zeros_like<P: Params + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.visit_mut("", &mut |_, _, v| v.iter_mut().for_each(|x| *x = 0.0));
    z
}

/// `(name, shape)` of every tensor in visiting order.
pub fn tensor_specs(p: &dyn Params) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    p.visit("", &mut |n, s, _| out.push((n.to_string(), s.to_vec())));
    out
}

pub(crate) fn uniform2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

pub(crate) fn uniform1(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.gen_range(-bound..=bound))
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
