use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{impl_params, sigmoid, uniform1, uniform2};

/// Gated recurrent unit, gates ordered `(reset, update, candidate)`:
///
/// ```text
/// r = σ(x Wxr + bxr + h Whr + bhr)
/// z = σ(x Wxz + bxz + h Whz + bhz)
/// n = tanh(x Wxn + bxn + r ⊙ (h Whn + bhn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b_x: Array1<f64>,
    pub b_h: Array1<f64>,
}

impl_params!(Gru { w_x, w_h, b_x, b_h });

/// Per-step activations, rows indexed by input position.
#[derive(Debug, Clone)]
pub struct GruCache {
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    hn: Array2<f64>,
    h_prev: Array2<f64>,
    reverse: bool,
}

impl Gru {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Gru {
            w_x: uniform2(rng, input, 3 * hidden, bound),
            w_h: uniform2(rng, hidden, 3 * hidden, bound),
            b_x: uniform1(rng, 3 * hidden, bound),
            b_h: uniform1(rng, 3 * hidden, bound),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    /// Input projection `x Wx + bx` for every row.
    pub fn project_inputs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w_x) + &self.b_x
    }

    /// One recurrence step from a projected input row.
    pub fn step(&self, xp: &[f64], h: &[f64]) -> Vec<f64> {
        let hd = self.hidden();
        let hp = Array1::from(h.to_vec()).dot(&self.w_h) + &self.b_h;
        (0..hd)
            .map(|j| {
                let r = sigmoid(xp[j] + hp[j]);
                let z = sigmoid(xp[hd + j] + hp[hd + j]);
                let n = (xp[2 * hd + j] + r * hp[2 * hd + j]).tanh();
                (1.0 - z) * n + z * h[j]
            })
            .collect()
    }

    /// Runs over all rows from a zero state; `reverse` walks from the end.
    /// Output row `t` is the state after consuming input row `t`.
    pub fn forward(&self, x: ArrayView2<f64>, reverse: bool) -> (Array2<f64>, GruCache) {
        let t_len = x.nrows();
        let hd = self.hidden();
        let xp = self.project_inputs(x);
        let mut out = Array2::zeros((t_len, hd));
        let mut cache = GruCache {
            r: Array2::zeros((t_len, hd)),
            z: Array2::zeros((t_len, hd)),
            n: Array2::zeros((t_len, hd)),
            hn: Array2::zeros((t_len, hd)),
            h_prev: Array2::zeros((t_len, hd)),
            reverse,
        };
        let mut h = Array1::<f64>::zeros(hd);
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let hp = h.dot(&self.w_h) + &self.b_h;
            cache.h_prev.row_mut(t).assign(&h);
            for j in 0..hd {
                let r = sigmoid(xp[[t, j]] + hp[j]);
                let z = sigmoid(xp[[t, hd + j]] + hp[hd + j]);
                let hn = hp[2 * hd + j];
                let n = (xp[[t, 2 * hd + j]] + r * hn).tanh();
                cache.r[[t, j]] = r;
                cache.z[[t, j]] = z;
                cache.n[[t, j]] = n;
                cache.hn[[t, j]] = hn;
                h[j] = (1.0 - z) * n + z * h[j];
            }
            out.row_mut(t).assign(&h);
        }
        (out, cache)
    }

    /// Backpropagation through time. Accumulates into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, cache: &GruCache, d_out: ArrayView2<f64>, grad: &mut Gru) -> Array2<f64> {
        let t_len = x.nrows();
        let hd = self.hidden();
        let mut gx = Array2::zeros((t_len, 3 * hd));
        let mut gh = Array2::zeros((t_len, 3 * hd));
        let mut dh = Array1::<f64>::zeros(hd);
        let w_h_t = self.w_h.t();
        for step in 0..t_len {
            // reverse of processing order
            let t = if cache.reverse { step } else { t_len - 1 - step };
            let mut dh_prev = Array1::<f64>::zeros(hd);
            for j in 0..hd {
                let d = d_out[[t, j]] + dh[j];
                let (r, z, n, hn, hp) = (
                    cache.r[[t, j]],
                    cache.z[[t, j]],
                    cache.n[[t, j]],
                    cache.hn[[t, j]],
                    cache.h_prev[[t, j]],
                );
                let dn = d * (1.0 - z);
                let dz = d * (hp - n);
                dh_prev[j] = d * z;
                let dan = dn * (1.0 - n * n);
                let dr = dan * hn;
                let dar = dr * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                gx[[t, j]] = dar;
                gx[[t, hd + j]] = daz;
                gx[[t, 2 * hd + j]] = dan;
                gh[[t, j]] = dar;
                gh[[t, hd + j]] = daz;
                gh[[t, 2 * hd + j]] = dan * r;
            }
            dh = dh_prev + gh.row(t).dot(&w_h_t);
        }
        grad.w_x += &x.t().dot(&gx);
        grad.b_x += &gx.sum_axis(Axis(0));
        grad.w_h += &cache.h_prev.t().dot(&gh);
        grad.b_h += &gh.sum_axis(Axis(0));
        gx.dot(&self.w_x.t())
    }
}

/// Forward and backward GRUs with outputs concatenated `[fwd, bwd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

impl_params!(BiGru {} nested { fwd, bwd });

#[derive(Debug, Clone)]
pub struct BiGruCache {
    fwd: GruCache,
    bwd: GruCache,
}

impl BiGru {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        BiGru {
            fwd: Gru::new(input, hidden, rng),
            bwd: Gru::new(input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, BiGruCache) {
        let (f, fc) = self.fwd.forward(x, false);
        let (b, bc) = self.bwd.forward(x, true);
        let out = ndarray::concatenate![Axis(1), f, b];
        (out, BiGruCache { fwd: fc, bwd: bc })
    }

    pub fn backward(&self, x: ArrayView2<f64>, cache: &BiGruCache, d_out: ArrayView2<f64>, grad: &mut BiGru) -> Array2<f64> {
        let hd = self.fwd.hidden();
        let dx_f = self.fwd.backward(x, &cache.fwd, d_out.slice(s![.., ..hd]), &mut grad.fwd);
        let dx_b = self.bwd.backward(x, &cache.bwd, d_out.slice(s![.., hd..]), &mut grad.bwd);
        dx_f + dx_b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::*;
    use crate::nn::zeros_like;
    use rand::SeedableRng;

    #[test]
    fn gru_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for reverse in [false, true] {
            let gru = Gru::new(3, 4, &mut rng);
            let x = uniform2(&mut rng, 7, 3, 1.0);
            let probe = probe_weights(&mut rng, 7, 4);
            let loss = |g: &Gru, x: &Array2<f64>| (g.forward(x.view(), reverse).0 * &probe).sum();
            let (_, cache) = gru.forward(x.view(), reverse);
            let mut grad = zeros_like(&gru);
            let dx = gru.backward(x.view(), &cache, probe.view(), &mut grad);
            assert!(check_params(&gru, &grad, |g| loss(g, &x), 1e-6) < 1e-5);
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp.as_slice_mut().unwrap()[i] += 1e-6;
                let mut xm = x.clone();
                xm.as_slice_mut().unwrap()[i] -= 1e-6;
                let num = (loss(&gru, &xp) - loss(&gru, &xm)) / 2e-6;
                assert!(rel_err(num, dx.as_slice().unwrap()[i]) < 1e-5);
            }
        }
    }

    #[test]
    fn bigru_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = BiGru::new(2, 3, &mut rng);
        let x = uniform2(&mut rng, 5, 2, 1.0);
        let probe = probe_weights(&mut rng, 5, 6);
        let (_, cache) = net.forward(x.view());
        let mut grad = zeros_like(&net);
        net.backward(x.view(), &cache, probe.view(), &mut grad);
        let worst = check_params(&net, &grad, |n| (n.forward(x.view()).0 * &probe).sum(), 1e-6);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn step_matches_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gru = Gru::new(3, 5, &mut rng);
        let x = uniform2(&mut rng, 6, 3, 1.0);
        let (out, _) = gru.forward(x.view(), false);
        let xp = gru.project_inputs(x.view());
        let mut h = vec![0.0; 5];
        for t in 0..6 {
            h = gru.step(xp.row(t).as_slice().unwrap(), &h);
            for j in 0..5 {
                assert!((h[j] - out[[t, j]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_input_zero_bias_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut gru = Gru::new(4, 4, &mut rng);
        gru.b_x.fill(0.0);
        gru.b_h.fill(0.0);
        let (out, _) = gru.forward(Array2::zeros((9, 4)).view(), false);
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
