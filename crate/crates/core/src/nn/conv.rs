use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{impl_params, uniform1, uniform2};

/// Stride-1, same-padded convolution over a `(time, freq)` grid.
///
/// Feature maps are `(time * freq) x channels` matrices, position-major, so a
/// map with `freq == 1` is an ordinary time-major sequence and a kernel of
/// `(k, 1)` is a 1-D convolution over time. Kernel sizes must be odd.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `(kt * kf * in_channels) x out_channels`, rows ordered `(dt, df, c)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    kernel: (usize, usize),
}

impl_params!(Conv { w, b });

impl Conv {
    pub fn new(in_ch: usize, out_ch: usize, kernel: (usize, usize), rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel.0 % 2 == 1 && kernel.1 % 2 == 1, "kernel sizes must be odd");
        let fan_in = kernel.0 * kernel.1 * in_ch;
        // He-uniform: convolutions here are always followed by ReLU
        let bound = (6.0 / fan_in as f64).sqrt();
        Conv {
            w: uniform2(rng, fan_in, out_ch, bound),
            b: uniform1(rng, out_ch, 0.01),
            kernel,
        }
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.kernel
    }

    pub fn in_channels(&self) -> usize {
        self.w.nrows() / (self.kernel.0 * self.kernel.1)
    }

    pub fn out_channels(&self) -> usize {
        self.w.ncols()
    }

    fn im2col(&self, x: ArrayView2<f64>, t_len: usize, f_len: usize) -> Array2<f64> {
        let (kt, kf) = self.kernel;
        let (pt, pf) = (kt / 2, kf / 2);
        let c = x.ncols();
        let mut cols = Array2::zeros((t_len * f_len, kt * kf * c));
        for t in 0..t_len {
            for f in 0..f_len {
                let row = t * f_len + f;
                for dt in 0..kt {
                    let st = t as isize + dt as isize - pt as isize;
                    if st < 0 || st >= t_len as isize {
                        continue;
                    }
                    for df in 0..kf {
                        let sf = f as isize + df as isize - pf as isize;
                        if sf < 0 || sf >= f_len as isize {
                            continue;
                        }
                        let src = st as usize * f_len + sf as usize;
                        let off = (dt * kf + df) * c;
                        cols.slice_mut(ndarray::s![row, off..off + c]).assign(&x.row(src));
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, t_len: usize, f_len: usize, c: usize) -> Array2<f64> {
        let (kt, kf) = self.kernel;
        let (pt, pf) = (kt / 2, kf / 2);
        let mut dx = Array2::zeros((t_len * f_len, c));
        for t in 0..t_len {
            for f in 0..f_len {
                let row = t * f_len + f;
                for dt in 0..kt {
                    let st = t as isize + dt as isize - pt as isize;
                    if st < 0 || st >= t_len as isize {
                        continue;
                    }
                    for df in 0..kf {
                        let sf = f as isize + df as isize - pf as isize;
                        if sf < 0 || sf >= f_len as isize {
                            continue;
                        }
                        let src = st as usize * f_len + sf as usize;
                        let off = (dt * kf + df) * c;
                        dx.row_mut(src).scaled_add(1.0, &dcols.slice(ndarray::s![row, off..off + c]));
                    }
                }
            }
        }
        dx
    }

    /// Returns the output map and the unfolded input kept for backward.
    pub fn forward(&self, x: ArrayView2<f64>, t_len: usize, f_len: usize) -> (Array2<f64>, Array2<f64>) {
        debug_assert_eq!(x.nrows(), t_len * f_len);
        let cols = self.im2col(x, t_len, f_len);
        let y = cols.dot(&self.w) + &self.b;
        (y, cols)
    }

    pub fn backward(
        &self,
        cols: &Array2<f64>,
        dy: ArrayView2<f64>,
        t_len: usize,
        f_len: usize,
        grad: &mut Conv,
    ) -> Array2<f64> {
        grad.w += &cols.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0));
        let dcols = dy.dot(&self.w.t());
        self.col2im(&dcols, t_len, f_len, self.in_channels())
    }
}
