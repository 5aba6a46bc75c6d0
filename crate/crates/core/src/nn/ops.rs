use ndarray::{Array2, ArrayView2};

pub fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    let mut out = dy.to_owned();
    out.zip_mut_with(&y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    out
}

/// Max over time with kernel 2 / stride 2; an odd final frame pools alone.
/// Returns the pooled rows and the source row of each output entry.
pub fn max_pool_time(x: ArrayView2<f64>) -> (Array2<f64>, Vec<usize>) {
    let (t, d) = x.dim();
    let out_t = t.div_ceil(2);
    let mut y = Array2::zeros((out_t, d));
    let mut arg = vec![0usize; out_t * d];
    for o in 0..out_t {
        let a = 2 * o;
        let b = (2 * o + 1).min(t - 1);
        for j in 0..d {
            // ties pick the earlier frame
            let src = if x[[b, j]] > x[[a, j]] { b } else { a };
            y[[o, j]] = x[[src, j]];
            arg[o * d + j] = src;
        }
    }
    (y, arg)
}

pub fn max_pool_time_backward(arg: &[usize], dy: ArrayView2<f64>, input_len: usize) -> Array2<f64> {
    let d = dy.ncols();
    let mut dx = Array2::zeros((input_len, d));
    for o in 0..dy.nrows() {
        for j in 0..d {
            dx[[arg[o * d + j], j]] += dy[[o, j]];
        }
    }
    dx
}

/// Nearest-neighbour ×2 upsampling over time, truncated to `len` rows
/// (rows past the source are edge-replicated).
pub fn upsample_time(x: ArrayView2<f64>, len: usize) -> Array2<f64> {
    let last = x.nrows() - 1;
    let mut y = Array2::zeros((len, x.ncols()));
    for t in 0..len {
        y.row_mut(t).assign(&x.row((t / 2).min(last)));
    }
    y
}

pub fn upsample_time_backward(dy: ArrayView2<f64>, source_len: usize) -> Array2<f64> {
    let last = source_len - 1;
    let mut dx = Array2::zeros((source_len, dy.ncols()));
    for t in 0..dy.nrows() {
        dx.row_mut((t / 2).min(last)).scaled_add(1.0, &dy.row(t));
    }
    dx
}
