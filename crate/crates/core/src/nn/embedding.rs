use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;

use super::{impl_params, uniform2};
use crate::error::{Error, Result};

/// Row lookup table, `V x E`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Array2<f64>,
}

impl_params!(Embedding { table });

impl Embedding {
    pub fn new(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Embedding {
            table: uniform2(rng, rows, dim, 1.0),
        }
    }

    pub fn rows(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn forward(&self, indices: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((indices.len(), self.dim()));
        for (t, &i) in indices.iter().enumerate() {
            if i >= self.rows() {
                return Err(Error::Contract(format!("index {i} out of range for table of {} rows", self.rows())));
            }
            out.row_mut(t).assign(&self.table.row(i));
        }
        Ok(out)
    }

    pub fn backward(&self, indices: &[usize], dy: ArrayView2<f64>, grad: &mut Embedding) {
        for (t, &i) in indices.iter().enumerate() {
            grad.table.row_mut(i).scaled_add(1.0, &dy.row(t));
        }
    }
}
