use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{FeatureConfig, FeatureKind, FrameMatrix};
use crate::binio;
use crate::error::{Error, Result};

/// Fixed linear map from log-mel frames to content features.
///
/// Fitted once as a PCA on (optionally cepstrally liftered) mel frames and
/// then frozen. Liftering keeps only the first `lifter` DCT coefficients of
/// each frame, which removes pitch-harmonic ripple and leaves the spectral
/// envelope. Output columns beyond the rank of the fitted data are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentProjection {
    mean: Array1<f64>,
    basis: Array2<f64>,
    lifter: usize,
}

#[derive(Serialize, Deserialize)]
struct ProjectionFile {
    n_mels: usize,
    dim: usize,
    lifter: usize,
    mean: Vec<f64>,
    basis: Vec<f64>,
}

/// Orthonormal DCT-II rows, `k x n`.
fn dct_rows(k: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((k, n), |(i, j)| {
        let scale = if i == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        scale * (PI * i as f64 * (j as f64 + 0.5) / n as f64).cos()
    })
}

impl ContentProjection {
    pub fn fit(mels: &[FrameMatrix], cfg: &FeatureConfig) -> Result<Self> {
        Self::fit_with(mels, cfg.content_dim, cfg.content_lifter)
    }

    pub fn fit_with(mels: &[FrameMatrix], dim: usize, lifter: usize) -> Result<Self> {
        if mels.is_empty() {
            return Err(Error::EmptyInput("no mel matrices to fit content projection".into()));
        }
        for m in mels {
            m.expect_kind(FeatureKind::Mel)?;
        }
        if dim == 0 {
            return Err(Error::Contract("content dimension must be positive".into()));
        }
        let stacked = FrameMatrix::concat(mels)?.into_data();
        let n_mels = stacked.ncols();
        let mean = stacked.mean_axis(Axis(0)).unwrap();
        let mut centered = &stacked - &mean;
        if lifter > 0 {
            let c = dct_rows(lifter.min(n_mels), n_mels);
            centered = centered.dot(&c.t()).dot(&c);
        }
        let cov = centered.t().dot(&centered) / stacked.nrows() as f64;
        let eig = SymmetricEigen::new(DMatrix::from_fn(n_mels, n_mels, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..n_mels).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut basis = Array2::zeros((n_mels, dim));
        for (col, &idx) in order.iter().take(dim).enumerate() {
            if eig.eigenvalues[idx] <= top * 1e-10 || top == 0.0 {
                break;
            }
            let v = eig.eigenvectors.column(idx);
            // sign convention: largest-magnitude entry positive
            let pivot = (0..n_mels)
                .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
                .unwrap();
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for r in 0..n_mels {
                basis[[r, col]] = sign * v[r];
            }
        }
        Ok(ContentProjection {
            mean,
            basis,
            lifter,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.mean.len()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn lifter(&self) -> usize {
        self.lifter
    }


    /// Project a mel matrix to content features; frame count is preserved.
    pub fn transform(&self, mel: &FrameMatrix) -> Result<FrameMatrix> {
        mel.expect_kind(FeatureKind::Mel)?;
        if mel.dim() != self.n_mels() {
            return Err(Error::Contract(format!(
                "mel width {} does not match projection width {}",
                mel.dim(),
                self.n_mels()
            )));
        }
        let out = (mel.data() - &self.mean).dot(&self.basis);
        FrameMatrix::new(out, mel.hop_seconds(), FeatureKind::Content)
    }

    /// Mean squared error of reconstructing `mel` from its first `rank` components.
    pub fn reconstruction_error(&self, mel: &FrameMatrix, rank: usize) -> f64 {
        let b = self.basis.slice(ndarray::s![.., ..rank.min(self.dim())]);
        let centered = mel.data() - &self.mean;
        let recon = centered.dot(&b).dot(&b.t());
        (&centered - &recon).mapv(|v| v * v).mean().unwrap_or(0.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ProjectionFile {
            n_mels: self.n_mels(),
            dim: self.dim(),
            lifter: self.lifter,
            mean: self.mean.to_vec(),
            basis: self.basis.iter().copied().collect(),
        };
        let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
        binio::write_file(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = binio::read_file(path)?;
        let file: ProjectionFile =
            serde_json::from_slice(&raw).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if file.mean.len() != file.n_mels || file.basis.len() != file.n_mels * file.dim {
            return Err(Error::Format("content projection shape mismatch".into()));
        }
        Ok(ContentProjection {
            mean: Array1::from(file.mean),
            basis: Array2::from_shape_vec((file.n_mels, file.dim), file.basis)
                .map_err(|e| Error::Format(e.to_string()))?,
            lifter: file.lifter,
        })
    }
}
