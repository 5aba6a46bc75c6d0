//! Two-group product quantizer standing in for pre-trained discrete speech units.
//!
//! Each frame vector is split contiguously in half and each half is assigned
//! to its nearest centroid (squared Euclidean, ties to the smallest index) in
//! its own k-means codebook.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::features::FrameMatrix;

pub const NUM_GROUPS: usize = 2;
pub const DEFAULT_CODEBOOK_SIZE: usize = 320;

const MAGIC: &[u8; 4] = b"PVCB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ProductCodebook {
    groups: [Array2<f64>; NUM_GROUPS],
    feature_dim: usize,
}

/// Per-frame index pairs, `T x 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSequence {
    indices: Vec<[usize; NUM_GROUPS]>,
    codebook_size: usize,
}

impl IndexSequence {
    pub fn new(indices: Vec<[usize; NUM_GROUPS]>, codebook_size: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("index sequence with zero frames".into()));
        }
        if let Some(bad) = indices.iter().flatten().find(|&&i| i >= codebook_size) {
            return Err(Error::Contract(format!("index {bad} out of range for codebook size {codebook_size}")));
        }
        Ok(IndexSequence {
            indices,
            codebook_size,
        })
    }

    pub fn indices(&self) -> &[[usize; NUM_GROUPS]] {
        &self.indices
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Distortion trace of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Total squared error (both groups) after each Lloyd update.
    pub distortions: Vec<f64>,
    pub iterations_run: usize,
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties resolve to the smallest index.
fn nearest(centroids: ArrayView2<f64>, x: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.rows().into_iter().enumerate() {
        let d = squared_distance(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp_init(data: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut dist: Vec<f64> = data.rows().into_iter().map(|r| squared_distance(r, data.row(first))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on an already-covered point
            if dist[chosen] == 0.0 {
                chosen = dist.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, r) in data.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(squared_distance(r, data.row(pick)));
        }
    }
    centroids
}

/// Called after every Lloyd update with `(group, iteration, centroids)`.
pub type KMeansObserver<'a> = &'a mut dyn FnMut(usize, usize, &Array2<f64>);

/// One k-means run; returns centroids and the distortion after every update.
fn kmeans(
    data: ArrayView2<f64>,
    k: usize,
    iterations: usize,
    rng: &mut ChaCha8Rng,
    mut observe: impl FnMut(usize, &Array2<f64>),
) -> (Array2<f64>, Vec<f64>) {
    let mut centroids = kmeans_pp_init(data, k, rng);
    let mut assignment: Vec<usize> = data.rows().into_iter().map(|r| nearest(centroids.view(), r).0).collect();
    let mut trace = Vec::new();
    for _ in 0..iterations {
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (row, &a) in data.rows().into_iter().zip(&assignment) {
            sums.row_mut(a).scaled_add(1.0, &row);
            counts[a] += 1;
        }
        for c in 0..k {
            // empty clusters keep their centroid
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        let mut changed = false;
        let mut distortion = 0.0;
        for (i, row) in data.rows().into_iter().enumerate() {
            let (a, d) = nearest(centroids.view(), row);
            changed |= a != assignment[i];
            assignment[i] = a;
            distortion += d;
        }
        trace.push(distortion);
        observe(trace.len() - 1, &centroids);
        if !changed {
            break;
        }
    }
    (centroids, trace)
}

impl ProductCodebook {
    pub fn from_groups(group0: Array2<f64>, group1: Array2<f64>) -> Result<Self> {
        if group0.dim() != group1.dim() {
            return Err(Error::Contract("codebook groups must have equal shapes".into()));
        }
        if group0.nrows() < 2 {
            return Err(Error::Contract("codebook size must be at least 2".into()));
        }
        if group0.iter().chain(group1.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite centroid".into()));
        }
        let feature_dim = group0.ncols() * 2;
        Ok(ProductCodebook {
            groups: [group0, group1],
            feature_dim,
        })
    }

    pub fn codebook_size(&self) -> usize {
        self.groups[0].nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn group(&self, g: usize) -> &Array2<f64> {
        &self.groups[g]
    }

    /// Train both sub-codebooks with seeded k-means++ and Lloyd iterations.
    pub fn train(features: &FrameMatrix, codebook_size: usize, iterations: usize, seed: u64) -> Result<(Self, TrainReport)> {
        Self::train_observed(features, codebook_size, iterations, seed, &mut |_, _, _| {})
    }

    pub fn train_observed(
        features: &FrameMatrix,
        codebook_size: usize,
        iterations: usize,
        seed: u64,
        observer: KMeansObserver<'_>,
    ) -> Result<(Self, TrainReport)> {
        let d = features.dim();
        if d % 2 != 0 {
            return Err(Error::Contract(format!("feature dimension {d} is not even")));
        }
        if codebook_size < 2 {
            return Err(Error::Contract("codebook size must be at least 2".into()));
        }
        if features.num_frames() < codebook_size {
            return Err(Error::InsufficientData {
                needed: codebook_size,
                got: features.num_frames(),
            });
        }
        let half = d / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = features.data();
        let mut traces = Vec::new();
        let mut groups = Vec::new();
        for g in 0..NUM_GROUPS {
            let part = data.slice(ndarray::s![.., g * half..(g + 1) * half]);
            let (mut c, trace) = kmeans(part, codebook_size, iterations, &mut rng, |it, c| observer(g, it, c));
            // snap to storage precision so saved codebooks quantize identically
            c.mapv_inplace(|v| v as f32 as f64);
            groups.push(c);
            traces.push(trace);
        }
        let steps = traces.iter().map(Vec::len).max().unwrap_or(0);
        let distortions = (0..steps)
            .map(|i| traces.iter().map(|t| t.get(i).or(t.last()).copied().unwrap_or(0.0)).sum())
            .collect();
        let g1 = groups.pop().unwrap();
        let g0 = groups.pop().unwrap();
        Ok((
            ProductCodebook::from_groups(g0, g1)?,
            TrainReport {
                distortions,
                iterations_run: steps,
            },
        ))
    }

    pub fn quantize(&self, features: &FrameMatrix) -> Result<IndexSequence> {
        self.quantize_rows(features.data().view())
    }

    pub fn quantize_rows(&self, data: ArrayView2<f64>) -> Result<IndexSequence> {
        if data.ncols() != self.feature_dim {
            return Err(Error::Contract(format!(
                "feature dimension {} does not match codebook dimension {}",
                data.ncols(),
                self.feature_dim
            )));
        }
        let half = self.feature_dim / 2;
        let indices = data
            .rows()
            .into_iter()
            .map(|row| {
                let mut pair = [0; NUM_GROUPS];
                for (g, slot) in pair.iter_mut().enumerate() {
                    *slot = nearest(self.groups[g].view(), row.slice(ndarray::s![g * half..(g + 1) * half])).0;
                }
                pair
            })
            .collect();
        IndexSequence::new(indices, self.codebook_size())
    }

    /// Concatenated centroid pairs, `T x D`.
    pub fn reconstruct(&self, idx: &IndexSequence) -> Array2<f64> {
        let half = self.feature_dim / 2;
        let mut out = Array2::zeros((idx.len(), self.feature_dim));
        for (t, pair) in idx.indices().iter().enumerate() {
            for g in 0..NUM_GROUPS {
                out.slice_mut(ndarray::s![t, g * half..(g + 1) * half])
                    .assign(&self.groups[g].row(pair[g]));
            }
        }
        out
    }

    /// Total squared quantization error over all frames.
    pub fn distortion(&self, data: ArrayView2<f64>) -> Result<f64> {
        let idx = self.quantize_rows(data)?;
        let recon = self.reconstruct(&idx);
        Ok((&data - &recon).mapv(|v| v * v).sum())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.codebook_size() as u32);
        w.u32(self.feature_dim as u32);
        for g in &self.groups {
            w.f32s(g.iter().copied());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported codebook version {version}")));
        }
        let v = r.u32()? as usize;
        let d = r.u32()? as usize;
        if d % 2 != 0 {
            return Err(Error::Format(format!("odd feature dimension {d}")));
        }
        let mut groups = Vec::new();
        for _ in 0..NUM_GROUPS {
            let values = r.f32s(v * d / 2)?;
            groups.push(Array2::from_shape_vec((v, d / 2), values).map_err(|e| Error::Format(e.to_string()))?);
        }
        r.finish()?;
        let g1 = groups.pop().unwrap();
        let g0 = groups.pop().unwrap();
        ProductCodebook::from_groups(g0, g1)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        binio::write_file(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&binio::read_file(path.as_ref())?)
    }
}

/// Row-stack of the frames of many matrices (for fitting one codebook on a corpus).
pub fn stack_rows(parts: &[FrameMatrix]) -> Result<FrameMatrix> {
    FrameMatrix::concat(parts)
}
