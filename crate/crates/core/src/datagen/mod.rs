//! Synthetic and MNIST-derived multimodal datasets.
//!
//! Every block is stored as a `p x n` matrix (one column per sample) together
//! with the per-sample shape used when feeding it to a network.

mod io;
mod mnist;
mod synthetic;

use deepjive_tensor::Tensor;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use io::{read_dataset, read_truth, write_dataset, write_truth, DATASET_MAGIC, TRUTH_MAGIC};
pub use mnist::{find_mnist_files, load_mnist, load_mnist_dir, parse_idx, Mnist};
pub use synthetic::{builtin_patterns, gen_1d, gen_offset_1d, gen_overlaid, gen_paired, IMAGE_SIDE};

/// One data block `X_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Modality {
    /// `p x n`.
    pub data: DMatrix<f64>,
    /// Per-sample shape; its product is `p`.
    pub sample_shape: Vec<usize>,
}

impl Modality {
    pub fn new(data: DMatrix<f64>, sample_shape: Vec<usize>) -> Result<Self> {
        if sample_shape.iter().product::<usize>() != data.nrows() {
            return Err(Error::Shape(format!(
                "sample shape {sample_shape:?} does not hold {} variables",
                data.nrows()
            )));
        }
        Ok(Self { data, sample_shape })
    }

    pub fn flat(data: DMatrix<f64>) -> Self {
        let p = data.nrows();
        Self {
            data,
            sample_shape: vec![p],
        }
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    /// Samples `idx` as a `[batch, sample_shape...]` tensor.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor> {
        let p = self.p();
        let mut out = Vec::with_capacity(idx.len() * p);
        for &i in idx {
            if i >= self.n() {
                return Err(Error::Shape(format!("sample {i} out of {}", self.n())));
            }
            out.extend_from_slice(self.data.column(i).as_slice());
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.sample_shape);
        Ok(Tensor::new(shape, out)?)
    }

    /// Columns `idx` as a `p x |idx|` matrix.
    pub fn columns(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.p(), idx.len(), |r, c| self.data[(r, idx[c])])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    pub blocks: Vec<Modality>,
    pub labels: Option<Vec<u32>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl MultimodalDataset {
    pub fn new(blocks: Vec<Modality>, labels: Option<Vec<u32>>, train: Vec<usize>, test: Vec<usize>, seed: u64) -> Result<Self> {
        let ds = Self {
            blocks,
            labels,
            train,
            test,
            seed,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.blocks.first().map_or(0, Modality::n)
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.blocks.is_empty() {
            return Err(Error::Data("dataset has no blocks".into()));
        }
        if self.blocks.iter().any(|b| b.n() != n) {
            return Err(Error::Shape("blocks must share the sample count".into()));
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} samples", l.len())));
            }
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("split index {i} repeated or out of range")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data("train and test do not cover every sample".into()));
        }
        Ok(())
    }

    /// Re-partitions the samples into `n_train` training and the rest test,
    /// drawing the permutation from `seed`.
    pub fn resplit(&mut self, n_train: usize, seed: u64) -> Result<()> {
        let (train, test) = split_indices(self.n(), n_train, seed)?;
        self.train = train;
        self.test = test;
        Ok(())
    }

    /// Keeps only the first `n` samples (in storage order) and re-splits them.
    pub fn truncate(&mut self, n: usize, n_train: usize, seed: u64) -> Result<()> {
        if n > self.n() {
            return Err(Error::Data(format!("cannot keep {n} of {} samples", self.n())));
        }
        for b in &mut self.blocks {
            b.data = b.data.columns(0, n).into_owned();
        }
        if let Some(l) = &mut self.labels {
            l.truncate(n);
        }
        self.resplit(n_train, seed)
    }

    pub fn train_labels(&self) -> Option<Vec<u32>> {
        self.labels.as_ref().map(|l| self.train.iter().map(|&i| l[i]).collect())
    }

    pub fn test_labels(&self) -> Option<Vec<u32>> {
        self.labels.as_ref().map(|l| self.test.iter().map(|&i| l[i]).collect())
    }
}

/// Generator draws and the noise-free structures they produce.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticGroundTruth {
    /// `n x a` joint scores.
    pub alpha: DMatrix<f64>,
    /// Per block, `n x b` individual scores.
    pub beta: Vec<DMatrix<f64>>,
    /// Per block, `p x n`.
    pub noise: Vec<DMatrix<f64>>,
    pub joint: Vec<DMatrix<f64>>,
    pub individual: Vec<DMatrix<f64>>,
    /// Digit loadings `m_j`, one column per digit (empty for 1D data).
    pub templates: DMatrix<f64>,
    /// Pattern images, one column per `b_{k1}, b_{k2}, ...` (empty for 1D data).
    pub patterns: DMatrix<f64>,
}

/// Seeded permutation of `0..n` split into the first `n_train` and the rest.
pub fn split_indices(n: usize, n_train: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train > n {
        return Err(Error::Data(format!("{n_train} training samples requested from {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}
