//! Rank selection: per-block total ranks from plain-autoencoder latents and
//! the joint rank from the concatenated score matrices against a resampled null.

use deepjive_tensor::nn::Dense;
use deepjive_tensor::{Graph, Optimizer, ParamId, ParamStore, Var};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::Modality;
use crate::error::{Error, Result};
use crate::linalg::{center_rows, svd_singular_values};
use crate::network::{var_to_matrix, Decoder, LayerSpec, NetworkSpec, TrainConfig, Trunk, Variant};

/// Single-latent-space autoencoder used to estimate a block's score space.
#[derive(Clone, Debug)]
pub struct PlainAutoencoder {
    pub store: ParamStore,
    trunk: Trunk,
    head: Dense,
    decoder: Decoder,
    sample_shape: Vec<usize>,
    pub width: usize,
}

impl PlainAutoencoder {
    pub fn new(sample_shape: &[usize], stack: &[LayerSpec], width: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::RankOutOfRange { rank: 0, max: usize::MAX });
        }
        // borrow the network spec's shape bookkeeping
        let spec = NetworkSpec {
            input_shapes: vec![sample_shape.to_vec(); 2],
            layers: vec![stack.to_vec(); 2],
            joint_width: width,
            individual_widths: vec![0, 0],
            variant: Variant::Explicit,
            shared_trunk: false,
        };
        spec.validate()?;
        let shapes = spec.trunk_shapes(sample_shape, stack)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "ae.trunk", &shapes, stack, &mut rng)?;
        let head = Dense::new(&mut store, "ae.head", trunk.out_len, width, true, &mut rng)?;
        let decoder = Decoder::new(&mut store, "ae.dec", width, &shapes, stack, &mut rng)?;
        Ok(Self {
            store,
            trunk,
            head,
            decoder,
            sample_shape: sample_shape.to_vec(),
            width,
        })
    }

    fn graph(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let h = self.trunk.forward(g, &self.store, x)?;
        let z = self.head.forward(g, &self.store, h)?;
        let xhat = self.decoder.forward(g, &self.store, z)?;
        Ok((z, xhat))
    }

    fn params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Latents (`width x |idx|`) and mean squared reconstruction error on columns `idx`.
    pub fn encode(&self, block: &Modality, idx: &[usize]) -> Result<(DMatrix<f64>, f64)> {
        let mut z_all = DMatrix::zeros(self.width, idx.len());
        let mut sse = 0.0;
        let mut at = 0;
        for chunk in idx.chunks(256) {
            let mut g = Graph::new();
            let x = g.input(block.batch(chunk)?);
            let (z, xhat) = self.graph(&mut g, x)?;
            z_all.columns_mut(at, chunk.len()).copy_from(&var_to_matrix(&g, z));
            let xhat = var_to_matrix(&g, xhat);
            sse += (xhat - block.columns(chunk)).norm_squared();
            at += chunk.len();
        }
        Ok((z_all, sse / (idx.len() * block.p()).max(1) as f64))
    }

    /// Reconstructions (`p x |idx|`) of columns `idx`.
    pub fn reconstruct(&self, block: &Modality, idx: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(block.p(), idx.len());
        let mut at = 0;
        for chunk in idx.chunks(256) {
            let mut g = Graph::new();
            let x = g.input(block.batch(chunk)?);
            let (_, xhat) = self.graph(&mut g, x)?;
            out.columns_mut(at, chunk.len()).copy_from(&var_to_matrix(&g, xhat));
            at += chunk.len();
        }
        Ok(out)
    }

    /// Trains on columns `train` with `mse(X, X̂)`; returns the per-epoch mean loss.
    pub fn fit(&mut self, block: &Modality, train: &[usize], cfg: &TrainConfig) -> Result<Vec<f64>> {
        if block.sample_shape != self.sample_shape {
            return Err(Error::Shape(format!("block samples are {:?}, autoencoder expects {:?}", block.sample_shape, self.sample_shape)));
        }
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let mut opt = Optimizer::new(cfg.optimizer.into(), cfg.lr);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order = train.to_vec();
        let ids = self.params();
        let mut history = Vec::new();
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let mut g = Graph::new();
                let x = g.input(block.batch(chunk)?);
                let (_, xhat) = self.graph(&mut g, x)?;
                let xf = g.flatten(x)?;
                let l = g.mse(xf, xhat).map_err(|e| Error::Diverged { epoch, detail: e.to_string() })?;
                total += g.scalar(l);
                batches += 1;
                self.store.zero_grad();
                g.backward(l, &mut self.store)?;
                opt.step(&mut self.store, &ids);
            }
            history.push(total / batches as f64);
        }
        Ok(history)
    }
}

/// A trained plain autoencoder with its training-set latents and test error.
#[derive(Clone, Debug)]
pub struct PlainFit {
    pub autoencoder: PlainAutoencoder,
    /// `r_max x n_train`, columns in the order of the `train` indices.
    pub train_latents: DMatrix<f64>,
    pub test_error: f64,
    pub history: Vec<f64>,
}

/// Trains a plain autoencoder with `r_max` latent units on block columns `train`
/// and evaluates reconstruction on `test`. Use the same split for every block.
pub fn fit_plain_autoencoder(
    block: &Modality,
    stack: &[LayerSpec],
    r_max: usize,
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
) -> Result<PlainFit> {
    let max = block.p().min(train.len());
    if r_max == 0 || r_max > max {
        return Err(Error::RankOutOfRange { rank: r_max, max });
    }
    let mut ae = PlainAutoencoder::new(&block.sample_shape, stack, r_max, cfg.seed)?;
    let history = ae.fit(block, train, cfg)?;
    let (train_latents, _) = ae.encode(block, train)?;
    let test_error = if test.is_empty() { f64::NAN } else { ae.encode(block, test)?.1 };
    Ok(PlainFit {
        autoencoder: ae,
        train_latents,
        test_error,
        history,
    })
}

/// When a reconstruction-error curve counts as crossed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankCriterion {
    /// `curve[r] < fraction · curve[0]`.
    Relative(f64),
    /// `curve[r] < threshold`.
    Absolute(f64),
    /// `curve[r] - curve[r+1] < fraction · curve[0]`: the next component adds little.
    Derivative(f64),
}

impl Default for RankCriterion {
    fn default() -> Self {
        RankCriterion::Relative(0.05)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TotalRank {
    pub rank: usize,
    /// `curve[r]`, `r = 0..=r_max`: mean squared error of the rank-`r` truncation.
    pub curve: Vec<f64>,
    pub criterion: RankCriterion,
    /// The curve never crossed the threshold; `rank` is `r_max`.
    pub not_crossed: bool,
}

/// PCA of a `r_max x n` latent matrix and the error-curve rank choice.
pub fn choose_total_rank(latents: &DMatrix<f64>, criterion: RankCriterion) -> Result<TotalRank> {
    let (r_max, n) = latents.shape();
    if r_max == 0 || n == 0 {
        return Err(Error::Shape("empty latent matrix".into()));
    }
    let (centered, _) = center_rows(latents);
    let s = svd_singular_values(&centered)?;
    let denom = (r_max * n) as f64;
    let curve: Vec<f64> = (0..=r_max)
        .map(|r| s.iter().skip(r).map(|v| v * v).sum::<f64>() / denom)
        .collect();
    let crossed = |r: usize| match criterion {
        RankCriterion::Relative(f) => curve[r] < f * curve[0] || curve[r] == 0.0,
        RankCriterion::Absolute(t) => curve[r] < t,
        RankCriterion::Derivative(f) => r == r_max || curve[r] - curve[r + 1] < f * curve[0],
    };
    let found = (0..=r_max).find(|&r| crossed(r));
    Ok(TotalRank {
        rank: found.unwrap_or(r_max),
        curve,
        criterion,
        not_crossed: found.is_none(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointRank {
    pub rank: usize,
    /// Singular values of the stacked, row-standardized score matrices.
    pub singular_values: Vec<f64>,
    /// Largest singular value of each null simulation, ascending.
    pub null_maxima: Vec<f64>,
    pub threshold: f64,
    pub confidence: f64,
}

pub const DEFAULT_SIMULATIONS: usize = 100;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// Rows rescaled to zero mean and unit (population) variance; constant rows become zero.
pub fn standardize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (mut c, _) = center_rows(m);
    let n = m.ncols().max(1) as f64;
    for mut row in c.row_iter_mut() {
        let sd = (row.norm_squared() / n).sqrt();
        if sd > 0.0 {
            row /= sd;
        } else {
            row.fill(0.0);
        }
    }
    c
}

fn stack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].ncols();
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, n);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

/// `r_J` = number of singular values of the stacked standardized score
/// matrices above the `confidence` quantile of the null's largest singular value.
/// Each null matrix resamples every row independently, with replacement, from
/// that row's own values.
pub fn select_joint_rank(scores: &[DMatrix<f64>], n_sims: usize, confidence: f64, seed: u64) -> Result<JointRank> {
    let Some(first) = scores.first() else {
        return Err(Error::Config("no score matrices".into()));
    };
    let n = first.ncols();
    if scores.iter().any(|s| s.ncols() != n) {
        return Err(Error::Shape("score matrices must share the sample count".into()));
    }
    if n_sims < 10 {
        return Err(Error::Config(format!("{n_sims} null simulations; at least 10 are required")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Config(format!("confidence {confidence} outside (0, 1)")));
    }
    let standardized: Vec<DMatrix<f64>> = scores.iter().map(standardize_rows).collect();
    let real = stack(&standardized);
    let singular_values = svd_singular_values(&real)?;
    let mut null_maxima = Vec::with_capacity(n_sims);
    for sim in 0..n_sims {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (sim as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let sim_m = DMatrix::from_fn(real.nrows(), n, |r, _| real[(r, rng.gen_range(0..n))]);
        let s = svd_singular_values(&standardize_rows(&sim_m))?;
        null_maxima.push(s.first().copied().unwrap_or(0.0));
    }
    null_maxima.sort_by(f64::total_cmp);
    let idx = ((confidence * n_sims as f64).ceil() as usize).clamp(1, n_sims) - 1;
    let threshold = null_maxima[idx];
    let rank = singular_values.iter().filter(|&&s| s > threshold).count();
    Ok(JointRank {
        rank,
        singular_values,
        null_maxima,
        threshold,
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_simulations_rejected() {
        let s = DMatrix::from_fn(2, 20, |i, j| ((i + 3 * j) as f64).sin());
        assert!(select_joint_rank(&[s.clone(), s], 9, 0.95, 0).is_err());
    }

    #[test]
    fn r_max_zero_rejected() {
        let b = Modality::flat(DMatrix::zeros(4, 10));
        let idx: Vec<usize> = (0..10).collect();
        let r = fit_plain_autoencoder(&b, &[], 0, &idx, &[], &TrainConfig::default());
        assert!(matches!(r, Err(Error::RankOutOfRange { .. })));
    }
}
