//! Classical iterative JIVE, used as the linear reference decomposition.
//!
//! Alternates two steps until the captured energy stops changing:
//! the joint structure is the rank-`r_J` SVD of the stacked `X_k - S_k`,
//! and each individual structure is the rank-`r_{S_k}` SVD of `X_k - J_k`
//! projected onto the orthogonal complement of the joint row space.
//! Blocks are used as given; center them first if centered structure is wanted.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::truncated_svd;

#[derive(Clone, Debug)]
pub struct JiveConfig {
    pub joint_rank: usize,
    pub individual_ranks: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
    /// Scale each block to unit Frobenius norm before fitting.
    pub normalize_blocks: bool,
}

impl JiveConfig {
    pub fn new(joint_rank: usize, individual_ranks: Vec<usize>) -> Self {
        Self {
            joint_rank,
            individual_ranks,
            tol: 1e-8,
            max_iter: 500,
            normalize_blocks: false,
        }
    }
}

/// One block's share of a decomposition.
#[derive(Clone, Debug)]
pub struct BlockFit {
    pub joint: DMatrix<f64>,
    pub individual: DMatrix<f64>,
    pub residual: DMatrix<f64>,
    /// `p_k x r_J`; `joint = joint_loadings · joint_scores`.
    pub joint_loadings: DMatrix<f64>,
    /// `p_k x r_{S_k}`.
    pub individual_loadings: DMatrix<f64>,
    /// `r_{S_k} x n`.
    pub individual_scores: DMatrix<f64>,
    /// Factor applied to the input block before fitting (1 unless normalized).
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub blocks: Vec<BlockFit>,
    /// `r_J x n`, shared by every block.
    pub joint_scores: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Total squared residual after each iteration.
    pub residual_history: Vec<f64>,
}

pub fn jive_fit(blocks: &[DMatrix<f64>], cfg: &JiveConfig) -> Result<Decomposition> {
    let Some(first) = blocks.first() else {
        return Err(Error::Config("no blocks".into()));
    };
    let n = first.ncols();
    if blocks.iter().any(|b| b.ncols() != n) {
        return Err(Error::Shape("blocks must share the sample count".into()));
    }
    if cfg.individual_ranks.len() != blocks.len() {
        return Err(Error::Config(format!(
            "{} individual ranks for {} blocks",
            cfg.individual_ranks.len(),
            blocks.len()
        )));
    }
    if cfg.joint_rank == 0 {
        return Err(Error::RankConstraint("joint rank must be at least 1".into()));
    }
    for (k, (b, &rs)) in blocks.iter().zip(&cfg.individual_ranks).enumerate() {
        let bound = b.nrows().min(n);
        if cfg.joint_rank + rs > bound {
            return Err(Error::RankConstraint(format!(
                "block {k}: r_J + r_S = {} exceeds min(p, n) = {bound}",
                cfg.joint_rank + rs
            )));
        }
    }
    if blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite);
    }

    let scales: Vec<f64> = blocks
        .iter()
        .map(|b| {
            let norm = b.norm();
            if cfg.normalize_blocks && norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        })
        .collect();
    let data: Vec<DMatrix<f64>> = blocks.iter().zip(&scales).map(|(b, s)| b * *s).collect();
    let offsets: Vec<usize> = data
        .iter()
        .scan(0, |acc, b| {
            let o = *acc;
            *acc += b.nrows();
            Some(o)
        })
        .collect();
    let total_rows: usize = data.iter().map(|b| b.nrows()).sum();

    let mut individual: Vec<DMatrix<f64>> = data.iter().map(|b| DMatrix::zeros(b.nrows(), n)).collect();
    let mut ind_fits = vec![None; data.len()];
    let mut history = Vec::new();
    let mut prev_energy = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;
    let mut joint_svd;
    loop {
        iterations += 1;
        let mut stacked = DMatrix::zeros(total_rows, n);
        for (k, b) in data.iter().enumerate() {
            stacked
                .rows_mut(offsets[k], b.nrows())
                .copy_from(&(b - &individual[k]));
        }
        joint_svd = truncated_svd(&stacked, cfg.joint_rank)?;
        let joint_all = joint_svd.reconstruct();
        let v = joint_svd.v_t.transpose();

        let mut energy = joint_all.norm_squared();
        let mut resid_total = 0.0;
        for (k, b) in data.iter().enumerate() {
            let joint_k = joint_all.rows(offsets[k], b.nrows()).into_owned();
            let r = b - &joint_k;
            // remove the joint row space: r (I - V Vᵀ)
            let projected = &r - (&r * &v) * v.transpose();
            let fit = truncated_svd(&projected, cfg.individual_ranks[k])?;
            individual[k] = fit.reconstruct();
            energy += individual[k].norm_squared();
            resid_total += (b - &joint_k - &individual[k]).norm_squared();
            ind_fits[k] = Some(fit);
        }
        history.push(resid_total);

        let change = ((energy - prev_energy) / energy.max(f64::MIN_POSITIVE)).abs();
        prev_energy = energy;
        if change < cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
    }

    let joint_all = joint_svd.reconstruct();
    let joint_scores = joint_svd.scaled_v_t();
    let fits = data
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let joint = joint_all.rows(offsets[k], b.nrows()).into_owned();
            let ind = ind_fits[k].take().expect("fitted every block");
            let individual = ind.reconstruct();
            BlockFit {
                residual: b - &joint - &individual,
                joint_loadings: joint_svd.u.rows(offsets[k], b.nrows()).into_owned(),
                individual_scores: ind.scaled_v_t(),
                individual_loadings: ind.u,
                joint,
                individual,
                scale: scales[k],
            }
        })
        .collect();
    Ok(Decomposition {
        blocks: fits,
        joint_scores,
        iterations,
        converged,
        residual_history: history,
    })
}
