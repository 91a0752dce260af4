//! PCA, principal angles and singular values on `nalgebra` matrices.
//!
//! Data matrices are `p x n`: one row per variable, one column per sample.
//! PCA removes the per-variable mean (the mean of each row over samples).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rank-`r` principal component decomposition of a `p x n` matrix.
#[derive(Clone, Debug)]
pub struct Pca {
    /// `p x r`, orthonormal columns; the largest-magnitude entry of each column is positive.
    pub loadings: DMatrix<f64>,
    /// `r x n`.
    pub scores: DMatrix<f64>,
    /// Non-increasing, length `r`.
    pub singular_values: Vec<f64>,
    /// Per-variable means removed before decomposition (length `p`).
    pub means: DVector<f64>,
}

impl Pca {
    /// `loadings · scores + means`, the rank-`r` approximation of the input.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut x = &self.loadings * &self.scores;
        for mut col in x.column_iter_mut() {
            col += &self.means;
        }
        x
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Thin SVD truncated to the leading `r` triplets, sorted by singular value.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

impl TruncatedSvd {
    /// `u · diag(s) · v_t`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * self.scaled_v_t()
    }

    /// `diag(s) · v_t`, i.e. the score matrix.
    pub fn scaled_v_t(&self) -> DMatrix<f64> {
        let mut vt = self.v_t.clone();
        for (i, s) in self.s.iter().enumerate() {
            vt.row_mut(i).scale_mut(*s);
        }
        vt
    }
}

fn ensure_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Leading `r` singular triplets of `x` (no centering). `r` may be 0.
pub fn truncated_svd(x: &DMatrix<f64>, r: usize) -> Result<TruncatedSvd> {
    ensure_finite(x)?;
    let (p, n) = x.shape();
    if r > p.min(n) {
        return Err(Error::RankOutOfRange { rank: r, max: p.min(n) });
    }
    if r == 0 {
        return Ok(TruncatedSvd {
            u: DMatrix::zeros(p, 0),
            s: Vec::new(),
            v_t: DMatrix::zeros(0, n),
        });
    }
    let svd = x.clone().svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep = &order[..r];
    Ok(TruncatedSvd {
        u: DMatrix::from_fn(p, r, |i, j| u[(i, keep[j])]),
        s: keep.iter().map(|&k| svd.singular_values[k]).collect(),
        v_t: DMatrix::from_fn(r, n, |i, j| v_t[(keep[i], j)]),
    })
}

/// Subtracts each row's mean; returns the centered matrix and the means.
pub fn center_rows(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = x.ncols().max(1) as f64;
    let means = DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.sum() / n));
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        col -= &means;
    }
    (c, means)
}

/// Best rank-`r` approximation of the row-centered `x`.
pub fn pca(x: &DMatrix<f64>, r: usize) -> Result<Pca> {
    ensure_finite(x)?;
    let max = x.nrows().min(x.ncols());
    if r == 0 || r > max {
        return Err(Error::RankOutOfRange { rank: r, max });
    }
    let (centered, means) = center_rows(x);
    let TruncatedSvd { mut u, s, v_t } = truncated_svd(&centered, r)?;
    let mut scores = v_t;
    for (j, sv) in s.iter().enumerate() {
        scores.row_mut(j).scale_mut(*sv);
        let col = u.column(j);
        let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            u.column_mut(j).neg_mut();
            scores.row_mut(j).neg_mut();
        }
    }
    Ok(Pca {
        loadings: u,
        scores,
        singular_values: s,
        means,
    })
}

/// All singular values of `m`, non-increasing.
pub fn svd_singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    ensure_finite(m)?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let mut s: Vec<f64> = m.singular_values().iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Largest absolute deviation of `uᵀu` from the identity.
pub fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
    let gram = u.transpose() * u;
    let k = gram.nrows();
    (gram - DMatrix::<f64>::identity(k, k)).amax()
}

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Principal angles in degrees (ascending) between the column spaces of two
/// column-orthonormal matrices.
pub fn principal_angles(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Vec<f64>> {
    if u.nrows() != v.nrows() {
        return Err(Error::Shape(format!("{} vs {} rows", u.nrows(), v.nrows())));
    }
    for m in [u, v] {
        let d = orthonormality_defect(m);
        if d > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(d));
        }
    }
    let k = u.ncols().min(v.ncols());
    let s = svd_singular_values(&(u.transpose() * v))?;
    let mut angles: Vec<f64> = s
        .iter()
        .take(k)
        .map(|c| c.clamp(0.0, 1.0).acos().to_degrees())
        .collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Orthonormal basis for the column space of `x` (first `r` left singular vectors).
pub fn column_basis(x: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    Ok(truncated_svd(x, r)?.u)
}
