//! Evaluation instruments: identity error, joint/individual dependence,
//! structure recovery, a linear classifier and latent-perturbation maps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Branch, DeepJiveNetwork, LatentBundle};

fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared() / a.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityError {
    pub value: f64,
    /// A single shared joint latent: the error is zero by construction.
    pub merged: bool,
}

/// Mean over modality pairs `k < j` of `mse(Λ_{J_k}, Λ_{J_j})`.
pub fn joint_identity_error(latents: &LatentBundle) -> Result<IdentityError> {
    if latents.is_merged() {
        return Ok(IdentityError { value: 0.0, merged: true });
    }
    let j = &latents.joint;
    if j.iter().any(|m| m.shape() != j[0].shape()) {
        return Err(Error::Shape("joint latents differ in shape".into()));
    }
    let mut sum = 0.0;
    let mut pairs = 0;
    for a in 0..j.len() {
        for b in a + 1..j.len() {
            sum += mse(&j[a], &j[b]);
            pairs += 1;
        }
    }
    Ok(IdentityError {
        value: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
        merged: false,
    })
}

/// Population variance of every entry of the matrix.
pub fn variance(m: &DMatrix<f64>) -> f64 {
    let n = m.len().max(1) as f64;
    let mean = m.sum() / n;
    m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if a.len() != b.len() || a.is_empty() || constant(a) || constant(b) {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDependence {
    pub joint_dim: usize,
    pub individual_dim: usize,
    /// `None` when either dimension is constant.
    pub correlation: Option<f64>,
    /// Least-squares slope of the individual latent on the joint latent.
    pub slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dependence {
    pub pairs: Vec<PairDependence>,
    /// Largest `|correlation|` over the defined pairs.
    pub max_abs_correlation: Option<f64>,
}

/// Correlation and slope for every (joint, individual) latent dimension pair.
/// Both matrices are `width x n`.
pub fn joint_individual_dependence(joint: &DMatrix<f64>, individual: &DMatrix<f64>) -> Result<Dependence> {
    let n = joint.ncols();
    if individual.ncols() != n {
        return Err(Error::Shape(format!("{n} joint vs {} individual samples", individual.ncols())));
    }
    if n < 3 {
        return Err(Error::Data(format!("{n} samples; at least 3 are needed")));
    }
    let mut pairs = Vec::new();
    for a in 0..joint.nrows() {
        let x: Vec<f64> = joint.row(a).iter().copied().collect();
        let vx = DVector::from_vec(x.clone());
        let mx = vx.mean();
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        for b in 0..individual.nrows() {
            let y: Vec<f64> = individual.row(b).iter().copied().collect();
            let correlation = pearson(&x, &y);
            let slope = correlation.map(|_| {
                let my = y.iter().sum::<f64>() / n as f64;
                x.iter().zip(&y).map(|(u, v)| (u - mx) * (v - my)).sum::<f64>() / sxx
            });
            pairs.push(PairDependence {
                joint_dim: a,
                individual_dim: b,
                correlation,
                slope,
            });
        }
    }
    let max_abs_correlation = pairs
        .iter()
        .filter_map(|p| p.correlation.map(f64::abs))
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |m| m.max(c))));
    Ok(Dependence { pairs, max_abs_correlation })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Recovery {
    /// `‖est − truth‖_F / ‖truth‖_F`.
    pub raw_error: f64,
    /// The same after scaling `est` by the least-squares optimal scalar.
    pub rescaled_error: f64,
    /// Pearson correlation of the flattened entries (`None` if either is constant).
    pub correlation: Option<f64>,
}

pub fn recovery_score(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Recovery> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", estimate.shape(), truth.shape())));
    }
    let tn = truth.norm();
    if tn == 0.0 {
        return Err(Error::Data("ground truth has zero norm".into()));
    }
    let ee = estimate.norm_squared();
    let scale = if ee > 0.0 { estimate.dot(truth) / ee } else { 0.0 };
    Ok(Recovery {
        raw_error: (estimate - truth).norm() / tn,
        rescaled_error: (estimate * scale - truth).norm() / tn,
        correlation: pearson(estimate.as_slice(), truth.as_slice()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureGroup {
    JointOnly,
    IndividualOnly,
    All,
    Baseline,
}

impl FeatureGroup {
    pub fn tag(self) -> &'static str {
        match self {
            FeatureGroup::JointOnly => "joint-only",
            FeatureGroup::IndividualOnly => "individual-only",
            FeatureGroup::All => "all",
            FeatureGroup::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub group: FeatureGroup,
    pub accuracy: f64,
    /// Macro averages over `classes`.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub classes: Vec<u32>,
    /// `confusion[true][predicted]`, indexed like `classes`.
    pub confusion: Vec<Vec<usize>>,
}

/// Metrics from true and predicted labels over `classes`. A class that is never
/// predicted has precision 0; one that never occurs has recall 0.
pub fn metrics_from_predictions(group: FeatureGroup, truth: &[u32], pred: &[u32], classes: &[u32]) -> Result<MetricsReport> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::Shape(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let pos = |c: u32| classes.iter().position(|&x| x == c).ok_or_else(|| Error::Data(format!("label {c} not among the classes")));
    let m = classes.len();
    let mut confusion = vec![vec![0usize; m]; m];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[pos(t)?][pos(p)?] += 1;
    }
    let correct: usize = (0..m).map(|i| confusion[i][i]).sum();
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let tp = confusion[i][i] as f64;
        let predicted: usize = (0..m).map(|r| confusion[r][i]).sum();
        let actual: usize = confusion[i].iter().sum();
        let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
        ps += p;
        rs += r;
        fs += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let mf = m as f64;
    Ok(MetricsReport {
        group,
        accuracy: correct as f64 / truth.len() as f64,
        precision: ps / mf,
        recall: rs / mf,
        f1: fs / mf,
        classes: classes.to_vec(),
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub iterations: usize,
    pub lr: f64,
    /// L2 penalty on the weights.
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            lr: 0.05,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on standardized features, fitted by
/// full-batch Adam on `train` and scored on `test`.
/// `features` is `d x n`; `labels` has length `n`.
///
/// The objective is convex and the weights start at zero, so the fit is
/// deterministic and does not depend on feature order.
pub fn fit_linear_classifier(
    group: FeatureGroup,
    features: &DMatrix<f64>,
    labels: &[u32],
    train: &[usize],
    test: &[usize],
    cfg: &ClassifierConfig,
) -> Result<MetricsReport> {
    let (d, n) = features.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let distinct = |idx: &[usize]| {
        let mut c: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let (ctrain, ctest) = (distinct(train), distinct(test));
    if ctrain.len() < 2 || ctest.len() < 2 {
        return Err(Error::Data("each split needs at least two classes".into()));
    }
    let mut classes = ctrain.clone();
    classes.extend(ctest);
    classes.sort_unstable();
    classes.dedup();
    let m = classes.len();
    let class_of = |l: u32| classes.binary_search(&l).expect("collected above");

    // standardize with training statistics
    let nt = train.len() as f64;
    let mut mean = DVector::zeros(d);
    let mut sd = DVector::zeros(d);
    for f in 0..d {
        let mu = train.iter().map(|&i| features[(f, i)]).sum::<f64>() / nt;
        let var = train.iter().map(|&i| (features[(f, i)] - mu).powi(2)).sum::<f64>() / nt;
        mean[f] = mu;
        sd[f] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let prep = |idx: &[usize]| DMatrix::from_fn(d, idx.len(), |f, c| (features[(f, idx[c])] - mean[f]) / sd[f]);
    let xtr = prep(train);
    let xte = prep(test);
    let mut y = DMatrix::zeros(m, train.len());
    for (c, &i) in train.iter().enumerate() {
        y[(class_of(labels[i]), c)] = 1.0;
    }

    let mut w = DMatrix::zeros(m, d);
    let mut b = DVector::zeros(m);
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut mw, mut vw) = (DMatrix::zeros(m, d), DMatrix::zeros(m, d));
    let (mut mb, mut vb) = (DVector::zeros(m), DVector::zeros(m));
    for t in 1..=cfg.iterations {
        let mut p = &w * &xtr;
        softmax_columns(&mut p, &b);
        let diff = (p - &y) / nt;
        let gw = &diff * xtr.transpose() + &w * cfg.l2;
        let gb = diff.column_sum();
        let c1 = 1.0 - beta1.powi(t as i32);
        let c2 = 1.0 - beta2.powi(t as i32);
        mw = &mw * beta1 + &gw * (1.0 - beta1);
        vw = &vw * beta2 + gw.component_mul(&gw) * (1.0 - beta2);
        mb = &mb * beta1 + &gb * (1.0 - beta1);
        vb = &vb * beta2 + gb.component_mul(&gb) * (1.0 - beta2);
        w -= (&mw / c1).zip_map(&vw, |mv, vv| cfg.lr * mv / ((vv / c2).sqrt() + eps));
        b -= (&mb / c1).zip_map(&vb, |mv, vv| cfg.lr * mv / ((vv / c2).sqrt() + eps));
    }
    let mut scores = &w * &xte;
    softmax_columns(&mut scores, &b);
    let pred: Vec<u32> = scores.column_iter().map(|c| classes[c.argmax().0]).collect();
    let truth: Vec<u32> = test.iter().map(|&i| labels[i]).collect();
    metrics_from_predictions(group, &truth, &pred, &classes)
}

fn softmax_columns(z: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for mut col in z.column_iter_mut() {
        col += bias;
        let mx = col.max();
        col.apply(|v| *v = (*v - mx).exp());
        let s = col.sum();
        col /= s;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationMap {
    /// `decode(μ + σ) − decode(μ − σ)`, flattened like the modality's samples.
    pub difference: DVector<f64>,
    /// Entries whose magnitude exceeds the median of the nonzero magnitudes.
    pub mask: Vec<bool>,
    /// The component's dataset standard deviation was zero.
    pub zero_std: bool,
}

/// Mask of entries with `|v|` above the median of the nonzero `|v|`.
pub fn median_mask(values: &[f64]) -> Vec<bool> {
    let mut nz: Vec<f64> = values.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    if nz.is_empty() {
        return vec![false; values.len()];
    }
    nz.sort_by(f64::total_cmp);
    let h = nz.len() / 2;
    let median = if nz.len() % 2 == 1 { nz[h] } else { 0.5 * (nz[h - 1] + nz[h]) };
    values.iter().map(|v| v.abs() > median).collect()
}

/// Decodes one sample's latent with a single component moved to `μ ± σ`,
/// where `μ` is the sample's own value and `σ` the component's dataset
/// standard deviation, and returns the difference image with its mask.
pub fn latent_perturbation_map(
    net: &DeepJiveNetwork,
    latent: &DVector<f64>,
    modality: usize,
    branch: Branch,
    component: usize,
    dataset_std: f64,
) -> Result<PerturbationMap> {
    if component >= latent.len() {
        return Err(Error::Shape(format!("component {component} of a {}-wide latent", latent.len())));
    }
    if !(dataset_std >= 0.0) {
        return Err(Error::Config(format!("standard deviation {dataset_std} is negative")));
    }
    let mut z = DMatrix::zeros(latent.len(), 2);
    z.column_mut(0).copy_from(latent);
    z.column_mut(1).copy_from(latent);
    z[(component, 0)] += dataset_std;
    z[(component, 1)] -= dataset_std;
    let out = net.decode(modality, branch, &z)?;
    if dataset_std == 0.0 {
        let p = out.nrows();
        return Ok(PerturbationMap {
            difference: DVector::zeros(p),
            mask: vec![false; p],
            zero_std: true,
        });
    }
    let difference = out.column(0) - out.column(1);
    let mask = median_mask(difference.as_slice());
    Ok(PerturbationMap {
        difference,
        mask,
        zero_std: false,
    })
}

/// Binary PGM (`P5`) of a row-major `rows x cols` image, min..max scaled to 0..255.
pub fn to_pgm(values: &[f64], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::Shape(format!("{} values for a {rows}x{cols} image", values.len())));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (((v - lo) / span) * 255.0).round() as u8));
    Ok(out)
}
