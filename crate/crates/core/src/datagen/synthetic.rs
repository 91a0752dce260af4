use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split_indices, Mnist, Modality, MultimodalDataset, SyntheticGroundTruth};
use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
const SPLIT_STREAM: u64 = 0x5eed_5b17_0000_0001;

fn split_seed(seed: u64) -> u64 {
    seed ^ SPLIT_STREAM
}

/// Two blocks of `p` variables and `n` samples:
/// `x_ijk = α_i·[j ≤ p/2] + β_ik + ε_ijk` with `α ~ U[-2,2]`,
/// `β ~ U{-2,...,2}`, `ε ~ U[-0.5,0.5]`, split 90:10.
pub fn gen_1d(n: usize, p: usize, seed: u64) -> Result<(MultimodalDataset, SyntheticGroundTruth)> {
    if n == 0 || p == 0 {
        return Err(Error::Data("empty 1D dataset requested".into()));
    }
    const K: usize = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-2.0..=2.0));
    let beta_all = DMatrix::from_fn(n, K, |_, _| rng.gen_range(-2i32..=2) as f64);
    let noise: Vec<DMatrix<f64>> = (0..K)
        .map(|_| DMatrix::from_fn(p, n, |_, _| rng.gen_range(-0.5..=0.5)))
        .collect();
    let half = p / 2;
    let mut joint = Vec::new();
    let mut individual = Vec::new();
    let mut blocks = Vec::new();
    for (k, eps) in noise.iter().enumerate() {
        let j = DMatrix::from_fn(p, n, |r, i| if r < half { alpha[(i, 0)] } else { 0.0 });
        let s = DMatrix::from_fn(p, n, |_, i| beta_all[(i, k)]);
        blocks.push(Modality::flat(&(&j + &s) + eps));
        joint.push(j);
        individual.push(s);
    }
    let n_train = (n * 9).div_ceil(10);
    let (train, test) = split_indices(n, n_train, split_seed(seed))?;
    let truth = SyntheticGroundTruth {
        alpha,
        beta: (0..K).map(|k| beta_all.columns(k, 1).into_owned()).collect(),
        noise,
        joint,
        individual,
        templates: DMatrix::zeros(p, 0),
        patterns: DMatrix::zeros(p, 0),
    };
    Ok((MultimodalDataset::new(blocks, None, train, test, seed)?, truth))
}

/// [`gen_1d`] with the joint and individual scores offset in opposite
/// directions: `α' = α + γ_offset` (on every variable) and `β' = β - γ_offset`.
/// The emitted data is that of [`gen_1d`]; only the ground truth moves.
pub fn gen_offset_1d(
    n: usize,
    p: usize,
    gamma_offset: f64,
    seed: u64,
) -> Result<(MultimodalDataset, SyntheticGroundTruth)> {
    let (ds, mut truth) = gen_1d(n, p, seed)?;
    if gamma_offset == 0.0 {
        return Ok((ds, truth));
    }
    truth.alpha.add_scalar_mut(gamma_offset);
    for b in &mut truth.beta {
        b.add_scalar_mut(-gamma_offset);
    }
    for j in &mut truth.joint {
        j.add_scalar_mut(gamma_offset);
    }
    for s in &mut truth.individual {
        s.add_scalar_mut(-gamma_offset);
    }
    Ok((ds, truth))
}

/// Four 28x28 images in `[0,1]`, one per column: `b_11` horizontal stripes,
/// `b_12` a diagonal gradient, `b_21` vertical stripes, `b_22` an anti-diagonal gradient.
pub fn builtin_patterns() -> DMatrix<f64> {
    let s = IMAGE_SIDE;
    let stripe = |t: usize| if (t / 4) % 2 == 0 { 1.0 } else { 0.0 };
    let span = (2 * (s - 1)) as f64;
    DMatrix::from_fn(s * s, 4, |pix, c| {
        let (r, col) = (pix / s, pix % s);
        match c {
            0 => stripe(r),
            1 => (r + col) as f64 / span,
            2 => stripe(col),
            _ => (r + (s - 1 - col)) as f64 / span,
        }
    })
}

/// `x_ik = 0.5·α_i m_{d_i} + 0.5·(β_ik1 b_k1 + β_ik2 b_k2)` with one digit `d_i`
/// per sample shared across both blocks. Templates are the first image of each
/// digit in `mnist`. Split 6:1 like the full corpus.
pub fn gen_overlaid(
    mnist: &Mnist,
    n: usize,
    seed: u64,
) -> Result<(MultimodalDataset, SyntheticGroundTruth)> {
    if n == 0 {
        return Err(Error::Data("empty overlaid dataset requested".into()));
    }
    let p = mnist.pixels();
    if p != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::Shape(format!("expected 28x28 images, got {} pixels", p)));
    }
    let templates = mnist.first_of_each_digit()?;
    let patterns = builtin_patterns();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(n);
    let mut alpha = DMatrix::zeros(n, 10);
    let mut beta = vec![DMatrix::zeros(n, 2); 2];
    for i in 0..n {
        let d = rng.gen_range(0..10usize);
        labels.push(d as u32);
        alpha[(i, d)] = rng.gen_range(0.0..=1.0);
        for b in beta.iter_mut() {
            b[(i, 0)] = rng.gen_range(0.0..=1.0);
            b[(i, 1)] = rng.gen_range(0.0..=1.0);
        }
    }
    let joint_one = (&templates * alpha.transpose()) * 0.5;
    let mut blocks = Vec::new();
    let mut joint = Vec::new();
    let mut individual = Vec::new();
    for (k, b) in beta.iter().enumerate() {
        let s = (patterns.columns(2 * k, 2) * b.transpose()) * 0.5;
        blocks.push(Modality::new(&joint_one + &s, vec![1, IMAGE_SIDE, IMAGE_SIDE])?);
        joint.push(joint_one.clone());
        individual.push(s);
    }
    let n_train = n * 6 / 7;
    let (train, test) = split_indices(n, n_train, split_seed(seed))?;
    let truth = SyntheticGroundTruth {
        alpha,
        beta,
        noise: vec![DMatrix::zeros(p, n); 2],
        joint,
        individual,
        templates,
        patterns,
    };
    Ok((MultimodalDataset::new(blocks, Some(labels), train, test, seed)?, truth))
}

/// Pairs every image with a different image of the same digit. Block 0 holds
/// the corpus in order; block 1 holds its partner under a per-class derangement.
pub fn gen_paired(mnist: &Mnist, seed: u64) -> Result<MultimodalDataset> {
    let n = mnist.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partner = vec![0usize; n];
    for digit in 0..10u8 {
        let members: Vec<usize> = (0..n).filter(|&i| mnist.labels[i] == digit).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Data(format!("digit {digit} has a single image; cannot pair")));
        }
        let mut perm: Vec<usize> = (0..members.len()).collect();
        loop {
            perm.shuffle(&mut rng);
            if perm.iter().enumerate().all(|(a, &b)| a != b) {
                break;
            }
        }
        for (a, &b) in perm.iter().enumerate() {
            partner[members[a]] = members[b];
        }
    }
    let top = mnist.images.clone();
    let bottom = DMatrix::from_fn(mnist.pixels(), n, |r, i| mnist.images[(r, partner[i])]);
    let shape = vec![1, mnist.rows, mnist.cols];
    let labels = mnist.labels.iter().map(|&l| l as u32).collect();
    let n_train = n * 6 / 7;
    let (train, test) = split_indices(n, n_train, split_seed(seed))?;
    MultimodalDataset::new(
        vec![Modality::new(top, shape.clone())?, Modality::new(bottom, shape)?],
        Some(labels),
        train,
        test,
        seed,
    )
}
