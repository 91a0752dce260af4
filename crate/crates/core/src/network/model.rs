use std::path::Path;

use deepjive_tensor::nn::Dense;
use deepjive_tensor::{Graph, Optimizer, ParamId, ParamStore, Tensor, Var};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{Decoder, Trunk};
use super::spec::{NetworkSpec, Variant};
use crate::datagen::MultimodalDataset;
use crate::error::{Error, Result};

pub(crate) const REGRESSION_PREFIX: &str = "reg";

#[derive(Clone, Debug)]
struct ModalityNet {
    joint_trunk: Trunk,
    /// Separate individual trunk; `None` when shared or the branch is absent.
    ind_trunk: Option<Trunk>,
    /// Per-modality joint head; absent for the merged variant.
    joint_head: Option<Dense>,
    ind_head: Option<Dense>,
    joint_dec: Decoder,
    ind_dec: Option<Decoder>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Joint,
    Individual,
}

/// Which latents receive the orthogonality gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrthoFlow {
    /// Individual latents are pulled toward their residual `Λ_S - f^R(Λ_J)`.
    #[default]
    Individual,
    /// Joint latents are pushed to shrink the frozen regressor's output.
    Joint,
    /// Both of the above.
    Both,
}

/// How the orthogonality term is built during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OrthoMode {
    pub flow: OrthoFlow,
    /// Penalize only the batch-varying part of `f^R_k(Λ_J)`. The constant part
    /// equals the mean of `Λ_{S_k}` and says nothing about dependence.
    pub centered: bool,
}

impl OrthoMode {
    pub fn new(flow: OrthoFlow, centered: bool) -> Self {
        Self { flow, centered }
    }
}

/// Values an orthogonality term is anchored to: the individual latents and
/// regressor predictions at the parameters where the snapshot was taken.
#[derive(Clone, Debug)]
pub struct OrthoSnapshot {
    pub mode: OrthoMode,
    lambda_s: Vec<Option<Tensor>>,
    pred: Vec<Option<Tensor>>,
}

/// Graph handles produced by [`DeepJiveNetwork::encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    /// One per modality, or a single entry for the merged variant.
    pub joint: Vec<Var>,
    pub individual: Vec<Option<Var>>,
    /// Flattened joint-trunk outputs (the merged head's inputs).
    pub pre_latents: Vec<Var>,
}

impl Encoded {
    pub fn joint_for(&self, k: usize) -> Var {
        self.joint[if self.joint.len() == 1 { 0 } else { k }]
    }
}

/// Latents of a batch as `width x batch` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBundle {
    pub joint: Vec<DMatrix<f64>>,
    /// `0 x batch` for absent individual branches.
    pub individual: Vec<DMatrix<f64>>,
    /// `Λ*_{S_k} = Λ_{S_k} - f^R_k(Λ_J)` when orthogonality is active.
    pub residual: Option<Vec<DMatrix<f64>>>,
}

impl LatentBundle {
    pub fn is_merged(&self) -> bool {
        self.joint.len() == 1
    }

    pub fn joint_for(&self, k: usize) -> &DMatrix<f64> {
        &self.joint[if self.is_merged() { 0 } else { k }]
    }

    pub fn k(&self) -> usize {
        self.individual.len()
    }
}

/// Decoder outputs as `p_k x batch` matrices.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub latents: LatentBundle,
    pub joint_recon: Vec<DMatrix<f64>>,
    pub individual_recon: Vec<DMatrix<f64>>,
    pub recon: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct OrthoOutput {
    /// `Σ_k mse(f^R_k(Λ_J), 0)`.
    pub value: f64,
    pub per_modality: Vec<f64>,
    pub residual: Vec<DMatrix<f64>>,
    pub predictions: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct DeepJiveNetwork {
    spec: NetworkSpec,
    pub store: ParamStore,
    mods: Vec<ModalityNet>,
    merge: Option<Dense>,
    regressors: Vec<Option<Dense>>,
}

pub(crate) fn var_to_matrix(g: &Graph, v: Var) -> DMatrix<f64> {
    let t = g.value(v);
    let b = t.shape()[0];
    DMatrix::from_column_slice(t.len() / b.max(1), b, t.data())
}

/// `v - mean_over_batch(v)` for a `[b, w]` variable, as a product with `I - 11ᵀ/b`.
fn batch_centered(g: &mut Graph, v: Var) -> Result<Var> {
    let b = g.value(v).shape()[0];
    let inv = 1.0 / b as f64;
    let c = Tensor::new(vec![b, b], (0..b * b).map(|i| if i / b == i % b { 1.0 - inv } else { -inv }).collect())?;
    let c = g.input(c);
    Ok(g.matmul(c, v)?)
}

pub(crate) fn matrix_to_tensor(m: &DMatrix<f64>) -> Result<Tensor> {
    Ok(Tensor::new(vec![m.ncols(), m.nrows()], m.as_slice().to_vec())?)
}

impl DeepJiveNetwork {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let merged = spec.variant == Variant::Merged;
        let mut mods = Vec::new();
        for k in 0..spec.k() {
            let (shape, stack) = (&spec.input_shapes[k], &spec.layers[k]);
            let shapes = spec.trunk_shapes(shape, stack)?;
            let rs = spec.individual_widths[k];
            let tname = if spec.shared_trunk { format!("m{k}.trunk") } else { format!("m{k}.joint.trunk") };
            let joint_trunk = Trunk::new(&mut store, &tname, &shapes, stack, &mut rng)?;
            let ind_trunk = if rs > 0 && !spec.shared_trunk {
                Some(Trunk::new(&mut store, &format!("m{k}.ind.trunk"), &shapes, stack, &mut rng)?)
            } else {
                None
            };
            let joint_head = if merged {
                None
            } else {
                Some(Dense::new(&mut store, &format!("m{k}.joint.head"), joint_trunk.out_len, spec.joint_width, true, &mut rng)?)
            };
            let ind_head = if rs > 0 {
                Some(Dense::new(&mut store, &format!("m{k}.ind.head"), joint_trunk.out_len, rs, true, &mut rng)?)
            } else {
                None
            };
            let joint_dec = Decoder::new(&mut store, &format!("m{k}.joint.dec"), spec.joint_width, &shapes, stack, &mut rng)?;
            let ind_dec = if rs > 0 {
                Some(Decoder::new(&mut store, &format!("m{k}.ind.dec"), rs, &shapes, stack, &mut rng)?)
            } else {
                None
            };
            mods.push(ModalityNet {
                joint_trunk,
                ind_trunk,
                joint_head,
                ind_head,
                joint_dec,
                ind_dec,
            });
        }
        let merge = if merged {
            let width = mods.iter().map(|m| m.joint_trunk.out_len).sum();
            Some(Dense::new(&mut store, "merge", width, spec.joint_width, true, &mut rng)?)
        } else {
            None
        };
        let mut regressors = Vec::new();
        for (k, &rs) in spec.individual_widths.iter().enumerate() {
            regressors.push(if rs > 0 {
                let d = Dense::new(&mut store, &format!("{REGRESSION_PREFIX}{k}"), spec.joint_width, rs, true, &mut rng)?;
                for id in d.params() {
                    store.set_frozen(id, true);
                }
                Some(d)
            } else {
                None
            });
        }
        Ok(Self {
            spec,
            store,
            mods,
            merge,
            regressors,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn k(&self) -> usize {
        self.spec.k()
    }

    /// Every parameter except the regression networks.
    pub fn main_params(&self) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| !self.store.name(id).starts_with(REGRESSION_PREFIX))
            .collect()
    }

    pub fn regression_params(&self) -> Vec<ParamId> {
        self.regressors.iter().flatten().flat_map(Dense::params).collect()
    }

    /// The regression network of modality `k`, if it has an individual branch.
    pub fn regressor(&self, k: usize) -> Option<&Dense> {
        self.regressors.get(k).and_then(Option::as_ref)
    }

    fn check_batch(&self, batch: &[Tensor]) -> Result<usize> {
        if batch.len() != self.k() {
            return Err(Error::Shape(format!("{} inputs for {} modalities", batch.len(), self.k())));
        }
        let b = batch[0].shape().first().copied().unwrap_or(0);
        for (k, t) in batch.iter().enumerate() {
            let expect = &self.spec.input_shapes[k];
            if t.shape().first() != Some(&b) || &t.shape()[1..] != expect.as_slice() {
                return Err(Error::Shape(format!(
                    "modality {k}: batch shape {:?} does not match [{b}, {expect:?}]",
                    t.shape()
                )));
            }
        }
        Ok(b)
    }

    pub fn inputs(&self, g: &mut Graph, batch: &[Tensor]) -> Result<Vec<Var>> {
        self.check_batch(batch)?;
        Ok(batch.iter().map(|t| g.input(t.clone())).collect())
    }

    /// Concatenates per-modality pre-latents and applies the merge head.
    pub fn merge_pre_latents(&self, g: &mut Graph, pre: &[Var]) -> Result<Var> {
        let head = self
            .merge
            .as_ref()
            .ok_or_else(|| Error::WrongVariant(format!("{} network has no merge head", self.variant())))?;
        let cat = g.concat(pre)?;
        Ok(head.forward(g, &self.store, cat)?)
    }

    pub fn encode(&self, g: &mut Graph, inputs: &[Var]) -> Result<Encoded> {
        let mut joint = Vec::new();
        let mut individual = Vec::new();
        let mut pre = Vec::new();
        for (m, &x) in self.mods.iter().zip(inputs) {
            let h = m.joint_trunk.forward(g, &self.store, x)?;
            pre.push(h);
            if let Some(head) = &m.joint_head {
                joint.push(head.forward(g, &self.store, h)?);
            }
            individual.push(match &m.ind_head {
                Some(head) => {
                    let hi = match &m.ind_trunk {
                        Some(t) => t.forward(g, &self.store, x)?,
                        None => h,
                    };
                    Some(head.forward(g, &self.store, hi)?)
                }
                None => None,
            });
        }
        if self.merge.is_some() {
            joint = vec![self.merge_pre_latents(g, &pre)?];
        }
        Ok(Encoded {
            joint,
            individual,
            pre_latents: pre,
        })
    }

    pub fn decode_joint(&self, g: &mut Graph, k: usize, z: Var) -> Result<Var> {
        self.mods[k].joint_dec.forward(g, &self.store, z)
    }

    /// `None` when modality `k` has no individual branch (its `Ŝ_k` is zero).
    pub fn decode_individual(&self, g: &mut Graph, k: usize, z: Var) -> Result<Option<Var>> {
        match &self.mods[k].ind_dec {
            Some(d) => Ok(Some(d.forward(g, &self.store, z)?)),
            None => Ok(None),
        }
    }

    fn flat_input(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(g.flatten(x)?)
    }

    fn recon_term(&self, g: &mut Graph, x: Var, jhat: Var, shat: Option<Var>) -> Result<Var> {
        let xhat = match shat {
            Some(s) => g.add(jhat, s)?,
            None => jhat,
        };
        let xf = self.flat_input(g, x)?;
        Ok(g.mse(xf, xhat)?)
    }

    /// Architecture loss of the network's own variant.
    pub fn arch_loss_graph(&self, g: &mut Graph, inputs: &[Var], enc: &Encoded) -> Result<Var> {
        let k = self.k();
        let mut shat = Vec::with_capacity(k);
        for (i, s) in enc.individual.iter().enumerate() {
            shat.push(match s {
                Some(z) => self.decode_individual(g, i, *z)?,
                None => None,
            });
        }
        let mut terms = Vec::new();
        match self.variant() {
            Variant::Explicit | Variant::Merged => {
                for i in 0..k {
                    let j = self.decode_joint(g, i, enc.joint_for(i))?;
                    terms.push(self.recon_term(g, inputs[i], j, shat[i])?);
                }
                if self.variant() == Variant::Explicit {
                    for a in 0..k {
                        for b in a + 1..k {
                            terms.push(g.mse(enc.joint[a], enc.joint[b])?);
                        }
                    }
                }
            }
            Variant::Exchange => {
                for i in 0..k {
                    for j in 0..k {
                        let jh = self.decode_joint(g, i, enc.joint[j])?;
                        terms.push(self.recon_term(g, inputs[i], jh, shat[i])?);
                    }
                }
            }
        }
        Ok(g.add_all(&terms)?)
    }

    /// Per-modality orthogonality terms; their values are `mse(f^R_k(Λ_J), 0)`,
    /// with `f^R_k(Λ_J)` centered over the batch when `mode.centered`.
    /// Regression parameters enter frozen. A snapshot overrides `mode`.
    pub fn ortho_terms_graph(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        mode: OrthoMode,
        snapshot: Option<&OrthoSnapshot>,
    ) -> Result<Vec<Option<Var>>> {
        let mode = snapshot.map_or(mode, |s| s.mode);
        let flow = mode.flow;
        let mut out = Vec::new();
        for k in 0..self.k() {
            let (Some(reg), Some(ls)) = (self.regressor(k), enc.individual[k]) else {
                out.push(None);
                continue;
            };
            let pred = reg.forward(g, &self.store, enc.joint_for(k))?;
            let (ls0, pred0) = match snapshot {
                Some(s) => {
                    let (Some(l), Some(p)) = (&s.lambda_s[k], &s.pred[k]) else {
                        return Err(Error::Shape(format!("snapshot lacks modality {k}")));
                    };
                    (g.input(l.clone()), g.input(p.clone()))
                }
                None => (g.detach(ls), g.detach(pred)),
            };
            let joint_part = if flow == OrthoFlow::Individual { pred0 } else { pred };
            let term = if flow == OrthoFlow::Joint {
                joint_part
            } else {
                let shift = g.sub(ls, ls0)?;
                g.add(joint_part, shift)?
            };
            let term = if mode.centered { batch_centered(g, term)? } else { term };
            let zeros = g.input(Tensor::zeros(g.value(term).shape()));
            out.push(Some(g.mse(term, zeros)?));
        }
        Ok(out)
    }

    /// Builds `L_arch + γ·L_ortho` in `g`. With `ortho = None` the result is `L_arch`.
    pub fn total_loss_graph(
        &self,
        g: &mut Graph,
        inputs: &[Var],
        gamma: f64,
        ortho: Option<(OrthoMode, Option<&OrthoSnapshot>)>,
    ) -> Result<(Var, Encoded)> {
        if !(gamma >= 0.0) {
            return Err(Error::Config(format!("orthogonality weight must be non-negative, got {gamma}")));
        }
        let enc = self.encode(g, inputs)?;
        let arch = self.arch_loss_graph(g, inputs, &enc)?;
        let Some((mode, snap)) = ortho else {
            return Ok((arch, enc));
        };
        let terms: Vec<Var> = self.ortho_terms_graph(g, &enc, mode, snap)?.into_iter().flatten().collect();
        if terms.is_empty() || gamma == 0.0 {
            return Ok((arch, enc));
        }
        let lo = g.add_all(&terms)?;
        let weighted = g.scale(lo, gamma)?;
        Ok((g.add(arch, weighted)?, enc))
    }

    pub fn forward(&self, batch: &[Tensor]) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let inputs = self.inputs(&mut g, batch)?;
        let enc = self.encode(&mut g, &inputs)?;
        let b = batch[0].shape()[0];
        let mut joint_recon = Vec::new();
        let mut individual_recon = Vec::new();
        let mut recon = Vec::new();
        let mut residual = Vec::new();
        for k in 0..self.k() {
            let j = self.decode_joint(&mut g, k, enc.joint_for(k))?;
            let jm = var_to_matrix(&g, j);
            let sm = match enc.individual[k] {
                Some(z) => {
                    let s = self.decode_individual(&mut g, k, z)?.expect("branch present");
                    var_to_matrix(&g, s)
                }
                None => DMatrix::zeros(jm.nrows(), b),
            };
            recon.push(&jm + &sm);
            joint_recon.push(jm);
            individual_recon.push(sm);
            residual.push(match (self.regressor(k), enc.individual[k]) {
                (Some(reg), Some(z)) => {
                    let pred = reg.forward(&mut g, &self.store, enc.joint_for(k))?;
                    var_to_matrix(&g, z) - var_to_matrix(&g, pred)
                }
                _ => DMatrix::zeros(0, b),
            });
        }
        let latents = LatentBundle {
            joint: enc.joint.iter().map(|&v| var_to_matrix(&g, v)).collect(),
            individual: enc
                .individual
                .iter()
                .map(|v| v.map_or_else(|| DMatrix::zeros(0, b), |v| var_to_matrix(&g, v)))
                .collect(),
            residual: Some(residual),
        };
        Ok(ForwardOutput {
            latents,
            joint_recon,
            individual_recon,
            recon,
        })
    }

    /// [`DeepJiveNetwork::forward`] over dataset columns `idx`, in chunks.
    pub fn forward_dataset(&self, ds: &MultimodalDataset, idx: &[usize]) -> Result<ForwardOutput> {
        const CHUNK: usize = 256;
        let mut parts = Vec::new();
        for chunk in idx.chunks(CHUNK) {
            let batch = ds.blocks.iter().map(|b| b.batch(chunk)).collect::<Result<Vec<_>>>()?;
            parts.push(self.forward(&batch)?);
        }
        if parts.is_empty() {
            return Err(Error::Data("no samples to evaluate".into()));
        }
        let cat = |f: &dyn Fn(&ForwardOutput) -> &Vec<DMatrix<f64>>| -> Vec<DMatrix<f64>> {
            let first = f(&parts[0]);
            (0..first.len())
                .map(|i| {
                    let rows = first[i].nrows();
                    let cols: Vec<&DMatrix<f64>> = parts.iter().map(|p| &f(p)[i]).collect();
                    let n: usize = cols.iter().map(|m| m.ncols()).sum();
                    let mut out = DMatrix::zeros(rows, n);
                    let mut at = 0;
                    for m in cols {
                        out.columns_mut(at, m.ncols()).copy_from(m);
                        at += m.ncols();
                    }
                    out
                })
                .collect()
        };
        Ok(ForwardOutput {
            latents: LatentBundle {
                joint: cat(&|p| &p.latents.joint),
                individual: cat(&|p| &p.latents.individual),
                residual: Some(cat(&|p| p.latents.residual.as_ref().expect("set by forward"))),
            },
            joint_recon: cat(&|p| &p.joint_recon),
            individual_recon: cat(&|p| &p.individual_recon),
            recon: cat(&|p| &p.recon),
        })
    }

    fn require(&self, v: Variant) -> Result<()> {
        if self.variant() != v {
            return Err(Error::WrongVariant(format!("{v} loss requested on a {} network", self.variant())));
        }
        Ok(())
    }

    fn eval_arch(&self, batch: &[Tensor]) -> Result<f64> {
        let mut g = Graph::new();
        let inputs = self.inputs(&mut g, batch)?;
        let enc = self.encode(&mut g, &inputs)?;
        let l = self.arch_loss_graph(&mut g, &inputs, &enc)?;
        Ok(g.scalar(l))
    }

    /// `Σ_k mse(X_k, X̂_k) + Σ_{k<j} mse(Λ_{J_k}, Λ_{J_j})`.
    pub fn loss_explicit(&self, batch: &[Tensor]) -> Result<f64> {
        self.require(Variant::Explicit)?;
        self.eval_arch(batch)
    }

    /// `Σ_k Σ_j mse(X_k, f^D_{J_k}(Λ_{J_j}) + Ŝ_k)`.
    pub fn loss_exchange(&self, batch: &[Tensor]) -> Result<f64> {
        self.require(Variant::Exchange)?;
        self.eval_arch(batch)
    }

    /// `Σ_k mse(X_k, f^D_{J_k}(Λ_J) + Ŝ_k)` with one merged `Λ_J`.
    pub fn loss_merged(&self, batch: &[Tensor]) -> Result<f64> {
        self.require(Variant::Merged)?;
        self.eval_arch(batch)
    }

    /// The loss of the network's own variant.
    pub fn arch_loss(&self, batch: &[Tensor]) -> Result<f64> {
        self.eval_arch(batch)
    }

    /// Regressor predictions and individual latents at the current parameters.
    pub fn ortho_snapshot(&self, batch: &[Tensor], mode: OrthoMode) -> Result<OrthoSnapshot> {
        let mut g = Graph::new();
        let inputs = self.inputs(&mut g, batch)?;
        let enc = self.encode(&mut g, &inputs)?;
        let mut lambda_s = Vec::new();
        let mut pred = Vec::new();
        for k in 0..self.k() {
            match (self.regressor(k), enc.individual[k]) {
                (Some(reg), Some(z)) => {
                    let p = reg.forward(&mut g, &self.store, enc.joint_for(k))?;
                    lambda_s.push(Some(g.value(z).clone()));
                    pred.push(Some(g.value(p).clone()));
                }
                _ => {
                    lambda_s.push(None);
                    pred.push(None);
                }
            }
        }
        Ok(OrthoSnapshot { mode, lambda_s, pred })
    }

    /// `L_ortho = Σ_k mse(f^R_k(Λ_J), 0)` and the residual latents `Λ*_{S_k}`.
    pub fn ortho_penalty(&self, batch: &[Tensor]) -> Result<OrthoOutput> {
        let snap = self.ortho_snapshot(batch, OrthoMode::default())?;
        let mut per = Vec::new();
        let mut residual = Vec::new();
        let mut predictions = Vec::new();
        for (l, p) in snap.lambda_s.iter().zip(&snap.pred) {
            match (l, p) {
                (Some(l), Some(p)) => {
                    let b = l.shape()[0];
                    let (lm, pm) = (
                        DMatrix::from_column_slice(l.len() / b, b, l.data()),
                        DMatrix::from_column_slice(p.len() / b, b, p.data()),
                    );
                    per.push(pm.norm_squared() / pm.len() as f64);
                    residual.push(&lm - &pm);
                    predictions.push(pm);
                }
                _ => {
                    let b = self.check_batch(batch)?;
                    per.push(0.0);
                    residual.push(DMatrix::zeros(0, b));
                    predictions.push(DMatrix::zeros(0, b));
                }
            }
        }
        Ok(OrthoOutput {
            value: per.iter().sum(),
            per_modality: per,
            residual,
            predictions,
        })
    }

    /// `L_arch + γ·L_ortho` at the current parameters.
    pub fn total_loss(&self, batch: &[Tensor], gamma: f64, ortho: bool) -> Result<f64> {
        let mut g = Graph::new();
        let inputs = self.inputs(&mut g, batch)?;
        let (l, _) = self.total_loss_graph(&mut g, &inputs, gamma, ortho.then_some((OrthoMode::default(), None)))?;
        Ok(g.scalar(l))
    }

    /// Value of `L_arch + γ·L_ortho` with the orthogonality term anchored at
    /// `snapshot`; as a function of the main parameters this is what the
    /// training step differentiates.
    pub fn anchored_total_loss(&self, batch: &[Tensor], gamma: f64, snapshot: &OrthoSnapshot) -> Result<f64> {
        let mut g = Graph::new();
        let inputs = self.inputs(&mut g, batch)?;
        let (l, _) = self.total_loss_graph(&mut g, &inputs, gamma, Some((snapshot.mode, Some(snapshot))))?;
        Ok(g.scalar(l))
    }

    /// Gradient of [`DeepJiveNetwork::anchored_total_loss`] (or of `L_arch`
    /// when `snapshot` is `None`) left in the store's gradient buffers.
    pub fn total_loss_gradients(&mut self, batch: &[Tensor], gamma: f64, snapshot: Option<&OrthoSnapshot>) -> Result<f64> {
        let mut g = Graph::new();
        let inputs = self.inputs(&mut g, batch)?;
        let ortho = snapshot.map(|s| (s.mode, Some(s)));
        let (l, _) = self.total_loss_graph(&mut g, &inputs, gamma, ortho)?;
        self.store.zero_grad();
        g.backward(l, &mut self.store)?;
        Ok(g.scalar(l))
    }

    /// One gradient step of every regression network on
    /// `mse(Λ_{S_k}, f^R_k(Λ_J))` with the main network held fixed.
    /// Returns the per-modality losses before the step.
    pub fn regression_step(&mut self, batch: &[Tensor], opt: &mut Optimizer) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let inputs = self.inputs(&mut g, batch)?;
        let enc = self.encode(&mut g, &inputs)?;
        let pairs: Vec<Option<(Tensor, Tensor)>> = (0..self.k())
            .map(|k| enc.individual[k].map(|z| (g.value(enc.joint_for(k)).clone(), g.value(z).clone())))
            .collect();
        self.regression_step_on(&pairs, opt)
    }

    /// [`DeepJiveNetwork::regression_step`] on precomputed `(Λ_J, Λ_S)` pairs.
    pub(crate) fn regression_step_on(&mut self, pairs: &[Option<(Tensor, Tensor)>], opt: &mut Optimizer) -> Result<Vec<f64>> {
        let ids = self.regression_params();
        for &id in &ids {
            self.store.set_frozen(id, false);
        }
        let result = (|| {
            let mut g = Graph::new();
            let mut terms = Vec::new();
            let mut values = Vec::new();
            for (k, pair) in pairs.iter().enumerate() {
                let (Some(reg), Some((lj, ls))) = (self.regressor(k), pair) else {
                    values.push(0.0);
                    continue;
                };
                let x = g.input(lj.clone());
                let y = g.input(ls.clone());
                let pred = reg.forward(&mut g, &self.store, x)?;
                let l = g.mse(y, pred)?;
                values.push(g.scalar(l));
                terms.push(l);
            }
            if !terms.is_empty() {
                let total = g.add_all(&terms)?;
                self.store.zero_grad();
                g.backward(total, &mut self.store)?;
                opt.step(&mut self.store, &ids);
            }
            Ok(values)
        })();
        for &id in &ids {
            self.store.set_frozen(id, true);
        }
        result
    }

    /// Decodes `width x b` latents of one branch of modality `k` to `p_k x b`.
    pub fn decode(&self, k: usize, branch: Branch, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k >= self.k() {
            return Err(Error::Shape(format!("modality {k} of {}", self.k())));
        }
        let width = match branch {
            Branch::Joint => self.spec.joint_width,
            Branch::Individual => self.spec.individual_widths[k],
        };
        if z.nrows() != width || width == 0 {
            return Err(Error::Shape(format!("{} latent rows for a {branch:?} branch of width {width}", z.nrows())));
        }
        let mut g = Graph::new();
        let zv = g.input(matrix_to_tensor(z)?);
        let out = match branch {
            Branch::Joint => self.decode_joint(&mut g, k, zv)?,
            Branch::Individual => self.decode_individual(&mut g, k, zv)?.expect("width checked"),
        };
        Ok(var_to_matrix(&g, out))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.store.save(f)?;
        Ok(())
    }

    /// Rebuilds the network for `spec` and fills it from a checkpoint.
    pub fn load(spec: NetworkSpec, path: &Path) -> Result<Self> {
        let mut net = Self::new(spec, 0)?;
        let loaded = ParamStore::load(std::io::BufReader::new(std::fs::File::open(path)?))?;
        net.store.assign_from(&loaded)?;
        Ok(net)
    }
}
