use deepjive_tensor::{Graph, Optimizer, OptimizerKind, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{DeepJiveNetwork, OrthoFlow, OrthoMode};
use crate::datagen::MultimodalDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Sgd,
    Adam,
}

impl From<OptimizerChoice> for OptimizerKind {
    fn from(c: OptimizerChoice) -> Self {
        match c {
            OptimizerChoice::Sgd => OptimizerKind::Sgd,
            OptimizerChoice::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the orthogonality penalty.
    pub gamma: f64,
    pub lr: f64,
    /// Learning rate of the regression networks; must exceed `lr` when `ortho` is on.
    pub regression_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerChoice,
    pub seed: u64,
    pub ortho: bool,
    pub ortho_flow: OrthoFlow,
    /// Center the regressor output over each batch before penalizing it.
    pub ortho_centered: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            lr: 1e-3,
            regression_lr: 1e-2,
            batch_size: 32,
            epochs: 100,
            optimizer: OptimizerChoice::Adam,
            seed: 0,
            ortho: true,
            ortho_flow: OrthoFlow::Individual,
            ortho_centered: true,
        }
    }
}

impl TrainConfig {
    pub fn ortho_mode(&self) -> OrthoMode {
        OrthoMode::new(self.ortho_flow, self.ortho_centered)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.ortho && !(self.regression_lr > self.lr) {
            return Err(Error::Config(format!(
                "regression learning rate {} must exceed the main rate {}",
                self.regression_lr, self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Means over the batches of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_arch: f64,
    pub l_ortho: f64,
    pub l_regression: f64,
    pub joint_identity_error: f64,
}

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "L_arch", "L_ortho", "L_regression", "joint_identity_error"];

/// Per-step optimizer state for the main and regression networks.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    main: Optimizer,
    regression: Optimizer,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub l_arch: f64,
    pub l_ortho: f64,
    pub l_regression: f64,
    pub joint_identity_error: f64,
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::Diverged {
            epoch,
            detail: format!("non-finite value produced by {op}; lower the learning rate"),
        },
        other => other,
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let kind = config.optimizer.into();
        Ok(Self {
            main: Optimizer::new(kind, config.lr),
            regression: Optimizer::new(kind, config.regression_lr),
            config,
        })
    }

    /// Regression update of every `f^R_k`, then one main-network step on
    /// `L_arch + γ·L_ortho` with the regression networks frozen.
    pub fn step(&mut self, net: &mut DeepJiveNetwork, batch: &[Tensor]) -> Result<StepReport> {
        let cfg = &self.config;
        let mut g = Graph::new();
        let inputs = net.inputs(&mut g, batch)?;
        let enc = net.encode(&mut g, &inputs)?;
        let mut report = StepReport::default();
        if enc.joint.len() > 1 {
            let mut sum = 0.0;
            let mut pairs = 0;
            for a in 0..enc.joint.len() {
                for b in a + 1..enc.joint.len() {
                    let d: f64 = g.value(enc.joint[a]).data().iter().zip(g.value(enc.joint[b]).data()).map(|(x, y)| (x - y) * (x - y)).sum();
                    sum += d / g.value(enc.joint[a]).len() as f64;
                    pairs += 1;
                }
            }
            report.joint_identity_error = sum / pairs as f64;
        }
        if cfg.ortho {
            let pairs: Vec<_> = (0..net.k())
                .map(|k| enc.individual[k].map(|z| (g.value(enc.joint_for(k)).clone(), g.value(z).clone())))
                .collect();
            report.l_regression = net.regression_step_on(&pairs, &mut self.regression)?.iter().sum();
        }
        let arch = net.arch_loss_graph(&mut g, &inputs, &enc)?;
        report.l_arch = g.scalar(arch);
        let mut total = arch;
        if cfg.ortho {
            let terms: Vec<_> = net.ortho_terms_graph(&mut g, &enc, cfg.ortho_mode(), None)?.into_iter().flatten().collect();
            if !terms.is_empty() {
                let lo = g.add_all(&terms)?;
                report.l_ortho = g.scalar(lo);
                if cfg.gamma > 0.0 {
                    let w = g.scale(lo, cfg.gamma)?;
                    total = g.add(arch, w)?;
                }
            }
        }
        net.store.zero_grad();
        g.backward(total, &mut net.store)?;
        let ids = net.main_params();
        self.main.step(&mut net.store, &ids);
        Ok(report)
    }

    /// Runs `config.epochs` epochs over the training split; batch order comes from `config.seed`.
    pub fn fit(&mut self, net: &mut DeepJiveNetwork, ds: &MultimodalDataset) -> Result<Vec<EpochRecord>> {
        if ds.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        if ds.k() != net.k() {
            return Err(Error::Shape(format!("dataset has {} blocks, network {}", ds.k(), net.k())));
        }
        for (k, b) in ds.blocks.iter().enumerate() {
            if b.sample_shape != net.spec().input_shapes[k] {
                return Err(Error::Shape(format!(
                    "block {k} samples are {:?}, network expects {:?}",
                    b.sample_shape,
                    net.spec().input_shapes[k]
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order = ds.train.clone();
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 1..=self.config.epochs {
            order.shuffle(&mut rng);
            let mut acc = StepReport::default();
            let mut batches = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                let batch = ds.blocks.iter().map(|b| b.batch(chunk)).collect::<Result<Vec<_>>>()?;
                let r = self.step(net, &batch).map_err(|e| diverged(epoch, e))?;
                acc.l_arch += r.l_arch;
                acc.l_ortho += r.l_ortho;
                acc.l_regression += r.l_regression;
                acc.joint_identity_error += r.joint_identity_error;
                batches += 1;
            }
            let m = batches as f64;
            let rec = EpochRecord {
                epoch,
                l_arch: acc.l_arch / m,
                l_ortho: acc.l_ortho / m,
                l_regression: acc.l_regression / m,
                joint_identity_error: acc.joint_identity_error / m,
            };
            if ![rec.l_arch, rec.l_ortho, rec.l_regression].iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite epoch loss".into(),
                });
            }
            history.push(rec);
        }
        Ok(history)
    }
}

/// Builds a trainer from `config` and fits `net` on `ds`.
pub fn train(net: &mut DeepJiveNetwork, ds: &MultimodalDataset, config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    Trainer::new(config.clone())?.fit(net, ds)
}
