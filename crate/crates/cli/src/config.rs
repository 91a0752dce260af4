//! Experiment configuration: a preset per experiment, overridden key by key
//! from a JSON document.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use deepjive::analyze::ClassifierConfig;
use deepjive::network::{LayerSpec, NetworkSpec, OrthoFlow, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Experiment {
    #[value(name = "synthetic-1d")]
    #[serde(rename = "synthetic-1d")]
    Synthetic1d,
    MnistOverlaid,
    MnistPaired,
    Custom,
}

impl Experiment {
    pub fn needs_mnist(self) -> bool {
        matches!(self, Experiment::MnistOverlaid | Experiment::MnistPaired)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Samples to generate (1D) or keep (MNIST).
    pub n: usize,
    /// Training samples; the rest form the test split.
    pub n_train: usize,
    /// Variables per block of the 1D data.
    pub p: usize,
    /// MNIST directory; falls back to `DEEPJIVE_MNIST_DIR`, then `data/mnist-subset`.
    pub mnist_dir: Option<PathBuf>,
    /// Dataset file for the custom experiment.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n: 100,
            n_train: 90,
            p: 100,
            mnist_dir: None,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub variant: Variant,
    /// Hidden conv layers for the MNIST presets.
    pub conv_layers: usize,
    /// Kernel count of each conv layer, in order.
    pub kernels: Vec<usize>,
    pub stride: usize,
    /// A complete network spec; replaces the preset architecture.
    pub spec: Option<NetworkSpec>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Explicit,
            conv_layers: 0,
            kernels: Vec::new(),
            stride: 1,
            spec: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveRule {
    Relative,
    Absolute,
    Derivative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    /// Latent units of each plain autoencoder.
    pub r_max: usize,
    pub rule: CurveRule,
    pub threshold: f64,
    pub n_sims: usize,
    pub confidence: f64,
    /// Training of the plain autoencoders; `seed` is taken from the top level.
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            r_max: 10,
            rule: CurveRule::Relative,
            threshold: 0.05,
            n_sims: deepjive::rank::DEFAULT_SIMULATIONS,
            confidence: deepjive::rank::DEFAULT_CONFIDENCE,
            epochs: 1500,
            lr: 5e-3,
            batch_size: 30,
        }
    }
}

impl RankConfig {
    pub fn criterion(&self) -> deepjive::rank::RankCriterion {
        use deepjive::rank::RankCriterion;
        match self.rule {
            CurveRule::Relative => RankCriterion::Relative(self.threshold),
            CurveRule::Absolute => RankCriterion::Absolute(self.threshold),
            CurveRule::Derivative => RankCriterion::Derivative(self.threshold),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub classifier: ClassifierConfig,
    /// Train separate plain autoencoders as the baseline feature group.
    pub baseline: bool,
    /// Write latent-perturbation maps for the first test sample as PGM images.
    pub maps: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            baseline: true,
            maps: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Seeds data generation and the train split.
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub rank: RankConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Experiment::Synthetic1d)
    }
}

impl ExperimentConfig {
    /// Defaults sized to run on one CPU core.
    pub fn preset(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            seed: 0,
            out: PathBuf::from("runs").join(match experiment {
                Experiment::Synthetic1d => "synthetic-1d",
                Experiment::MnistOverlaid => "mnist-overlaid",
                Experiment::MnistPaired => "mnist-paired",
                Experiment::Custom => "custom",
            }),
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig {
                lr: 5e-3,
                regression_lr: 5e-2,
                batch_size: 30,
                epochs: 1500,
                ..TrainConfig::default()
            },
            rank: RankConfig::default(),
            evaluate: EvaluateConfig::default(),
        };
        match experiment {
            Experiment::Synthetic1d | Experiment::Custom => base,
            Experiment::MnistOverlaid => Self {
                data: DataConfig { n: 9000, n_train: 8000, ..DataConfig::default() },
                network: NetworkConfig {
                    variant: Variant::Merged,
                    conv_layers: 2,
                    kernels: vec![16; 5],
                    stride: 2,
                    spec: None,
                },
                train: TrainConfig {
                    gamma: 0.03,
                    lr: 3e-3,
                    regression_lr: 3e-2,
                    batch_size: 64,
                    epochs: 30,
                    ortho_flow: OrthoFlow::Joint,
                    ..TrainConfig::default()
                },
                rank: mnist_rank(),
                evaluate: EvaluateConfig { baseline: false, ..EvaluateConfig::default() },
                ..base
            },
            Experiment::MnistPaired => Self {
                data: DataConfig { n: 9000, n_train: 8000, ..DataConfig::default() },
                network: NetworkConfig {
                    variant: Variant::Merged,
                    conv_layers: 2,
                    kernels: vec![32, 64],
                    stride: 2,
                    spec: None,
                },
                train: paired_train(),
                rank: mnist_rank(),
                ..base
            },
        }
    }

    /// Preset of the experiment named in `doc`, with every key of `doc` applied on top.
    pub fn from_json(doc: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(doc).context("config is not valid JSON")?;
        let Value::Object(map) = &user else {
            bail!("config must be a JSON object");
        };
        let experiment = match map.get("experiment") {
            Some(v) => serde_json::from_value(v.clone()).context("unknown experiment")?,
            None => Experiment::Synthetic1d,
        };
        let mut merged = serde_json::to_value(Self::preset(experiment))?;
        merge(&mut merged, user);
        let cfg: Self = serde_json::from_value(merged).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let doc = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&doc).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.n_train > self.data.n {
            bail!("data.n_train ({}) exceeds data.n ({})", self.data.n_train, self.data.n);
        }
        if self.experiment == Experiment::Custom {
            if self.data.path.is_none() {
                bail!("the custom experiment needs data.path");
            }
            if self.network.spec.is_none() {
                bail!("the custom experiment needs network.spec");
            }
        }
        if self.network.spec.is_none() && self.network.kernels.len() < self.network.conv_layers {
            bail!(
                "network.kernels lists {} layers but conv_layers is {}",
                self.network.kernels.len(),
                self.network.conv_layers
            );
        }
        self.train.validate()?;
        Ok(())
    }

    /// The architecture this config trains.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let n = &self.network;
        let mut spec = match (&n.spec, self.experiment) {
            (Some(s), _) => s.clone(),
            (None, Experiment::Synthetic1d) => NetworkSpec::linear(vec![vec![self.data.p]; 2], 1, vec![1, 1], n.variant),
            (None, Experiment::MnistOverlaid | Experiment::MnistPaired) => {
                let stack: Vec<LayerSpec> = n.kernels[..n.conv_layers].iter().map(|&c| LayerSpec::conv(c, 3, n.stride)).collect();
                let paired = self.experiment == Experiment::MnistPaired;
                NetworkSpec {
                    input_shapes: vec![vec![1, 28, 28]; 2],
                    layers: vec![stack; 2],
                    joint_width: 10,
                    individual_widths: if paired { vec![26, 26] } else { vec![2, 2] },
                    variant: n.variant,
                    shared_trunk: paired,
                }
            }
            (None, Experiment::Custom) => bail!("the custom experiment needs network.spec"),
        };
        spec.variant = n.variant;
        spec.validate()?;
        Ok(spec)
    }

    pub fn mnist_dir(&self) -> PathBuf {
        self.data
            .mnist_dir
            .clone()
            .or_else(|| std::env::var_os("DEEPJIVE_MNIST_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist-subset"))
    }
}

fn mnist_rank() -> RankConfig {
    RankConfig {
        r_max: 36,
        epochs: 10,
        lr: 3e-3,
        batch_size: 64,
        ..RankConfig::default()
    }
}

fn paired_train() -> TrainConfig {
    TrainConfig {
        gamma: 0.3,
        lr: 3e-3,
        regression_lr: 3e-2,
        batch_size: 64,
        epochs: 20,
        ..TrainConfig::default()
    }
}

/// Recursively overwrites `base` with `over`; objects merge, everything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // a user-supplied spec is taken whole
                    Some(slot) if k != "spec" => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
