use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use deepjive::analyze::{
    fit_linear_classifier, joint_identity_error, joint_individual_dependence, latent_perturbation_map, pearson, recovery_score,
    to_pgm, variance, FeatureGroup, MetricsReport,
};
use deepjive::datagen::{
    gen_1d, gen_overlaid, gen_paired, load_mnist_dir, read_dataset, read_truth, write_dataset, write_truth, MultimodalDataset,
    SyntheticGroundTruth,
};
use deepjive::linalg::{center_rows, pca};
use deepjive::network::{build_network, train, Branch, DeepJiveNetwork, LatentBundle, NetworkSpec, HISTORY_HEADER};
use deepjive::rank::{choose_total_rank, fit_plain_autoencoder, select_joint_rank, JointRank, TotalRank};
use nalgebra::{DMatrix, DVector};

use crate::config::{Experiment, ExperimentConfig};
use crate::output::{fmt, fmt_opt, Csv};

pub const DATASET_FILE: &str = "dataset.bin";
pub const TRUTH_FILE: &str = "truth.bin";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Generates (or loads) the dataset the config describes.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(MultimodalDataset, Option<SyntheticGroundTruth>)> {
    let d = &cfg.data;
    match cfg.experiment {
        Experiment::Synthetic1d => {
            let (mut ds, truth) = gen_1d(d.n, d.p, cfg.seed)?;
            if ds.train.len() != d.n_train {
                ds.resplit(d.n_train, cfg.seed)?;
            }
            Ok((ds, Some(truth)))
        }
        Experiment::MnistOverlaid => {
            let mnist = load_mnist(cfg)?;
            let (mut ds, truth) = gen_overlaid(&mnist, d.n, cfg.seed)?;
            ds.resplit(d.n_train, cfg.seed)?;
            Ok((ds, Some(truth)))
        }
        Experiment::MnistPaired => {
            let mnist = load_mnist(cfg)?;
            let mut ds = gen_paired(&mnist, cfg.seed)?;
            ds.truncate(d.n, d.n_train, cfg.seed)?;
            Ok((ds, None))
        }
        Experiment::Custom => {
            let path = d.path.as_ref().context("the custom experiment needs data.path")?;
            let mut ds = read_dataset(path).with_context(|| format!("cannot read dataset {}", path.display()))?;
            if ds.train.len() != d.n_train {
                ds.resplit(d.n_train.min(ds.n()), cfg.seed)?;
            }
            Ok((ds, None))
        }
    }
}

fn load_mnist(cfg: &ExperimentConfig) -> Result<deepjive::datagen::Mnist> {
    let dir = cfg.mnist_dir();
    load_mnist_dir(&dir).with_context(|| {
        format!(
            "cannot load MNIST from {}; point data.mnist_dir or DEEPJIVE_MNIST_DIR at a directory holding the idx image and label files",
            dir.display()
        )
    })
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

fn load_outputs(cfg: &ExperimentConfig) -> Result<(MultimodalDataset, Option<SyntheticGroundTruth>)> {
    let path = cfg.out.join(DATASET_FILE);
    ensure!(path.exists(), "no dataset at {}; run gen-data first", path.display());
    let ds = read_dataset(&path)?;
    let truth_path = cfg.out.join(TRUTH_FILE);
    let truth = if truth_path.exists() { Some(read_truth(&truth_path)?) } else { None };
    Ok((ds, truth))
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (ds, truth) = build_dataset(cfg)?;
    let dir = out_dir(cfg)?;
    write_dataset(&dir.join(DATASET_FILE), &ds)?;
    match &truth {
        Some(t) => write_truth(&dir.join(TRUTH_FILE), t)?,
        None => {
            let _ = fs::remove_file(dir.join(TRUTH_FILE));
        }
    }
    let mut csv = Csv::create(&dir.join("data_summary.csv"), &["block", "sample_shape", "variables", "n", "n_train", "n_test", "labels"])?;
    for (k, b) in ds.blocks.iter().enumerate() {
        let shape = b.sample_shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x");
        csv.row([
            k.to_string(),
            shape,
            b.p().to_string(),
            ds.n().to_string(),
            ds.train.len().to_string(),
            ds.test.len().to_string(),
            ds.labels.is_some().to_string(),
        ])?;
    }
    csv.finish()?;
    Ok(dir.join(DATASET_FILE))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub final_l_arch: f64,
    pub final_identity_error: f64,
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let (ds, _) = load_outputs(cfg)?;
    let spec = cfg.network_spec()?;
    let mut net = build_network(spec.clone(), cfg.train.seed)?;
    let history = train(&mut net, &ds, &cfg.train)?;
    let dir = out_dir(cfg)?;
    net.save(&dir.join(CHECKPOINT_FILE))?;
    fs::write(dir.join("network.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    let mut csv = Csv::create(&dir.join("history.csv"), &HISTORY_HEADER)?;
    for r in &history {
        csv.row([r.epoch.to_string(), fmt(r.l_arch), fmt(r.l_ortho), fmt(r.l_regression), fmt(r.joint_identity_error)])?;
    }
    csv.finish()?;
    let out = net.forward_dataset(&ds, &ds.test)?;
    write_latents(&dir.join("latents_test.csv"), &ds.test, &out.latents)?;
    let last = history.last().context("zero training epochs")?;
    Ok(TrainSummary {
        final_l_arch: last.l_arch,
        final_identity_error: last.joint_identity_error,
    })
}

fn write_latents(path: &Path, idx: &[usize], lat: &LatentBundle) -> Result<()> {
    let mut header = vec!["sample".to_string()];
    let mut blocks: Vec<&DMatrix<f64>> = Vec::new();
    let merged = lat.is_merged();
    for (k, j) in lat.joint.iter().enumerate() {
        for d in 0..j.nrows() {
            header.push(if merged { format!("joint_{d}") } else { format!("joint{k}_{d}") });
        }
        blocks.push(j);
    }
    for (k, s) in lat.individual.iter().enumerate() {
        header.extend((0..s.nrows()).map(|d| format!("individual{k}_{d}")));
        blocks.push(s);
    }
    if let Some(res) = &lat.residual {
        for (k, r) in res.iter().enumerate() {
            header.extend((0..r.nrows()).map(|d| format!("residual{k}_{d}")));
            blocks.push(r);
        }
    }
    let mut csv = Csv::create(path, &header)?;
    for (c, &i) in idx.iter().enumerate() {
        let mut row = vec![i.to_string()];
        for m in &blocks {
            row.extend(m.column(c).iter().map(|&v| fmt(v)));
        }
        csv.row(row)?;
    }
    csv.finish()
}

#[derive(Clone, Debug)]
pub struct RankSummary {
    pub blocks: Vec<TotalRank>,
    pub joint: JointRank,
}

pub fn rank_select(cfg: &ExperimentConfig) -> Result<RankSummary> {
    let (ds, _) = load_outputs(cfg)?;
    let spec = cfg.network_spec()?;
    let r = &cfg.rank;
    let ae_cfg = deepjive::network::TrainConfig {
        lr: r.lr,
        batch_size: r.batch_size,
        epochs: r.epochs,
        seed: cfg.seed,
        ortho: false,
        ..cfg.train.clone()
    };
    let mut blocks = Vec::new();
    let mut test_errors = Vec::new();
    let mut scores = Vec::new();
    for (k, b) in ds.blocks.iter().enumerate() {
        let fit = fit_plain_autoencoder(b, &spec.layers[k], r.r_max, &ds.train, &ds.test, &ae_cfg)?;
        let total = choose_total_rank(&fit.train_latents, r.criterion())?;
        ensure!(total.curve.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15), "error curve of block {k} increases");
        if total.rank > 0 {
            scores.push(pca(&fit.train_latents, total.rank)?.scores);
        }
        test_errors.push(fit.test_error);
        blocks.push(total);
    }
    let joint = if scores.len() == blocks.len() {
        select_joint_rank(&scores, r.n_sims, r.confidence, cfg.seed)?
    } else {
        // a block without variation leaves nothing to share
        JointRank {
            rank: 0,
            singular_values: Vec::new(),
            null_maxima: Vec::new(),
            threshold: f64::NAN,
            confidence: r.confidence,
        }
    };
    let sum: usize = blocks.iter().map(|b| b.rank).sum();
    ensure!(joint.rank <= sum, "joint rank {} exceeds the sum of block ranks {sum}", joint.rank);

    let dir = out_dir(cfg)?;
    let mut csv = Csv::create(&dir.join("rank_curves.csv"), &["block", "components", "error"])?;
    for (k, b) in blocks.iter().enumerate() {
        for (c, e) in b.curve.iter().enumerate() {
            csv.row([k.to_string(), c.to_string(), fmt(*e)])?;
        }
    }
    csv.finish()?;
    let mut csv = Csv::create(&dir.join("rank_blocks.csv"), &["block", "rank", "rule", "threshold", "not_crossed", "test_error"])?;
    for (k, b) in blocks.iter().enumerate() {
        let rule = serde_json::to_value(r.rule)?.as_str().unwrap_or_default().to_string();
        csv.row([k.to_string(), b.rank.to_string(), rule, fmt(r.threshold), b.not_crossed.to_string(), fmt(test_errors[k])])?;
    }
    csv.finish()?;
    let mut csv = Csv::create(&dir.join("rank_singular_values.csv"), &["index", "value", "above_threshold"])?;
    for (i, s) in joint.singular_values.iter().enumerate() {
        csv.row([i.to_string(), fmt(*s), (*s > joint.threshold).to_string()])?;
    }
    csv.finish()?;
    let mut csv = Csv::create(&dir.join("rank_null.csv"), &["order", "max_singular_value"])?;
    for (i, s) in joint.null_maxima.iter().enumerate() {
        csv.row([i.to_string(), fmt(*s)])?;
    }
    csv.finish()?;
    let mut csv = Csv::create(&dir.join("rank_joint.csv"), &["joint_rank", "threshold", "confidence", "n_sims", "block_rank_sum"])?;
    csv.row([joint.rank.to_string(), fmt(joint.threshold), fmt(joint.confidence), r.n_sims.to_string(), sum.to_string()])?;
    csv.finish()?;
    Ok(RankSummary { blocks, joint })
}

/// Rows of every matrix stacked, column order kept.
pub fn stack_rows(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = parts.first().map_or(0, |m| m.ncols());
    let rows: usize = parts.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(rows, n);
    let mut at = 0;
    for m in parts {
        out.rows_mut(at, m.nrows()).copy_from(m);
        at += m.nrows();
    }
    out
}

/// Feature matrices of one network over `idx`: joint latents (each modality's, stacked),
/// individual latents, and both.
pub fn latent_features(lat: &LatentBundle) -> [(FeatureGroup, DMatrix<f64>); 3] {
    let joint: Vec<&DMatrix<f64>> = lat.joint.iter().collect();
    let ind: Vec<&DMatrix<f64>> = lat.individual.iter().filter(|m| m.nrows() > 0).collect();
    let all: Vec<&DMatrix<f64>> = joint.iter().chain(&ind).copied().collect();
    [
        (FeatureGroup::JointOnly, stack_rows(&joint)),
        (FeatureGroup::IndividualOnly, stack_rows(&ind)),
        (FeatureGroup::All, stack_rows(&all)),
    ]
}

/// Latents of separately trained plain autoencoders, one per modality, each as
/// wide as that modality's joint plus individual latents.
pub fn baseline_features(cfg: &ExperimentConfig, spec: &NetworkSpec, ds: &MultimodalDataset, idx: &[usize]) -> Result<DMatrix<f64>> {
    let ae_cfg = deepjive::network::TrainConfig { ortho: false, ..cfg.train.clone() };
    let mut parts = Vec::new();
    for (k, b) in ds.blocks.iter().enumerate() {
        let width = spec.joint_width + spec.individual_widths[k];
        let fit = fit_plain_autoencoder(b, &spec.layers[k], width, &ds.train, &[], &ae_cfg)?;
        parts.push(fit.autoencoder.encode(b, idx)?.0);
    }
    Ok(stack_rows(&parts.iter().collect::<Vec<_>>()))
}

/// Correlation after removing each variable's mean over samples.
pub fn centered_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    pearson(center_rows(a).0.as_slice(), center_rows(b).0.as_slice())
}

#[derive(Clone, Debug, Default)]
pub struct EvalSummary {
    pub metrics: Vec<MetricsReport>,
    pub max_abs_dependence: Option<f64>,
}

pub fn evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<EvalSummary> {
    let (ds, truth) = load_outputs(cfg)?;
    let spec = cfg.network_spec()?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
    ensure!(ckpt.exists(), "no checkpoint at {}; run train first", ckpt.display());
    let net = DeepJiveNetwork::load(spec.clone(), &ckpt)
        .with_context(|| format!("checkpoint {} does not match the configured network", ckpt.display()))?;
    ensure!(
        ds.blocks.iter().zip(&spec.input_shapes).all(|(b, s)| &b.sample_shape == s) && ds.k() == spec.k(),
        "dataset blocks do not match the network inputs"
    );
    let dir = out_dir(cfg)?.to_path_buf();
    let mut summary = EvalSummary::default();
    let test = net.forward_dataset(&ds, &ds.test)?;

    let ie = joint_identity_error(&test.latents)?;
    let var = variance(&test.latents.joint[0]);
    if ie.merged {
        ensure!(ie.value == 0.0, "merged network reports a nonzero identity error");
    }
    let mut csv = Csv::create(&dir.join("identity.csv"), &["joint_identity_error", "merged", "joint_variance", "relative"])?;
    csv.row([fmt(ie.value), ie.merged.to_string(), fmt(var), fmt_opt((var > 0.0).then(|| ie.value / var))])?;
    csv.finish()?;

    let mut csv = Csv::create(&dir.join("dependence.csv"), &["modality", "joint_dim", "individual_dim", "correlation", "slope"])?;
    for k in 0..ds.k() {
        let ind = &test.latents.individual[k];
        if ind.nrows() == 0 || ds.test.len() < 3 {
            continue;
        }
        let dep = joint_individual_dependence(test.latents.joint_for(k), ind)?;
        if let Some(m) = dep.max_abs_correlation {
            summary.max_abs_dependence = Some(summary.max_abs_dependence.map_or(m, |x: f64| x.max(m)));
        }
        for p in &dep.pairs {
            csv.row([k.to_string(), p.joint_dim.to_string(), p.individual_dim.to_string(), fmt_opt(p.correlation), fmt_opt(p.slope)])?;
        }
    }
    csv.finish()?;

    if let Some(t) = &truth {
        let mut rec = Csv::create(
            &dir.join("recovery.csv"),
            &["modality", "component", "raw_error", "rescaled_error", "correlation", "centered_correlation"],
        )?;
        let mut sep = Csv::create(&dir.join("separation.csv"), &["modality", "reconstruction", "truth", "centered_correlation"])?;
        for k in 0..ds.k() {
            let tj = t.joint[k].select_columns(&ds.test);
            let ts = t.individual[k].select_columns(&ds.test);
            for (name, est, tr) in [("joint", &test.joint_recon[k], &tj), ("individual", &test.individual_recon[k], &ts)] {
                if tr.norm() == 0.0 {
                    continue;
                }
                let r = recovery_score(est, tr)?;
                rec.row([
                    k.to_string(),
                    name.to_string(),
                    fmt(r.raw_error),
                    fmt(r.rescaled_error),
                    fmt_opt(r.correlation),
                    fmt_opt(centered_correlation(est, tr)),
                ])?;
                for (tname, other) in [("joint", &tj), ("individual", &ts)] {
                    sep.row([k.to_string(), name.to_string(), tname.to_string(), fmt_opt(centered_correlation(est, other))])?;
                }
            }
        }
        rec.finish()?;
        sep.finish()?;
    }

    if let Some(labels) = &ds.labels {
        let idx: Vec<usize> = ds.train.iter().chain(&ds.test).copied().collect();
        let y: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();
        let tr: Vec<usize> = (0..ds.train.len()).collect();
        let te: Vec<usize> = (ds.train.len()..idx.len()).collect();
        let all = net.forward_dataset(&ds, &idx)?;
        let mut groups: Vec<(FeatureGroup, DMatrix<f64>)> = latent_features(&all.latents).into_iter().filter(|(_, f)| f.nrows() > 0).collect();
        if cfg.evaluate.baseline {
            groups.push((FeatureGroup::Baseline, baseline_features(cfg, &spec, &ds, &idx)?));
        }
        let conv = spec.layers[0].len();
        let mut csv = Csv::create(&dir.join("metrics.csv"), &["group", "hidden_layers", "accuracy", "precision", "recall", "f1"])?;
        for (g, f) in &groups {
            let m = fit_linear_classifier(*g, f, &y, &tr, &te, &cfg.evaluate.classifier)?;
            csv.row([g.tag().to_string(), conv.to_string(), fmt(m.accuracy), fmt(m.precision), fmt(m.recall), fmt(m.f1)])?;
            summary.metrics.push(m);
        }
        csv.finish()?;
    }

    if cfg.evaluate.maps && !ds.test.is_empty() {
        write_maps(&dir, &net, &test.latents, &spec)?;
    }
    Ok(summary)
}

fn write_maps(dir: &Path, net: &DeepJiveNetwork, lat: &LatentBundle, spec: &NetworkSpec) -> Result<()> {
    let maps = dir.join("maps");
    fs::create_dir_all(&maps)?;
    let mut csv = Csv::create(&maps.join("maps.csv"), &["modality", "branch", "component", "std", "masked_fraction", "file"])?;
    for k in 0..spec.k() {
        let image = match spec.input_shapes[k].as_slice() {
            [1, h, w] => Some((*h, *w)),
            _ => None,
        };
        for (branch, m) in [(Branch::Joint, lat.joint_for(k)), (Branch::Individual, &lat.individual[k])] {
            let bname = match branch {
                Branch::Joint => "joint",
                Branch::Individual => "individual",
            };
            let z: DVector<f64> = m.column(0).into_owned();
            for c in 0..m.nrows() {
                let row: Vec<f64> = m.row(c).iter().copied().collect();
                let mean = row.iter().sum::<f64>() / row.len() as f64;
                let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64).sqrt();
                let map = latent_perturbation_map(net, &z, k, branch, c, std)?;
                let masked = map.mask.iter().filter(|&&b| b).count() as f64 / map.mask.len().max(1) as f64;
                let file = match image {
                    Some((h, w)) if !map.zero_std => {
                        let name = format!("m{k}_{bname}_{c}.pgm");
                        fs::write(maps.join(&name), to_pgm(map.difference.as_slice(), h, w)?)?;
                        name
                    }
                    _ => String::new(),
                };
                csv.row([k.to_string(), bname.to_string(), c.to_string(), fmt(std), fmt(masked), file])?;
            }
        }
    }
    csv.finish()
}
