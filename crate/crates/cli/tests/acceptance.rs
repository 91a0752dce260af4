//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stdout (bypassing the test harness capture) before asserting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use deepjive::analyze::{
    fit_linear_classifier, joint_identity_error, joint_individual_dependence, pearson, variance, ClassifierConfig, FeatureGroup,
};
use deepjive::datagen::{gen_1d, gen_offset_1d, Modality};
use deepjive::jive::{jive_fit, JiveConfig};
use deepjive::linalg::{center_rows, column_basis, pca, principal_angles};
use deepjive::network::*;
use deepjive::rank::{select_joint_rank, PlainAutoencoder};
use deepjive_cli::commands::{baseline_features, build_dataset, centered_correlation, latent_features};
use deepjive_cli::{Experiment, ExperimentConfig};
use deepjive_tensor::Tensor;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance {id:>2} {verdict} {name} ({:.1}s): {detail}\n", elapsed.as_secs_f64());
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

// the runtime limits assume the whole machine, so the checks take turns
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------- 1

fn tiny_network(seed: u64) -> (DeepJiveNetwork, Vec<Tensor>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant = Variant::ALL[(seed % 3) as usize];
    let conv = (seed / 3) % 2 == 1;
    let b = 3;
    let (shapes, layers): (Vec<Vec<usize>>, Vec<Vec<LayerSpec>>) = if conv {
        (
            vec![vec![1, 5, 5], vec![1, 4, 4]],
            vec![vec![LayerSpec::conv(2, 3, 1)], vec![LayerSpec::conv(rng.gen_range(1..3), 2, 1)]],
        )
    } else {
        (vec![vec![4], vec![3]], vec![vec![LayerSpec::dense(rng.gen_range(2..4))], vec![]])
    };
    let spec = NetworkSpec {
        input_shapes: shapes.clone(),
        layers,
        joint_width: rng.gen_range(1..3),
        individual_widths: vec![rng.gen_range(1..3), rng.gen_range(1..3)],
        variant,
        shared_trunk: conv && rng.gen_bool(0.5),
    };
    let mut net = build_network(spec, seed).unwrap();
    // zero biases behind dead ReLU rows put pre-activations exactly on the kink,
    // where central differences and the subgradient disagree
    for id in net.store.ids().collect::<Vec<_>>() {
        if net.store.name(id).ends_with(".bias") {
            for v in net.store.value_mut(id).data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    let batch = shapes
        .iter()
        .map(|s| {
            let mut shape = vec![b];
            shape.extend(s);
            let len = shape.iter().product();
            Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    (net, batch)
}

/// Worst relative difference between the analytic gradient under `mode` and
/// central differences of `objective`.
fn worst_fd(net: &mut DeepJiveNetwork, batch: &[Tensor], mode: OrthoMode, literal: bool) -> f64 {
    let gamma = 0.7;
    let snap = net.ortho_snapshot(batch, mode).unwrap();
    net.total_loss_gradients(batch, gamma, Some(&snap)).unwrap();
    let eval = |net: &DeepJiveNetwork| {
        if literal {
            net.total_loss(batch, gamma, true).unwrap()
        } else {
            net.anchored_total_loss(batch, gamma, &snap).unwrap()
        }
    };
    let mut worst: f64 = 0.0;
    for id in net.main_params() {
        let grad = net.store.grad(id).clone();
        for i in 0..grad.len() {
            let h = 1e-5;
            let orig = net.store.value(id).data()[i];
            net.store.value_mut(id).data_mut()[i] = orig + h;
            let up = eval(net);
            net.store.value_mut(id).data_mut()[i] = orig - h;
            let down = eval(net);
            net.store.value_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grad.data()[i];
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6));
        }
    }
    worst
}

#[test]
fn c01_gradients_match_finite_differences() {
    let _serial = serial();
    let start = Instant::now();
    let modes = [
        OrthoMode::new(OrthoFlow::Individual, true),
        OrthoMode::new(OrthoFlow::Individual, false),
        OrthoMode::new(OrthoFlow::Joint, true),
        OrthoMode::new(OrthoFlow::Both, true),
        OrthoMode::new(OrthoFlow::Both, false),
    ];
    let mut worst: f64 = 0.0;
    let mut failing = Vec::new();
    for seed in 0..100u64 {
        let (mut net, batch) = tiny_network(seed);
        // the literal objective: the penalty's gradient reaches the joint encoders only
        let lit = worst_fd(&mut net, &batch, OrthoMode::new(OrthoFlow::Joint, false), true);
        let anchored = worst_fd(&mut net, &batch, modes[seed as usize % modes.len()], false);
        let w = lit.max(anchored);
        if w >= 1e-4 {
            failing.push(seed);
        }
        worst = worst.max(w);
    }
    let elapsed = start.elapsed();
    let pass = failing.is_empty() && elapsed < Duration::from_secs(120);
    report(1, "gradient correctness", pass, elapsed, &format!("worst relative error {worst:.2e} over 100 networks, failing seeds {failing:?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_linear_autoencoder_spans_the_pca_subspace() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (p, n, r) = (20, 200, 3);
    let scores = uniform(r, n, &mut rng) * 2.0;
    let mut x = uniform(p, r, &mut rng) * scores;
    let means = uniform(p, 1, &mut rng);
    for mut col in x.column_iter_mut() {
        col += means.column(0);
    }
    let block = Modality::flat(x.clone());
    let all: Vec<usize> = (0..n).collect();
    let mut ae = PlainAutoencoder::new(&[p], &[], r, 2).unwrap();
    let cfg = TrainConfig { lr: 1e-2, batch_size: 50, epochs: 1500, seed: 2, ortho: false, ..TrainConfig::default() };
    ae.fit(&block, &all, &cfg).unwrap();
    let recon = center_rows(&ae.reconstruct(&block, &all).unwrap()).0;
    let angles = principal_angles(&column_basis(&recon, r).unwrap(), &pca(&x, r).unwrap().loadings).unwrap();
    let max = angles.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = max < 5.0 && elapsed < Duration::from_secs(60);
    report(2, "PCA-subspace equivalence", pass, elapsed, &format!("principal angles {angles:.3?} degrees"));
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_linear_network_agrees_with_classical_jive() {
    let _serial = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (p, n) = (50, 200);
    let centered = |m: DMatrix<f64>| center_rows(&m).0;
    let lam_j = centered(uniform(1, n, &mut rng));
    let mut blocks = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..2 {
        // individual scores orthogonal to the joint scores and to the constant
        let mut s = centered(uniform(1, n, &mut rng));
        let proj = s.dot(&lam_j) / lam_j.norm_squared();
        s -= &lam_j * proj;
        let j = uniform(p, 1, &mut rng) * &lam_j;
        blocks.push(&j + uniform(p, 1, &mut rng) * &s);
        truth.push(j);
    }
    let jive = jive_fit(&blocks, &JiveConfig::new(1, vec![1, 1])).unwrap();

    let ds = deepjive::datagen::MultimodalDataset::new(
        blocks.iter().cloned().map(Modality::flat).collect(),
        None,
        (0..n).collect(),
        Vec::new(),
        3,
    )
    .unwrap();
    let mut net = build_network(NetworkSpec::linear(vec![vec![p]; 2], 1, vec![1, 1], Variant::Explicit), 3).unwrap();
    let base = ExperimentConfig::preset(Experiment::Synthetic1d).train;
    let cfg = TrainConfig { epochs: 1500, batch_size: 50, seed: 3, ..base };
    train(&mut net, &ds, &cfg).unwrap();
    let all: Vec<usize> = (0..n).collect();
    let out = net.forward_dataset(&ds, &all).unwrap();

    let mut worst: f64 = 1.0;
    let mut detail = String::new();
    for k in 0..2 {
        let cj = pearson(jive.blocks[k].joint.as_slice(), truth[k].as_slice()).unwrap_or(0.0);
        let cn = pearson(out.joint_recon[k].as_slice(), truth[k].as_slice()).unwrap_or(0.0);
        let cx = pearson(out.joint_recon[k].as_slice(), jive.blocks[k].joint.as_slice()).unwrap_or(0.0);
        worst = worst.min(cj).min(cn).min(cx);
        detail += &format!("block {k}: jive {cj:.5} net {cn:.5} agreement {cx:.5}; ");
    }
    let elapsed = start.elapsed();
    let pass = worst > 0.99 && elapsed < Duration::from_secs(300);
    report(3, "linear oracle agreement", pass, elapsed, &detail);
    assert!(pass);
}

// ---------------------------------------------------------------- 4 and 5

struct OneDRun {
    joint_corr: f64,
    dependence: f64,
    identity_ratio: f64,
    merged_zero: bool,
}

fn run_1d(variant: Variant, seed: u64, ortho: bool) -> OneDRun {
    let (ds, truth) = gen_1d(100, 100, seed).unwrap();
    let base = ExperimentConfig::preset(Experiment::Synthetic1d).train;
    let cfg = TrainConfig { seed, ortho, gamma: if ortho { base.gamma } else { 0.0 }, ..base };
    let mut net = build_network(NetworkSpec::synthetic_1d(variant), seed).unwrap();
    let history = train(&mut net, &ds, &cfg).unwrap();
    let all: Vec<usize> = (0..ds.n()).collect();
    let out = net.forward_dataset(&ds, &all).unwrap();
    let mut joint_corr: f64 = 1.0;
    let mut dependence: f64 = 0.0;
    for k in 0..2 {
        joint_corr = joint_corr.min(pearson(out.joint_recon[k].as_slice(), truth.joint[k].as_slice()).unwrap_or(0.0));
        let d = joint_individual_dependence(out.latents.joint_for(k), &out.latents.individual[k]).unwrap();
        dependence = dependence.max(d.max_abs_correlation.unwrap_or(0.0));
    }
    let ie = joint_identity_error(&out.latents).unwrap();
    OneDRun {
        joint_corr,
        dependence,
        identity_ratio: ie.value / variance(&out.latents.joint[0]),
        merged_zero: ie.merged && ie.value == 0.0 && history.iter().all(|r| r.joint_identity_error == 0.0),
    }
}

#[test]
fn c04_c05_one_dimensional_experiment() {
    let _serial = serial();
    let start = Instant::now();
    let mut pass4 = true;
    let mut pass5 = true;
    let mut detail4 = String::new();
    let mut detail5 = String::new();
    for variant in Variant::ALL {
        let mut successes = 0;
        let mut worst_ratio: f64 = 0.0;
        let mut merged_ok = true;
        let mut cells = Vec::new();
        for seed in 0..5 {
            let on = run_1d(variant, seed, true);
            let off = run_1d(variant, seed, false);
            if on.joint_corr > 0.9 && on.dependence < off.dependence {
                successes += 1;
            }
            cells.push(format!("{:.3}/{:.2}<{:.2}", on.joint_corr, on.dependence, off.dependence));
            worst_ratio = worst_ratio.max(on.identity_ratio);
            merged_ok &= on.merged_zero;
        }
        pass4 &= successes >= 4;
        detail4 += &format!("{variant} {successes}/5 [{}]; ", cells.join(" "));
        if variant == Variant::Merged {
            pass5 &= merged_ok;
            detail5 += &format!("merged exactly zero: {merged_ok}; ");
        } else {
            pass5 &= worst_ratio < 0.05;
            detail5 += &format!("{variant} worst ratio {worst_ratio:.2e}; ");
        }
    }
    let elapsed = start.elapsed();
    pass4 &= elapsed < Duration::from_secs(15 * 60);
    report(4, "1D experiment (corr / dependence on<off)", pass4, elapsed, &detail4);
    report(5, "identity constraint", pass5, elapsed, &detail5);
    assert!(pass4 && pass5);
}

// ---------------------------------------------------------------- 6

#[test]
fn c06_offset_data_is_identical_while_truth_differs() {
    let _serial = serial();
    let start = Instant::now();
    let mut pass = true;
    let (base, base_truth) = gen_offset_1d(100, 100, 0.0, 6).unwrap();
    for g in [0.5, -1.25, 3.0] {
        let (ds, truth) = gen_offset_1d(100, 100, g, 6).unwrap();
        let same_x = ds.blocks.iter().zip(&base.blocks).all(|(a, b)| {
            a.data.as_slice().iter().zip(b.data.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        let sums_agree = (0..2).all(|k| ((&truth.joint[k] + &truth.individual[k]) - (&base_truth.joint[k] + &base_truth.individual[k])).amax() < 1e-12);
        pass &= same_x && sums_agree && truth.joint[0] != base_truth.joint[0] && truth.alpha != base_truth.alpha;
    }
    report(6, "identifiability demonstration", pass, start.elapsed(), "X bit-identical across offsets 0, 0.5, -1.25, 3");
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn c07_joint_rank_selection() {
    let _serial = serial();
    let start = Instant::now();
    let (n, rows) = (200, 4);
    let mut zero = 0;
    let mut found = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + trial);
        let independent: Vec<DMatrix<f64>> = (0..2).map(|_| uniform(rows, n, &mut rng)).collect();
        if select_joint_rank(&independent, 100, 0.95, trial).unwrap().rank == 0 {
            zero += 1;
        }
        let shared = uniform(2, n, &mut rng);
        let planted: Vec<DMatrix<f64>> = (0..2)
            .map(|_| {
                let mut f = uniform(rows, n, &mut rng);
                f.rows_mut(0, 2).copy_from(&shared);
                uniform(rows, rows, &mut rng) * f
            })
            .collect();
        if select_joint_rank(&planted, 100, 0.95, trial).unwrap().rank >= 2 {
            found += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = zero >= 90 && found >= 90 && elapsed < Duration::from_secs(300);
    report(7, "rank selection", pass, elapsed, &format!("independent -> 0 in {zero}/100, two shared -> >=2 in {found}/100"));
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn c08_overlaid_digits_separate() {
    let _serial = serial();
    let start = Instant::now();
    let mut pass = true;
    let mut detail = String::new();
    for (conv, epochs) in [(0usize, 120usize), (2, 30)] {
        let mut cfg = ExperimentConfig::preset(Experiment::MnistOverlaid);
        cfg.data.mnist_dir = Some(mnist_dir());
        cfg.network.conv_layers = conv;
        cfg.train.epochs = epochs;
        let (ds, truth) = build_dataset(&cfg).unwrap();
        let truth = truth.unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (8000, 1000));
        let mut net = build_network(cfg.network_spec().unwrap(), cfg.train.seed).unwrap();
        train(&mut net, &ds, &cfg.train).unwrap();
        let out = net.forward_dataset(&ds, &ds.test).unwrap();
        for k in 0..2 {
            let tj = truth.joint[k].select_columns(&ds.test);
            let ts = truth.individual[k].select_columns(&ds.test);
            let c = |a: &DMatrix<f64>, b: &DMatrix<f64>| centered_correlation(a, b).unwrap_or(0.0);
            let (jj, js) = (c(&out.joint_recon[k], &tj), c(&out.joint_recon[k], &ts));
            let (sj, ss) = (c(&out.individual_recon[k], &tj), c(&out.individual_recon[k], &ts));
            pass &= jj > js && ss > sj;
            detail += &format!("conv {conv} block {k}: J~J {jj:.3} J~S {js:.3} S~S {ss:.3} S~J {sj:.3}; ");
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30 * 60);
    report(8, "overlaid separation", pass, elapsed, &detail);
    assert!(pass);
}

// ---------------------------------------------------------------- 9 and 10

struct PairedRun {
    joint_accuracy: f64,
    all_accuracy: f64,
    baseline_accuracy: Option<f64>,
}

fn run_paired(conv: usize, seed: u64, with_baseline: bool) -> PairedRun {
    let mut cfg = ExperimentConfig::preset(Experiment::MnistPaired);
    cfg.data.mnist_dir = Some(mnist_dir());
    cfg.network.conv_layers = conv;
    cfg.train.seed = seed;
    let (ds, _) = build_dataset(&cfg).unwrap();
    assert_eq!((ds.train.len(), ds.test.len()), (8000, 1000));
    let spec = cfg.network_spec().unwrap();
    let mut net = build_network(spec.clone(), seed).unwrap();
    train(&mut net, &ds, &cfg.train).unwrap();
    let idx: Vec<usize> = ds.train.iter().chain(&ds.test).copied().collect();
    let labels: Vec<u32> = idx.iter().map(|&i| ds.labels.as_ref().unwrap()[i]).collect();
    let tr: Vec<usize> = (0..ds.train.len()).collect();
    let te: Vec<usize> = (ds.train.len()..idx.len()).collect();
    let cc = ClassifierConfig::default();
    let out = net.forward_dataset(&ds, &idx).unwrap();
    let mut acc = BTreeMap::new();
    for (g, f) in latent_features(&out.latents) {
        acc.insert(g.tag(), fit_linear_classifier(g, &f, &labels, &tr, &te, &cc).unwrap().accuracy);
    }
    let baseline_accuracy = with_baseline.then(|| {
        let f = baseline_features(&cfg, &spec, &ds, &idx).unwrap();
        fit_linear_classifier(FeatureGroup::Baseline, &f, &labels, &tr, &te, &cc).unwrap().accuracy
    });
    PairedRun {
        joint_accuracy: acc["joint-only"],
        all_accuracy: acc["all"],
        baseline_accuracy,
    }
}

#[test]
fn c09_c10_paired_digits() {
    let _serial = serial();
    let start = Instant::now();
    let mut wins = 0;
    let mut detail9 = String::new();
    let mut detail10 = String::new();
    let mut pass10 = true;
    for seed in 0..3u64 {
        let shallow = run_paired(0, seed, false);
        let deep = run_paired(2, seed, seed == 0);
        let gain = deep.joint_accuracy - shallow.joint_accuracy;
        if gain >= 0.05 {
            wins += 1;
        }
        detail9 += &format!("seed {seed}: {:.3} -> {:.3} ({:+.1} pp); ", shallow.joint_accuracy, deep.joint_accuracy, 100.0 * gain);
        if let Some(b) = deep.baseline_accuracy {
            pass10 = deep.all_accuracy >= b - 0.01;
            detail10 = format!(
                "all DeepJIVE latents {:.3} vs separate autoencoders {b:.3} ({:+.1} pp)",
                deep.all_accuracy,
                100.0 * (deep.all_accuracy - b)
            );
        }
    }
    let elapsed = start.elapsed();
    let pass9 = wins >= 2 && elapsed < Duration::from_secs(45 * 60);
    report(9, "paired trend with depth", pass9, elapsed, &detail9);
    report(10, "disentanglement non-inferiority", pass10, elapsed, &detail10);
    assert!(pass9 && pass10);
}

// ---------------------------------------------------------------- 11

fn csv_snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn c11_cli_outputs_are_deterministic() {
    let _serial = serial();
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_deepjive");
    let tmp = tempfile::tempdir().unwrap();
    let configs = [
        serde_json::json!({"experiment": "synthetic-1d", "train": {"epochs": 200}, "rank": {"epochs": 200}, "evaluate": {"maps": true}}),
        serde_json::json!({
            "experiment": "mnist-paired",
            "data": {"n": 600, "n_train": 500, "mnist_dir": mnist_dir()},
            "network": {"conv_layers": 1},
            "train": {"epochs": 2},
            "rank": {"epochs": 2, "r_max": 8},
            "evaluate": {"maps": true}
        }),
        serde_json::json!({
            "experiment": "mnist-overlaid",
            "data": {"n": 500, "n_train": 400, "mnist_dir": mnist_dir()},
            "network": {"conv_layers": 0},
            "train": {"epochs": 2},
            "rank": {"epochs": 2, "r_max": 6}
        }),
    ];
    let mut pass = true;
    let mut detail = String::new();
    for (i, mut doc) in configs.into_iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        doc["out"] = serde_json::json!(out);
        let cfg = tmp.path().join(format!("config{i}.json"));
        fs::write(&cfg, doc.to_string()).unwrap();
        let mut runs = Vec::new();
        for _ in 0..2 {
            for cmd in ["gen-data", "train", "rank-select", "evaluate"] {
                let o = Command::new(bin).args([cmd, "--config", cfg.to_str().unwrap()]).output().unwrap();
                assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            }
            runs.push(csv_snapshot(&out));
            fs::remove_dir_all(&out).unwrap();
        }
        let same = runs[0] == runs[1];
        pass &= same && runs[0].len() >= 10;
        detail += &format!("{}: {} CSVs identical={same}; ", doc["experiment"].as_str().unwrap(), runs[0].len());
    }
    report(11, "determinism", pass, start.elapsed(), &detail);
    assert!(pass);
}
