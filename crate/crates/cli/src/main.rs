use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use deepjive::network::Variant;
use deepjive_cli::commands;
use deepjive_cli::{Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "deepjive", version, about = "Joint and individual decomposition of paired data with autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config; keys override the preset of its `experiment`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset to start from when no config file is given.
    #[arg(long, global = true)]
    experiment: Option<Experiment>,
    /// Data and training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    ortho: Option<Switch>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset and its ground truth.
    GenData,
    /// Train a network on the generated dataset.
    Train,
    /// Choose block ranks and the joint rank.
    RankSelect {
        /// Overrides rank.confidence.
        #[arg(long)]
        confidence: Option<f64>,
    },
    /// Score a trained network.
    Evaluate {
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the effective config with every default filled in.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: deepjive::Error| e.to_string())
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.experiment) {
        (Some(path), exp) => {
            let cfg = ExperimentConfig::from_file(path)?;
            if let Some(e) = exp.filter(|&e| e != cfg.experiment) {
                bail!("--experiment {e:?} contradicts the config's experiment {:?}", cfg.experiment);
            }
            cfg
        }
        (None, exp) => ExperimentConfig::preset(exp.unwrap_or(Experiment::Synthetic1d)),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(v) = cli.variant {
        cfg.network.variant = v;
    }
    if let Some(o) = cli.ortho {
        cfg.train.ortho = matches!(o, Switch::On);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Command::RankSelect { confidence: Some(c) } = cli.command {
        cfg.rank.confidence = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli)?;
    match &cli.command {
        Command::GenData => {
            let path = commands::gen_data(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Train => {
            let s = commands::train_cmd(&cfg)?;
            println!("final L_arch {:.6e}, joint identity error {:.6e}", s.final_l_arch, s.final_identity_error);
        }
        Command::RankSelect { .. } => {
            let s = commands::rank_select(&cfg)?;
            let ranks: Vec<String> = s.blocks.iter().map(|b| b.rank.to_string()).collect();
            println!("block ranks [{}], joint rank {}", ranks.join(", "), s.joint.rank);
        }
        Command::Evaluate { checkpoint } => {
            let s = commands::evaluate(&cfg, checkpoint.as_deref())?;
            for m in &s.metrics {
                println!("{:<16} accuracy {:.4}", m.group.tag(), m.accuracy);
            }
            if let Some(d) = s.max_abs_dependence {
                println!("max |corr(joint, individual)| {d:.4}");
            }
        }
        Command::ShowConfig => println!("{}", serde_json::to_string_pretty(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
