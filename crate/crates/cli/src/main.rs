//! Command-line driver: dataset generation, classifier training, agent
//! training, threshold sweeps, and reporting.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fearcond_core::dataset;
use fearcond_core::harness::{self, ConfigMap, ExperimentConfig};
use fearcond_core::numcore::ParamStore;
use fearcond_core::smann::{evaluate, train, Smann, StimuliMann, TrainOpts};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fearcond", about = "Fear-conditioned intrinsic rewards on a sidewalk POMDP", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Config file of flat dotted keys (key = value per line).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Inline overrides: --key=value (e.g. --fear.threshold=0.25).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::from_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => ConfigMap::new(),
        };
        for o in &self.overrides {
            map.apply_override(o).with_context(|| format!("override {o:?}"))?;
        }
        Ok(ExperimentConfig::from_map(&map)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the behavior and stimuli datasets.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory for the dataset files (overrides config paths).
        #[arg(long)]
        dataset_out: Option<PathBuf>,
    },
    /// Train the behavior-window danger classifier.
    TrainSmann {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the single-frame stimuli baseline classifier.
    TrainMann {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the PPO agent under the configured fear mode.
    TrainAgent {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the behavior mode across thresholds and seeds.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated thresholds.
        #[arg(long, default_value = "0.25,0.60,0.95")]
        thresholds: String,
    },
    /// Summarize completed runs into a table.
    Report {
        /// Directory containing run directories (defaults to the output root).
        #[arg(long)]
        dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn write_training_log(path: &std::path::Path, log: &[fearcond_core::smann::EpochStats]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "epoch,mean_loss,train_accuracy")?;
    for e in log {
        writeln!(f, "{},{},{}", e.epoch, e.mean_loss, e.accuracy)?;
    }
    f.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { cfg, dataset_out } => {
            let mut cfg = cfg.build()?;
            if let Some(dir) = dataset_out {
                cfg.behavior_dataset = dir.join("behavior.fcds");
                cfg.stimuli_dataset = dir.join("stimuli.fcds");
            }
            let (behavior, stimuli) = dataset::build_datasets(&cfg.env, cfg.dataset_seed)?;
            dataset::save_behavior(&behavior, &cfg.behavior_dataset)?;
            dataset::save_stimuli(&stimuli, &cfg.stimuli_dataset)?;
            println!(
                "wrote {} behavior items to {}",
                behavior.items.len(),
                cfg.behavior_dataset.display()
            );
            println!(
                "wrote {} stimuli items to {}",
                stimuli.items.len(),
                cfg.stimuli_dataset.display()
            );
        }
        Command::TrainSmann { cfg } => {
            let cfg = cfg.build()?;
            let ds = dataset::load_behavior(&cfg.behavior_dataset, &cfg.env)
                .with_context(|| "loading behavior dataset (run gen-data first)")?;
            let mut store = ParamStore::new();
            let smann = Smann::new(&mut store, cfg.env.obs_shape(), cfg.dataset_seed);
            let opts = TrainOpts { shuffle_seed: cfg.dataset_seed, ..cfg.smann_train.clone() };
            println!(
                "training behavior classifier: {} items, {} epochs, batch {}, lr {}",
                ds.items.len(),
                opts.epochs,
                opts.batch_size,
                opts.lr
            );
            let (log, state) = train(&smann, &mut store, &ds.items, &opts)?;
            let (acc, loss, _) = evaluate(&smann, &store, &ds.items, &state.rows)?;
            smann.save(&store, &state, &cfg.smann_checkpoint)?;
            let log_path = cfg.smann_checkpoint.with_extension("train.csv");
            write_training_log(&log_path, &log)?;
            println!(
                "final train accuracy {acc:.3}, mean loss {loss:.4}; checkpoint {}",
                cfg.smann_checkpoint.display()
            );
        }
        Command::TrainMann { cfg } => {
            let cfg = cfg.build()?;
            let ds = dataset::load_stimuli(&cfg.stimuli_dataset, &cfg.env)
                .with_context(|| "loading stimuli dataset (run gen-data first)")?;
            let mut store = ParamStore::new();
            let mann = StimuliMann::new(&mut store, cfg.env.obs_shape(), cfg.dataset_seed);
            let opts = TrainOpts {
                epochs: cfg.mann_epochs,
                shuffle_seed: cfg.dataset_seed,
                ..cfg.smann_train.clone()
            };
            println!(
                "training stimuli classifier: {} items, {} epochs, batch {}, lr {}",
                ds.items.len(),
                opts.epochs,
                opts.batch_size,
                opts.lr
            );
            let (log, state) = train(&mann, &mut store, &ds.items, &opts)?;
            let (acc, loss, _) = evaluate(&mann, &store, &ds.items, &state.rows)?;
            mann.save(&store, &state, &cfg.mann_checkpoint)?;
            let log_path = cfg.mann_checkpoint.with_extension("train.csv");
            write_training_log(&log_path, &log)?;
            println!(
                "final train accuracy {acc:.3}, mean loss {loss:.4}; checkpoint {}",
                cfg.mann_checkpoint.display()
            );
        }
        Command::TrainAgent { cfg } => {
            let cfg = cfg.build()?;
            println!(
                "running {} for {} episodes x {} seeds",
                cfg.run_name(),
                cfg.episodes,
                cfg.seeds.len()
            );
            let metrics = harness::run_experiment(&cfg)?;
            for m in &metrics {
                println!(
                    "seed {}: mean length {:.1}, mean ext {:.4}, mean int {:.3}, goals {}",
                    m.seed,
                    m.aggregates.mean_length,
                    m.aggregates.mean_ext,
                    m.aggregates.mean_int,
                    m.aggregates.goal_episodes
                );
            }
            println!("artifacts in {}", cfg.run_dir().display());
        }
        Command::Sweep { cfg, thresholds } => {
            let cfg = cfg.build()?;
            let taus: Vec<f32> = thresholds
                .split(',')
                .map(|s| s.trim().parse().with_context(|| format!("threshold {s:?}")))
                .collect::<Result<_>>()?;
            let rows = harness::sweep(&cfg, &taus)?;
            println!(
                "{:<10} {:>18} {:>18} {:>18} {:>9} {:>6}",
                "threshold", "episode length", "ext reward", "int reward", "max ext", "goals"
            );
            for r in rows {
                println!(
                    "{:<10.2} {:>18} {:>18} {:>18} {:>9.3} {:>6}",
                    r.threshold,
                    format!("{:.2}+-{:.2}", r.mean_length, r.std_length),
                    format!("{:.4}+-{:.4}", r.mean_ext, r.std_ext),
                    format!("{:.3}+-{:.3}", r.mean_int, r.std_int),
                    r.max_ext,
                    r.goal_episodes
                );
            }
            println!("summary in {}", cfg.out_dir.join("sweep").display());
        }
        Command::Report { dir, cfg } => {
            let cfg = cfg.build()?;
            let dir = dir.unwrap_or(cfg.out_dir);
            print!("{}", harness::report(&dir)?);
        }
    }
    Ok(())
}
