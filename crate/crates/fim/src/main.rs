//! Command-line interface of the FIM channel-estimation workbench.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fim::bench::{
    self, generate_dataset, read_dataset, to_train_samples, write_output, ExperimentConfig,
    ModelHandle, ModelSet, Split,
};
use fim::fno::checkpoint::save_checkpoint;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fim",
    about = "Channel-estimation workbench for flexible intelligent metasurfaces",
    version
)]
struct Cli {
    /// JSON experiment configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (0 = all cores; ignored without the parallel feature).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file of supervised records.
    GenData {
        /// train | val | test
        #[arg(long, default_value = "train")]
        split: String,
        /// Record count (defaults to the configured split size).
        #[arg(long)]
        count: Option<usize>,
        /// Fixed SNR in dB (required for the test split).
        #[arg(long)]
        snr: Option<f64>,
        /// Output file (defaults to <out>/<split>.ds).
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Train the H-FNO estimator and write a checkpoint.
    Train {
        /// Pre-generated training dataset (generated in memory if omitted).
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Pre-generated validation dataset.
        #[arg(long)]
        val_data: Option<PathBuf>,
        /// Checkpoint path (defaults to <out>/model.ckpt).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Monte Carlo NMSE benchmark over the configured SNRs and pilot counts.
    Bench {
        /// Checkpoint for the H-FNO estimator (overrides the config path).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Zero-shot and fine-tuned transfer across array sizes and bounds.
    Generalize {
        #[arg(long)]
        model: PathBuf,
    },
    /// Export spectral-weight magnitudes and feature activations.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
    /// Mutual coherence of the pilot designs.
    Coherence,
    /// Per-element channel-gain tracking curves (truth vs H-FNO vs OMP).
    Curves {
        #[arg(long)]
        model: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

#[cfg(feature = "parallel")]
fn init_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building the thread pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_threads: usize) -> Result<()> {
    Ok(())
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads(cli.threads)?;
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    match &cli.command {
        Command::GenData { split, count, snr, file } => {
            let split: Split = split.parse()?;
            let count = count.unwrap_or(match split {
                Split::Train => cfg.training.n_train,
                Split::Val => cfg.training.n_val,
                Split::Test => cfg.trials,
            });
            let path = file
                .clone()
                .unwrap_or_else(|| cli.out.join(format!("{}.ds", split_name(split))));
            let header = generate_dataset(&cfg, split, count, cfg.seed, *snr, &path)?;
            println!(
                "wrote {count} records ({} bytes each) to {}",
                header.record_bytes,
                path.display()
            );
        }
        Command::Train { train_data, val_data, model_out } => {
            let mut cfg = cfg.clone();
            cfg.training.verbose = true;
            let train_set = match train_data {
                Some(p) => {
                    let (_, records) = read_dataset(p)?;
                    Some(to_train_samples(&records)?)
                }
                None => None,
            };
            let val_set = match val_data {
                Some(p) => {
                    let (_, records) = read_dataset(p)?;
                    Some(to_train_samples(&records)?)
                }
                None => None,
            };
            let started = std::time::Instant::now();
            let outcome = bench::train_from_config(&cfg, train_set, val_set)?;
            let elapsed = started.elapsed().as_secs_f64();
            let path = model_out.clone().unwrap_or_else(|| cli.out.join("model.ckpt"));
            save_checkpoint(&path, &outcome.params, &outcome.fno_cfg)?;
            let log_path = cli.out.join("training_log.json");
            std::fs::write(&log_path, serde_json::to_string_pretty(&outcome.log)?)?;
            std::fs::write(cli.out.join("train.config.json"), cfg.to_json_pretty())?;
            let best = outcome
                .log
                .epochs
                .iter()
                .map(|e| e.val_nmse)
                .fold(outcome.log.initial_val_nmse, f64::min);
            println!(
                "trained {} epochs in {elapsed:.1}s, best val NMSE {:.3} dB, checkpoint {}",
                outcome.log.epochs.len(),
                10.0 * best.log10(),
                path.display()
            );
        }
        Command::Bench { model } => {
            let mut cfg = cfg.clone();
            if let Some(path) = model {
                cfg.model_path = Some(path.display().to_string());
            }
            let models = ModelSet::from_config(&cfg)?;
            let report = bench::run_benchmark(&cfg, &models)?;
            let path = cli.out.join("bench.csv");
            write_output(&path, &report.to_csv(), &cfg)?;
            println!("{}", report.to_csv().trim_end());
            println!("wrote {}", path.display());
        }
        Command::Generalize { model } => {
            let handle = ModelHandle::load(model)?;
            let rows = bench::run_generalization(&cfg, &handle)?;
            let csv = bench::generalization_csv(&rows);
            let path = cli.out.join("generalization.csv");
            write_output(&path, &csv, &cfg)?;
            println!("{}", csv.trim_end());
            println!("wrote {}", path.display());
        }
        Command::Inspect { model } => {
            let handle = ModelHandle::load(model)?;
            let (spectral, activations) = bench::run_inspect(&cfg, &handle)?;
            let spath = cli.out.join("spectral_weights.csv");
            write_output(&spath, &bench::spectral_csv(&spectral), &cfg)?;
            let apath = cli.out.join("activations.csv");
            write_output(&apath, &bench::activation_csv(&activations), &cfg)?;
            println!("wrote {} and {}", spath.display(), apath.display());
        }
        Command::Coherence => {
            let rows = bench::run_coherence(&cfg)?;
            let csv = bench::coherence_csv(&rows);
            let path = cli.out.join("coherence.csv");
            write_output(&path, &csv, &cfg)?;
            println!("{}", csv.trim_end());
            println!("wrote {}", path.display());
        }
        Command::Curves { model } => {
            let handle = ModelHandle::load(model)?;
            let rows = bench::run_curves(&cfg, &handle)?;
            let path = cli.out.join("gain_curves.csv");
            write_output(&path, &bench::gain_curve_csv(&rows), &cfg)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
    }
    Ok(())
}
