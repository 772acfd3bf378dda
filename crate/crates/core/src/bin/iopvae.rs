//! Command-line entry points: train, eval, export-latents, check-data.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

use clap::{Args, Parser, Subcommand};
use iopvae::config::RunConfig;
use iopvae::error::Error;
use iopvae::eval::{aggregate_seeds, format_pm, EvalReport, Evaluator};
use iopvae::model::ModelBundle;
use iopvae::trainer::{log_to_csv, train};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "iopvae", about = "VAEs with standard, mixture, and implicit aggregated-posterior priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the prior mode (standard|vamp|implicit).
    #[arg(long)]
    prior: Option<String>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the data root directory.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Override the pseudo-input count for the mixture prior.
    #[arg(long)]
    k_mix: Option<usize>,
    /// Override the epoch budget.
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(p) = &self.prior {
            cfg.prior = p.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(d) = &self.data_root {
            cfg.data_root = Some(d.clone());
        }
        if let Some(k) = self.k_mix {
            cfg.k_mix = k;
        }
        if let Some(m) = self.max_epochs {
            cfg.max_epochs = m;
        }
        cfg.prior_mode()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed; writes checkpoint, log CSV, and manifest.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated seeds for sequential runs (overrides --seed).
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
    },
    /// Evaluate checkpoints: ELBO and importance-sampled log-likelihood.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint path; repeatable.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Glob pattern adding more checkpoints.
        #[arg(long)]
        glob: Option<String>,
        /// Importance samples per point.
        #[arg(long)]
        is_samples: Option<usize>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample one latent per test point and write a CSV scatter export.
    ExportLatents {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Which split to encode (train|valid|test).
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Load the configured dataset and check it against its manifest.
    CheckData {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn exit_code_for(err: &Error) -> ExitCode {
    let usage = matches!(err, Error::Config(_))
        || matches!(err, Error::Data(msg) if msg.contains("missing dataset file"));
    if usage {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn tensor_hash(t: &iopvae::Tensor) -> String {
    let mut bytes = Vec::with_capacity(t.data().len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    sha256_hex(&bytes)
}

fn run_manifest(cfg: &RunConfig, ds: &iopvae::data::Dataset, seed: u64) -> serde_json::Value {
    serde_json::json!({
        "config": cfg,
        "seed": seed,
        "inputs": {
            "train_sha256": tensor_hash(&ds.train),
            "valid_sha256": tensor_hash(&ds.valid),
            "test_sha256": tensor_hash(&ds.test),
        },
    })
}

fn cmd_train(cfg: RunConfig, seeds: Vec<u64>) -> Result<(), Error> {
    let ds = cfg.load_dataset()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    for seed in seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let stem = format!("{}-{}-seed{}", run_cfg.dataset, run_cfg.prior, seed);
        let ckpt = run_cfg.out_dir.join(format!("{stem}.ckpt"));
        let mut tcfg = run_cfg.train_config()?;
        tcfg.checkpoint_path = Some(ckpt.clone());
        let arch = run_cfg.arch(&ds);
        eprintln!("training {stem} ({} epochs max)", tcfg.max_epochs);
        let outcome = train(arch, &tcfg, &ds).map_err(|f| {
            Error::Graph(format!("training {stem} failed: {f}"))
        })?;
        outcome.bundle.save(&ckpt)?;
        std::fs::write(run_cfg.out_dir.join(format!("{stem}-log.csv")), log_to_csv(&outcome.log))?;
        let manifest = run_manifest(&run_cfg, &ds, seed);
        std::fs::write(
            run_cfg.out_dir.join(format!("{stem}-manifest.json")),
            serde_json::to_string_pretty(&manifest).expect("manifest json"),
        )?;
        match (outcome.best_epoch, outcome.best_valid_elbo) {
            (Some(e), Some(v)) => eprintln!("{stem}: best validation ELBO {v:.4} at epoch {e}"),
            _ => eprintln!("{stem}: no epochs run"),
        }
    }
    Ok(())
}

fn check_arch(bundle: &ModelBundle, ds: &iopvae::data::Dataset, path: &Path) -> Result<(), Error> {
    if bundle.arch.input_dim != ds.dim {
        return Err(Error::Checkpoint(format!(
            "{}: checkpoint input dim {} does not match dataset dim {}",
            path.display(),
            bundle.arch.input_dim,
            ds.dim
        )));
    }
    Ok(())
}

fn cmd_eval(
    cfg: RunConfig,
    mut checkpoints: Vec<PathBuf>,
    pattern: Option<String>,
    is_samples: usize,
    out: Option<PathBuf>,
) -> Result<(), Error> {
    if let Some(p) = pattern {
        let matches =
            glob::glob(&p).map_err(|e| Error::Config(format!("bad glob {p:?}: {e}")))?;
        for m in matches {
            checkpoints
                .push(m.map_err(|e| Error::Config(format!("glob {p:?}: {e}")))?);
        }
    }
    checkpoints.sort();
    checkpoints.dedup();
    if checkpoints.is_empty() {
        return Err(Error::Config("no checkpoints given (use --checkpoint or --glob)".into()));
    }
    let ds = cfg.load_dataset()?;
    let mut reports = Vec::new();
    for path in &checkpoints {
        let bundle = ModelBundle::load(path)?;
        check_arch(&bundle, &ds, path)?;
        let ev = Evaluator::new(&bundle)?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let elbo = ev.elbo_batch(&ds.test, cfg.l_samples, &mut rng)?.elbo;
        let ll = ev.is_log_likelihood_mean(&ds.test, is_samples, &mut rng)?;
        reports.push(EvalReport {
            prior: bundle.prior.tag().to_string(),
            seed: cfg.seed,
            elbo,
            is_log_likelihood: ll,
            is_samples,
        });
    }
    let text = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0]).expect("report json")
    } else {
        let summary = aggregate_seeds(&reports)?;
        eprintln!(
            "ELBO {} | IS log-likelihood {}",
            format_pm(summary.elbo_mean, summary.elbo_std),
            format_pm(summary.ll_mean, summary.ll_std)
        );
        serde_json::to_string_pretty(&summary).expect("summary json")
    };
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_export_latents(
    cfg: RunConfig,
    checkpoint: PathBuf,
    out: PathBuf,
    split: String,
) -> Result<(), Error> {
    let ds = cfg.load_dataset()?;
    let bundle = ModelBundle::load(&checkpoint)?;
    check_arch(&bundle, &ds, &checkpoint)?;
    let (x, labels) = match split.as_str() {
        "train" => (&ds.train, ds.train_labels.as_deref()),
        "valid" => (&ds.valid, ds.valid_labels.as_deref()),
        "test" => (&ds.test, ds.test_labels.as_deref()),
        other => {
            return Err(Error::Config(format!(
                "split must be train|valid|test, got {other:?}"
            )))
        }
    };
    if bundle.arch.latent_dim > 2 {
        eprintln!(
            "warning: latent dim {} > 2; exporting only the first two coordinates",
            bundle.arch.latent_dim
        );
    }
    let ev = Evaluator::new(&bundle)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let n = ev.export_latents(x, labels, 2, &out, &mut rng)?;
    eprintln!("wrote {n} rows to {}", out.display());
    Ok(())
}

fn cmd_check_data(cfg: RunConfig) -> Result<(), Error> {
    let ds = cfg.load_dataset()?;
    let report = iopvae::data::manifest_check(&ds);
    if report.is_empty() {
        println!(
            "{}: ok ({} train / {} valid / {} test, dim {})",
            ds.name,
            ds.train.rows(),
            ds.valid.rows(),
            ds.test.rows(),
            ds.dim
        );
        Ok(())
    } else {
        for line in &report {
            eprintln!("{}: {line}", ds.name);
        }
        Err(Error::Data(format!(
            "{} manifest mismatches for {}",
            report.len(),
            ds.name
        )))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed_list } => config.load().and_then(|cfg| {
            let seeds = seed_list.unwrap_or_else(|| vec![cfg.seed]);
            cmd_train(cfg, seeds)
        }),
        Command::Eval { config, checkpoint, glob, is_samples, out } => {
            config.load().and_then(|cfg| {
                let s = is_samples.unwrap_or(cfg.is_samples);
                cmd_eval(cfg, checkpoint, glob, s, out)
            })
        }
        Command::ExportLatents { config, checkpoint, out, split } => config
            .load()
            .and_then(|cfg| cmd_export_latents(cfg, checkpoint, out, split)),
        Command::CheckData { config } => config.load().and_then(cmd_check_data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
