//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid configuration or failed stage,
//! 2 usage error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::Scenario;
use crate::pipeline::{self, RunPaths};

#[derive(Debug, Parser)]
#[command(
    name = "fednas",
    version,
    about = "Federated architecture search and fair training for unrolled MRI reconstruction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and store the training clients' datasets.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Run the federated architecture search.
    Search {
        #[command(flatten)]
        common: Common,
    },
    /// Train a searched architecture with fairness-weighted aggregation.
    Train {
        #[command(flatten)]
        common: Common,
        /// Architecture JSON or a checkpoint that carries one.
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the distribution-shift scenarios.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/train/model.gamr`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Architecture to use instead of the one stored in the checkpoint.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Comma-separated subset of scenarios.
        #[arg(long, value_delimiter = ',')]
        scenario: Vec<Scenario>,
    },
    /// Summarize evaluation metrics per scenario.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    pipeline::write_config(&cfg)?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = resolve(&common)?;
            for p in pipeline::gen_data(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Search { common } => {
            let cfg = resolve(&common)?;
            let (arch, reports) = pipeline::run_search(&cfg)?;
            for r in &reports {
                eprintln!("search round {:>3}: val loss {:.4e}", r.round, r.mean_val_loss);
            }
            let ops: Vec<&str> = arch.chosen.iter().map(|o| o.name()).collect();
            println!("architecture: {}", ops.join(" "));
            println!("wrote {}", RunPaths::new(&cfg.out_dir).search_arch().display());
        }
        Command::Train { common, arch } => {
            let arch = arch.ok_or_else(|| Error::Validation("train requires --arch <file>".into()))?;
            let cfg = resolve(&common)?;
            let arch = pipeline::load_arch(&arch)?;
            let (_, reports) = pipeline::run_train(&cfg, &arch)?;
            for r in &reports {
                eprintln!(
                    "train round {:>3}: global {:.4e} local {:.4e}",
                    r.round, r.mean_global_loss, r.mean_local_loss
                );
            }
            println!("wrote {}", RunPaths::new(&cfg.out_dir).model().display());
        }
        Command::Eval {
            common,
            checkpoint,
            arch,
            scenario,
        } => {
            let cfg = resolve(&common)?;
            let arch = arch.map(|p| pipeline::load_arch(&p)).transpose()?;
            let ckpt = checkpoint.unwrap_or_else(|| RunPaths::new(&cfg.out_dir).model());
            let scenarios = if scenario.is_empty() {
                cfg.scenarios.clone()
            } else {
                scenario
            };
            for r in pipeline::run_eval(&cfg, &ckpt, arch.as_ref(), &scenarios)? {
                println!(
                    "{:<20} client {:>3}: PSNR {:.2} dB  SSIM {:.4}  (zero-filled {:.2} dB)",
                    r.scenario.name(),
                    r.client_id,
                    r.psnr,
                    r.ssim,
                    r.zf_psnr
                );
            }
        }
        Command::Report { common } => {
            let cfg = resolve(&common)?;
            print!("{}", pipeline::run_report(&cfg)?);
        }
    }
    Ok(())
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_command(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
