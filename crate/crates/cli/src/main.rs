//! `compbind` command-line driver.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A validation failure: bad flags, config or missing inputs (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(name = "compbind", version, about = "Attribute-binding experiments on a toy text-to-image pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Base seed for every random stream of the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// `key = value` file overriding configuration defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; existing files are never replaced.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

/// Checkpoints of a pretrained encoder and denoiser.
#[derive(Args, Debug, Clone)]
pub struct Models {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub denoiser: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic captioned corpus (`corpus.cbd`, or `clean.cbd`).
    GenData {
        /// Force uncorrupted captions.
        #[arg(long)]
        clean: bool,
    },
    /// Jointly train encoder and denoiser on a corpus.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
    },
    /// Count unintended attention layers for two encoders on held-out prompts.
    AnalyzeAttn {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        against: PathBuf,
        /// Tags of the two encoders, comma separated.
        #[arg(long, default_value = "a,b")]
        tags: String,
    },
    /// Grid-search the attention reweighting values on tuning prompts.
    ReweightSearch {
        #[command(flatten)]
        models: Models,
    },
    /// Optimize the text embedding of one prompt against its clean render.
    OptimizeEmbed {
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        prompt: String,
    },
    /// Train a token-wise projection adapter on a clean corpus.
    TrainClp {
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a windowed projection adapter on a clean corpus.
    TrainWiclp {
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        data: PathBuf,
    },
    /// Sample images for one prompt.
    Sample {
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[command(flatten)]
        variant: VariantArgs,
        /// Timesteps whose cross-attention maps are exported.
        #[arg(long, value_delimiter = ',')]
        record: Vec<usize>,
    },
    /// Score one variant on the held-out prompts.
    Eval {
        #[command(flatten)]
        models: Models,
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Score and FID-proxy across Switch-Off fractions.
    Tradeoff {
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        proj: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1.0")]
        taus: Vec<f64>,
    },
    /// Per-category comparison of baseline and corrected variants.
    Table {
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        clp: PathBuf,
        #[arg(long)]
        wiclp: PathBuf,
        #[arg(long)]
        reweight: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct VariantArgs {
    /// Projection adapter checkpoint.
    #[arg(long)]
    pub proj: Option<PathBuf>,
    /// Switch-Off fraction for the adapter.
    #[arg(long, requires = "proj")]
    pub tau: Option<f64>,
    /// Reweighting parameters from `reweight-search`.
    #[arg(long, conflicts_with = "proj")]
    pub reweight: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
