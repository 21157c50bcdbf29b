use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dbksvd::Precision;

/// Batched KSVD dictionary learning.
#[derive(Parser, Debug)]
#[command(name = "dbksvd", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a dictionary from EMB1 sample files
    Train(TrainArgs),
    /// Sparse-code samples with a fixed dictionary
    Encode(EncodeArgs),
    /// Report coherence and reconstruction metrics as CSV
    Eval(EvalArgs),
    /// Write a planted sparse-coding problem
    Synth(SynthArgs),
    /// Time the phases of single iterations on synthetic data
    Bench(BenchArgs),
}

/// Training flags. Unset values fall back to the config file, then the
/// manifest, then built-in defaults.
#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Sample files (EMB1); repeat or comma-separate for several
    #[arg(long, value_delimiter = ',')]
    pub data: Vec<PathBuf>,

    /// Output dictionary (EMB1)
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// History CSV; defaults to <out>.history.csv
    #[arg(long)]
    pub history: Option<PathBuf>,

    /// Run manifest JSON; defaults to <out>.manifest.json
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    #[arg(long)]
    pub atoms: Option<usize>,

    /// Nonzeros per code
    #[arg(long)]
    pub sparsity: Option<usize>,

    #[arg(long)]
    pub iters: Option<usize>,

    /// Samples per outer batch
    #[arg(long)]
    pub batch: Option<usize>,

    #[arg(long)]
    pub workers: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Matryoshka group sizes, e.g. 16,48
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<usize>>,

    /// Flat `key = value` config file
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Rerun with the config and inputs recorded in a manifest
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,

    /// Storage precision of the written dictionary
    #[arg(long)]
    pub precision: Option<Precision>,

    /// Validation samples (EMB1), `first` for the first batch or `none`
    #[arg(long)]
    pub validation: Option<String>,

    /// Registered training strategy
    #[arg(long)]
    pub strategy: Option<String>,

    /// Registered eigen solver
    #[arg(long)]
    pub solver: Option<String>,

    /// Start from this dictionary instead of a random one
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Dictionary (EMB1)
    #[arg(long)]
    pub dict: PathBuf,

    #[arg(long, value_delimiter = ',', required = true)]
    pub data: Vec<PathBuf>,

    /// Output codes (SPX1)
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub sparsity: usize,

    #[arg(long, default_value_t = 65536)]
    pub batch: usize,

    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dictionary (EMB1)
    #[arg(long)]
    pub dict: PathBuf,

    /// Samples to measure reconstruction on
    #[arg(long, value_delimiter = ',')]
    pub data: Vec<PathBuf>,

    /// Codes for --data (SPX1); encoded with --sparsity when absent
    #[arg(long)]
    pub codes: Option<PathBuf>,

    #[arg(long)]
    pub sparsity: Option<usize>,

    #[arg(long, default_value_t = 65536)]
    pub batch: usize,

    /// Metrics CSV; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Coherence histogram CSV
    #[arg(long)]
    pub histogram: Option<PathBuf>,

    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output prefix; writes <prefix>.y.emb1, .dict.emb1, .codes.spx1, .json
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub d: usize,

    #[arg(long)]
    pub atoms: usize,

    #[arg(long)]
    pub sparsity: usize,

    #[arg(long)]
    pub samples: usize,

    /// Noise standard deviation
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,

    /// Coefficient standard deviation
    #[arg(long, default_value_t = 1.0)]
    pub sigma_x: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Orthonormal planted dictionary (needs atoms <= d)
    #[arg(long)]
    pub orthonormal: bool,

    #[arg(long, default_value = "f32")]
    pub precision: Precision,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 512)]
    pub d: usize,

    #[arg(long, default_value_t = 2048)]
    pub atoms: usize,

    #[arg(long, default_value_t = 20)]
    pub sparsity: usize,

    /// Batch sizes to sweep
    #[arg(long, value_delimiter = ',', default_value = "32768")]
    pub batch: Vec<usize>,

    /// Worker counts to sweep
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub workers: Vec<usize>,

    #[arg(long, default_value_t = 5)]
    pub trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Update only this many atoms per trial
    #[arg(long)]
    pub update_atoms: Option<usize>,

    #[arg(long, default_value = "lanczos")]
    pub solver: String,

    /// Per-trial CSV; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Summary CSV of per-phase minima; defaults next to --out
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
