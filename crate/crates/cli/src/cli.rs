//! Command-line surface: subcommands, flags, and shared value enums.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "memaudit")]
#[command(about = "Batch memorization audit for generative image models")]
#[command(version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Match every generated image against a training corpus and classify
    /// memorization per pair
    Audit(AuditArgs),
    /// Score the mitigation between two audit reports
    Score(ScoreArgs),
    /// Cluster prompts by embedding and union their neuron sets into
    /// mitigation plans
    Cluster(ClusterArgs),
    /// Measure batch similarity throughput on synthetic images
    Bench(BenchArgs),
}

/// MS-SSIM scale weighting schemes selectable from manifests and flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightPreset {
    /// Every scale contributes equally.
    Equal,
    /// The classic five-scale exponents from the original multi-scale study.
    Classic,
}

#[derive(Parser, Debug)]
pub struct AuditArgs {
    /// Audit manifest (JSON)
    pub manifest: PathBuf,

    /// Full-frame similarity threshold for the verbatim verdict
    #[arg(long)]
    pub tau_full: Option<f64>,

    /// Regional similarity threshold for the foreground/background verdicts
    #[arg(long)]
    pub tau_part: Option<f64>,

    /// Foreground-proportion margin for one-sided masks
    #[arg(long)]
    pub beta: Option<f64>,

    /// Number of MS-SSIM scales
    #[arg(long)]
    pub scales: Option<u32>,

    /// Scale weighting scheme
    #[arg(long, value_enum)]
    pub weights: Option<WeightPreset>,

    /// Worker threads (default: logical CPU count)
    #[arg(long)]
    pub jobs: Option<usize>,

    /// Report output path (JSON); the CSV is written beside it
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,

    /// Earlier report for the same manifest; adds a mitigation score for
    /// this run relative to it
    #[arg(long)]
    pub before: Option<PathBuf>,
}

#[derive(Parser, Debug)]
pub struct ScoreArgs {
    /// Report from the unmitigated run
    pub before: PathBuf,

    /// Report from the mitigated run
    pub after: PathBuf,

    /// Write the summary JSON here as well as to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Parser, Debug)]
pub struct ClusterArgs {
    /// Prompt embeddings CSV: `prompt_id,v1,...,vD` per row, no header
    pub embeddings: PathBuf,

    /// Per-prompt neuron sets (JSON)
    pub neuron_sets: PathBuf,

    /// Number of clusters
    #[arg(long, default_value_t = 12)]
    pub k: u32,

    /// Dampening factor carried into every plan (0 = full deactivation)
    #[arg(long, default_value_t = 0.0)]
    pub alpha_damp: f64,

    /// Seed for centroid initialization
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Scale embeddings to unit length first (Euclidean then matches
    /// cosine ordering)
    #[arg(long)]
    pub normalize: bool,

    /// Plan output path (JSON)
    #[arg(long, default_value = "plan.json")]
    pub out: PathBuf,
}

#[derive(Parser, Debug)]
pub struct BenchArgs {
    /// Number of synthetic corpus images
    #[arg(long, default_value_t = 500)]
    pub corpus: usize,

    /// Square image edge length in pixels
    #[arg(long, default_value_t = 512)]
    pub image_size: usize,

    /// Worker threads (default: logical CPU count)
    #[arg(long)]
    pub jobs: Option<usize>,

    /// Seed for the synthetic images
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also run at this worker count and report the speedup and whether
    /// the score matrices are identical
    #[arg(long)]
    pub baseline_jobs: Option<usize>,

    /// Write the timing JSON here as well as to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}
