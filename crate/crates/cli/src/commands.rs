//! The `score` and `cluster` commands.

use anyhow::{Context, Result};
use memaudit_core::{
    aggregate_neurons, cluster_prompts, export_plan, l2_normalize, load_embeddings,
    load_neuron_sets, mitigation_summary, MemClass,
};
use serde::Serialize;

use crate::cli::{ClusterArgs, ScoreArgs};
use crate::report::{read_report, round6};

pub const SCORE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct ScoreOutput {
    schema_version: u32,
    mean_score: f64,
    pair_count: u64,
    /// Transition counts indexed `[before][after]`, both in `classes` order.
    matrix: [[u64; 4]; 4],
    classes: [&'static str; 4],
}

/// Compares two audit reports over the same generations and prints the
/// mitigation summary.
pub fn run_score(args: &ScoreArgs) -> Result<()> {
    let before = read_report(&args.before)?;
    let after = read_report(&args.after)?;
    let summary = mitigation_summary(&before.match_records(), &after.match_records())
        .context("aligning the two reports")?;
    let output = ScoreOutput {
        schema_version: SCORE_SCHEMA_VERSION,
        mean_score: round6(summary.mean_score),
        pair_count: summary.pair_count,
        matrix: summary.matrix,
        classes: [
            MemClass::Vm.label(),
            MemClass::Fm.label(),
            MemClass::Bm.label(),
            MemClass::Nm.label(),
        ],
    };
    let mut text = serde_json::to_string_pretty(&output).context("serializing summary")?;
    text.push('\n');
    print!("{text}");
    if let Some(path) = &args.out {
        std::fs::write(path, &text)
            .with_context(|| format!("writing summary '{}'", path.display()))?;
    }
    Ok(())
}

/// Clusters prompts by embedding and writes one union mitigation plan per
/// cluster.
pub fn run_cluster(args: &ClusterArgs) -> Result<()> {
    let mut embeddings = load_embeddings(&args.embeddings)?;
    if args.normalize {
        l2_normalize(&mut embeddings);
    }
    let assignment = cluster_prompts(&embeddings, args.k, args.seed)?;
    let sets = load_neuron_sets(&args.neuron_sets)?;
    let plans = aggregate_neurons(&assignment, &sets, args.alpha_damp)?;
    export_plan(&plans, &args.out)?;
    let neuron_total: usize = plans.iter().map(|p| p.union_neurons.len()).sum();
    println!(
        "clustered {} prompts into {} plans covering {} neuron entries",
        embeddings.len(),
        plans.len(),
        neuron_total
    );
    println!("plan: {}", args.out.display());
    Ok(())
}
