//! The `bench` command: wall-clock throughput of the batch similarity
//! kernel on synthetic images, with an optional second run at a different
//! worker count to measure scaling and verify bit-identical output.

use std::time::Instant;

use anyhow::{Context, Result};
use memaudit_core::{batch_similarity, random_image, MsSsimParams, PixelImage, ScoreMatrix};
use serde::Serialize;

use crate::cli::BenchArgs;

const REPEATS: usize = 3;

#[derive(Debug, Serialize)]
pub struct BenchOutput {
    pub corpus: usize,
    pub image_size: usize,
    pub jobs: usize,
    pub seed: u64,
    pub median_seconds: f64,
    pub pairs_per_second: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineComparison>,
}

#[derive(Debug, Serialize)]
pub struct BaselineComparison {
    pub jobs: usize,
    pub median_seconds: f64,
    /// Baseline wall time divided by the main run's wall time.
    pub speedup: f64,
    /// Whether both worker counts produced the same score matrix, bit for
    /// bit.
    pub results_identical: bool,
}

/// Query image seeds sit far above the corpus range so the query is never a
/// corpus member.
const QUERY_SEED_OFFSET: u64 = 1_000_000;

fn timed_run(
    queries: &[PixelImage],
    corpus: &[PixelImage],
    params: &MsSsimParams,
    jobs: usize,
) -> Result<(f64, ScoreMatrix)> {
    let mut times = Vec::with_capacity(REPEATS);
    let mut matrix = None;
    for _ in 0..REPEATS {
        let start = Instant::now();
        let scores = batch_similarity(queries, corpus, params, jobs)
            .context("evaluating batch similarity")?;
        times.push(start.elapsed().as_secs_f64());
        matrix = Some(scores);
    }
    times.sort_by(|a, b| a.total_cmp(b));
    let median = times[times.len() / 2];
    Ok((median, matrix.expect("at least one repeat ran")))
}

pub fn run_bench(args: &BenchArgs) -> Result<BenchOutput> {
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let corpus: Vec<PixelImage> = (0..args.corpus)
        .map(|i| random_image(args.image_size, args.image_size, args.seed + i as u64))
        .collect();
    let queries = vec![random_image(
        args.image_size,
        args.image_size,
        args.seed + QUERY_SEED_OFFSET,
    )];
    let params = MsSsimParams::default();

    let (median, matrix) = timed_run(&queries, &corpus, &params, jobs)?;
    let pairs = (queries.len() * corpus.len()) as f64;
    let pairs_per_second = if median > 0.0 { pairs / median } else { 0.0 };

    let baseline = match args.baseline_jobs {
        Some(baseline_jobs) => {
            let baseline_jobs = baseline_jobs.max(1);
            let (baseline_median, baseline_matrix) =
                timed_run(&queries, &corpus, &params, baseline_jobs)?;
            Some(BaselineComparison {
                jobs: baseline_jobs,
                median_seconds: baseline_median,
                speedup: if median > 0.0 {
                    baseline_median / median
                } else {
                    0.0
                },
                results_identical: baseline_matrix == matrix,
            })
        }
        None => None,
    };

    Ok(BenchOutput {
        corpus: args.corpus,
        image_size: args.image_size,
        jobs,
        seed: args.seed,
        median_seconds: median,
        pairs_per_second,
        baseline,
    })
}
