//! The `audit` command: manifest in, JSON + CSV report out.
//!
//! Input problems (unreadable manifest, undecodable corpus, misaligned
//! baseline report) abort the run. Problems scoped to a single generated
//! image are recorded in the report's `failures` list instead, and the run
//! keeps going; the caller maps a nonzero failure count to a partial-failure
//! exit code.

use std::path::Path;

use anyhow::{Context, Result};
use memaudit_core::{
    best_match, best_match_unmasked, comparison_count, load_image, load_mask, mitigation_score,
    one_to_many, resize, resize_mask, ChannelPolicy, ClassCounts, CorpusEntry, GenerationRecord,
    MaskedImage, MatchRecord, PixelImage, PreparedCorpus,
};
use rayon::prelude::*;

use crate::cli::AuditArgs;
use crate::manifest::{load_manifest, resolve_config, resolve_path, ResolvedConfig};
use crate::report::{
    csv_path_for, read_report, round6, write_report_csv, write_report_json, ConfigEcho,
    FailureRecord, Report, ReportRecord, REPORT_SCHEMA_VERSION,
};

fn load_corpus(
    entries: &[crate::manifest::CorpusFileEntry],
    base: &Path,
) -> Result<Vec<CorpusEntry>> {
    entries
        .iter()
        .map(|entry| {
            let image_path = resolve_path(base, &entry.image)?;
            let image = load_image(&image_path, ChannelPolicy::default())
                .with_context(|| format!("corpus entry '{}'", entry.train_id))?;
            let mask = entry
                .mask
                .as_deref()
                .map(|reference| -> Result<_> {
                    let mask_path = resolve_path(base, reference)?;
                    load_mask(&mask_path)
                        .with_context(|| format!("corpus entry '{}'", entry.train_id))
                })
                .transpose()?;
            Ok(CorpusEntry {
                train_id: entry.train_id.clone(),
                image,
                mask,
            })
        })
        .collect()
}

/// Loads one generated image (and mask, if listed), validates the pair in
/// its native resolution, then resamples both into the corpus frame and
/// matches against the corpus.
fn process_generation(
    record: &GenerationRecord,
    base: &Path,
    corpus: &PreparedCorpus,
    config: &ResolvedConfig,
    frame: (usize, usize),
) -> Result<MatchRecord> {
    let image_path = resolve_path(base, &record.image_ref)?;
    let image = load_image(&image_path, ChannelPolicy::default())?;
    let (width, height) = frame;
    match &record.mask_ref {
        Some(reference) => {
            let mask_path = resolve_path(base, reference)?;
            let mask = load_mask(&mask_path)?;
            // Pair the mask with the image at native resolution first, so a
            // shape mismatch is reported against the files as provided.
            MaskedImage::new(image.clone(), mask.clone())?;
            let gen = MaskedImage::new(
                resize(&image, width, height)?,
                resize_mask(&mask, width, height)?,
            )?;
            Ok(best_match(
                &record.prompt_id,
                record.generation_index,
                &gen,
                corpus,
                &config.fbmem,
            )?)
        }
        None => {
            let gen = resize(&image, width, height)?;
            Ok(best_match_unmasked(
                &record.prompt_id,
                record.generation_index,
                &gen,
                corpus,
                &config.fbmem,
            )?)
        }
    }
}

fn corpus_frame(corpus: &[CorpusEntry]) -> (usize, usize) {
    let first: &PixelImage = &corpus[0].image;
    (first.width(), first.height())
}

/// Runs a full audit and writes the report pair. Returns the number of
/// per-image failures.
pub fn run_audit(args: &AuditArgs) -> Result<usize> {
    let (manifest, base) = load_manifest(&args.manifest)?;
    let config = resolve_config(&manifest.config, args)?;
    let corpus_entries = load_corpus(&manifest.corpus, &base)?;
    let frame = corpus_frame(&corpus_entries);

    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;

    let corpus = pool
        .install(|| PreparedCorpus::prepare(corpus_entries, &config.fbmem.metric))
        .context("preparing corpus")?;

    let comparisons_before = comparison_count();
    let outcomes: Vec<Result<MatchRecord>> = pool.install(|| {
        manifest
            .generations
            .par_iter()
            .map(|record| process_generation(record, &base, &corpus, &config, frame))
            .collect()
    });
    let total_comparisons = comparison_count() - comparisons_before;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (record, outcome) in manifest.generations.iter().zip(outcomes) {
        match outcome {
            Ok(matched) => records.push(matched),
            Err(error) => failures.push(FailureRecord {
                prompt_id: record.prompt_id.clone(),
                generation_index: record.generation_index,
                error: format!("{error:#}"),
            }),
        }
    }
    let mut class_distribution = ClassCounts::default();
    for record in &records {
        class_distribution.bump(record.mem_class);
    }
    let prompts = one_to_many(&records);

    let mitigation = match &args.before {
        Some(path) => {
            let before = read_report(path)?;
            let score = mitigation_score(&before.match_records(), &records)
                .with_context(|| format!("aligning against '{}'", path.display()))?;
            Some(round6(score))
        }
        None => None,
    };

    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: ConfigEcho::from(&config),
        total_comparisons,
        class_distribution,
        records: records.iter().map(ReportRecord::from).collect(),
        prompts,
        mitigation_score: mitigation,
        failures,
    };

    write_report_json(&report, &args.out)?;
    let csv = csv_path_for(&args.out);
    write_report_csv(&report, &csv)?;

    println!(
        "audited {} generations against {} corpus images ({} comparisons)",
        report.records.len() + report.failures.len(),
        corpus.len(),
        report.total_comparisons
    );
    println!(
        "classes: VM {} / FM {} / BM {} / NM {}",
        report.class_distribution.vm,
        report.class_distribution.fm,
        report.class_distribution.bm,
        report.class_distribution.nm
    );
    if let Some(score) = report.mitigation_score {
        println!("mitigation score vs baseline: {score:.6}");
    }
    println!("report: {} and {}", args.out.display(), csv.display());
    Ok(report.failures.len())
}
