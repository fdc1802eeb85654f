//! Corpus-scale audit primitives: best-match retrieval for each generated
//! image, per-prompt one-to-many statistics, and mitigation-strength scoring
//! between two audit runs.
//!
//! Matching scans full-frame similarity only and classifies the single best
//! candidate, so a corpus pass costs one metric evaluation per entry rather
//! than three. Ties are broken toward the lowest corpus index. When either
//! side of the chosen pair lacks a segmentation mask, the regional scores
//! are omitted and the verdict collapses to VM or NM from the full-frame
//! score alone; such records are flagged as mask-absent.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{
    classify, region_similarities, ClassifyError, FbMemConfig, MemClass, SimilarityTriple,
};
use crate::pixel::{BinaryMask, MaskedImage, PixelError, PixelImage};
use crate::ssim::{ms_ssim_precomputed, MetricError, MsSsimParams, MsSsimPrecomp, SimilarityScore};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(
        "corpus entry '{train_id}' is {width}x{height} but the corpus was prepared at \
         {expected_width}x{expected_height}"
    )]
    CorpusDimensionMismatch {
        train_id: String,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error(
        "corpus entry '{train_id}' pairs a {image_width}x{image_height} image with a \
         {mask_width}x{mask_height} mask"
    )]
    MaskDimensionMismatch {
        train_id: String,
        image_width: usize,
        image_height: usize,
        mask_width: usize,
        mask_height: usize,
    },
    #[error("duplicate corpus id '{0}'")]
    DuplicateCorpusId(String),
    #[error("corpus was prepared with different metric parameters than the audit configuration")]
    ParamsMismatch,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Pixel(#[from] PixelError),
    #[error(
        "duplicate record for prompt '{prompt_id}' generation {generation_index} in the \
         {side} records"
    )]
    DuplicateRecord {
        prompt_id: String,
        generation_index: u32,
        side: &'static str,
    },
    #[error(
        "prompt '{prompt_id}' generation {generation_index} is missing from the {side} records"
    )]
    MissingRecord {
        prompt_id: String,
        generation_index: u32,
        side: &'static str,
    },
    #[error("mitigation scoring needs at least one aligned record pair")]
    EmptyAlignment,
}

/// One generated image to audit, as listed in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_id: String,
    pub generation_index: u32,
    #[serde(rename = "image")]
    pub image_ref: String,
    #[serde(rename = "mask", default, skip_serializing_if = "Option::is_none")]
    pub mask_ref: Option<String>,
}

/// One training image the audit may match against.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub train_id: String,
    pub image: PixelImage,
    pub mask: Option<BinaryMask>,
}

/// A validated corpus, optionally with per-entry metric precomputations kept
/// alive so repeated scans only pay for the generated side.
#[derive(Debug)]
pub struct PreparedCorpus {
    entries: Vec<CorpusEntry>,
    params: MsSsimParams,
    precomps: Option<Vec<MsSsimPrecomp>>,
}

/// Per-side heap budget below which corpus precomputations are retained.
const CORPUS_PRECOMP_BUDGET_BYTES: usize = 1 << 30;

impl PreparedCorpus {
    /// Validates entry dimensions and ids, then precomputes the corpus side
    /// of the metric when the estimated footprint fits the heap budget.
    /// Scans behave identically either way.
    pub fn prepare(entries: Vec<CorpusEntry>, params: &MsSsimParams) -> Result<Self, AuditError> {
        Self::prepare_with_budget(entries, params, CORPUS_PRECOMP_BUDGET_BYTES)
    }

    fn prepare_with_budget(
        entries: Vec<CorpusEntry>,
        params: &MsSsimParams,
        budget: usize,
    ) -> Result<Self, AuditError> {
        params.validate()?;
        let mut seen = BTreeSet::new();
        for entry in &entries {
            if !seen.insert(entry.train_id.as_str()) {
                return Err(AuditError::DuplicateCorpusId(entry.train_id.clone()));
            }
            let (w, h) = (entries[0].image.width(), entries[0].image.height());
            if entry.image.width() != w || entry.image.height() != h {
                return Err(AuditError::CorpusDimensionMismatch {
                    train_id: entry.train_id.clone(),
                    width: entry.image.width(),
                    height: entry.image.height(),
                    expected_width: w,
                    expected_height: h,
                });
            }
            if let Some(mask) = &entry.mask {
                if mask.width() != entry.image.width() || mask.height() != entry.image.height() {
                    return Err(AuditError::MaskDimensionMismatch {
                        train_id: entry.train_id.clone(),
                        image_width: entry.image.width(),
                        image_height: entry.image.height(),
                        mask_width: mask.width(),
                        mask_height: mask.height(),
                    });
                }
            }
        }
        let estimate: usize = entries
            .iter()
            .map(|e| MsSsimPrecomp::byte_estimate(e.image.width(), e.image.height(), params))
            .sum();
        let precomps = if estimate <= budget {
            // Fans out across the current rayon pool; callers that want a
            // bounded worker count run prepare inside their own pool.
            let results: Vec<Result<MsSsimPrecomp, MetricError>> = entries
                .par_iter()
                .map(|entry| MsSsimPrecomp::new(&entry.image, params))
                .collect();
            let mut out = Vec::with_capacity(entries.len());
            for result in results {
                out.push(result?);
            }
            Some(out)
        } else {
            None
        };
        Ok(Self {
            entries,
            params: params.clone(),
            precomps,
        })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn params(&self) -> &MsSsimParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Outcome of matching one generated image against the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub prompt_id: String,
    pub generation_index: u32,
    pub best_train_id: String,
    pub m_full: SimilarityScore,
    pub m_fg: Option<SimilarityScore>,
    pub m_bg: Option<SimilarityScore>,
    pub mem_class: MemClass,
}

impl MatchRecord {
    /// True when a missing mask on either side forced the VM/NM collapse.
    pub fn mask_absent(&self) -> bool {
        self.m_fg.is_none()
    }
}

/// Process-wide tally of full-image comparisons performed by completed
/// corpus scans. Callers that want a per-run figure take a delta around the
/// run.
static COMPARISONS: AtomicU64 = AtomicU64::new(0);

pub fn comparison_count() -> u64 {
    COMPARISONS.load(Ordering::Relaxed)
}

/// Index and score of the corpus entry maximizing full-frame similarity,
/// with ties broken toward the lowest index.
fn scan_full(
    gen: &PixelImage,
    corpus: &PreparedCorpus,
) -> Result<(usize, SimilarityScore), AuditError> {
    let gen_pre = MsSsimPrecomp::new(gen, &corpus.params)?;
    let mut best: Option<(usize, SimilarityScore)> = None;
    for (i, entry) in corpus.entries.iter().enumerate() {
        let score = match &corpus.precomps {
            Some(pres) => ms_ssim_precomputed(&gen_pre, &pres[i])?,
            None => {
                let pre = MsSsimPrecomp::new(&entry.image, &corpus.params)?;
                ms_ssim_precomputed(&gen_pre, &pre)?
            }
        };
        if best.map_or(true, |(_, b)| score.value() > b.value()) {
            best = Some((i, score));
        }
    }
    COMPARISONS.fetch_add(corpus.entries.len() as u64, Ordering::Relaxed);
    best.ok_or(AuditError::EmptyCorpus)
}

fn collapsed_class(m_full: SimilarityScore, cfg: &FbMemConfig) -> MemClass {
    if m_full.value() >= cfg.tau_full {
        MemClass::Vm
    } else {
        MemClass::Nm
    }
}

/// Matches a masked generated image against the corpus: full-frame scan,
/// then regional scoring and classification of the winner only. Falls back
/// to the mask-absent collapse when the winning entry has no mask.
pub fn best_match(
    prompt_id: &str,
    generation_index: u32,
    gen: &MaskedImage,
    corpus: &PreparedCorpus,
    cfg: &FbMemConfig,
) -> Result<MatchRecord, AuditError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(AuditError::EmptyCorpus);
    }
    if cfg.metric != corpus.params {
        return Err(AuditError::ParamsMismatch);
    }
    let (index, m_full) = scan_full(gen.image(), corpus)?;
    let entry = &corpus.entries[index];
    let record = match &entry.mask {
        Some(mask) => {
            let train = MaskedImage::new(entry.image.clone(), mask.clone())?;
            let (m_fg, m_bg) = region_similarities(gen, &train, cfg)?;
            let scores = SimilarityTriple { m_full, m_fg, m_bg };
            MatchRecord {
                prompt_id: prompt_id.to_string(),
                generation_index,
                best_train_id: entry.train_id.clone(),
                m_full,
                m_fg: Some(m_fg),
                m_bg: Some(m_bg),
                mem_class: classify(&scores, cfg),
            }
        }
        None => MatchRecord {
            prompt_id: prompt_id.to_string(),
            generation_index,
            best_train_id: entry.train_id.clone(),
            m_full,
            m_fg: None,
            m_bg: None,
            mem_class: collapsed_class(m_full, cfg),
        },
    };
    Ok(record)
}

/// Matching for a generation without a mask: regional comparison is
/// impossible, so only the full-frame scan runs and the verdict collapses
/// to VM or NM.
pub fn best_match_unmasked(
    prompt_id: &str,
    generation_index: u32,
    gen: &PixelImage,
    corpus: &PreparedCorpus,
    cfg: &FbMemConfig,
) -> Result<MatchRecord, AuditError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(AuditError::EmptyCorpus);
    }
    if cfg.metric != corpus.params {
        return Err(AuditError::ParamsMismatch);
    }
    let (index, m_full) = scan_full(gen, corpus)?;
    let entry = &corpus.entries[index];
    Ok(MatchRecord {
        prompt_id: prompt_id.to_string(),
        generation_index,
        best_train_id: entry.train_id.clone(),
        m_full,
        m_fg: None,
        m_bg: None,
        mem_class: collapsed_class(m_full, cfg),
    })
}

/// Per-class record tally in VM, FM, BM, NM order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub vm: u64,
    pub fm: u64,
    pub bm: u64,
    pub nm: u64,
}

impl ClassCounts {
    pub fn bump(&mut self, class: MemClass) {
        match class {
            MemClass::Vm => self.vm += 1,
            MemClass::Fm => self.fm += 1,
            MemClass::Bm => self.bm += 1,
            MemClass::Nm => self.nm += 1,
        }
    }

    pub fn count(&self, class: MemClass) -> u64 {
        match class {
            MemClass::Vm => self.vm,
            MemClass::Fm => self.fm,
            MemClass::Bm => self.bm,
            MemClass::Nm => self.nm,
        }
    }

    pub fn total(&self) -> u64 {
        self.vm + self.fm + self.bm + self.nm
    }

    /// Records in any class except NM.
    pub fn memorized(&self) -> u64 {
        self.vm + self.fm + self.bm
    }
}

/// How many distinct training images one prompt's generations matched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneToManyStats {
    pub prompt_id: String,
    /// Distinct best-match ids over memorized (non-NM) generations only.
    pub distinct_match_count: u64,
    pub class_counts: ClassCounts,
}

/// Groups records by prompt and counts distinct memorized matches per
/// prompt. Output is sorted by prompt id.
pub fn one_to_many(records: &[MatchRecord]) -> Vec<OneToManyStats> {
    let mut groups: BTreeMap<&str, (BTreeSet<&str>, ClassCounts)> = BTreeMap::new();
    for record in records {
        let (matches, counts) = groups.entry(record.prompt_id.as_str()).or_default();
        counts.bump(record.mem_class);
        if record.mem_class != MemClass::Nm {
            matches.insert(record.best_train_id.as_str());
        }
    }
    groups
        .into_iter()
        .map(|(prompt_id, (matches, class_counts))| OneToManyStats {
            prompt_id: prompt_id.to_string(),
            distinct_match_count: matches.len() as u64,
            class_counts,
        })
        .collect()
}

/// Strength credited to one verdict change between audit runs. Staying in
/// place scores zero; improvements are positive.
pub fn transition_score(before: MemClass, after: MemClass) -> f64 {
    use MemClass::{Bm, Fm, Nm, Vm};
    match (before, after) {
        (Vm, Nm) => 2.0,
        (Vm, Bm) => 1.5,
        (Vm, Fm) => 0.5,
        (Fm, Nm) => 1.5,
        (Fm, Bm) => 1.0,
        (Fm, Vm) => -0.5,
        (Bm, Nm) => 0.5,
        (Bm, Fm) => -0.5,
        (Bm, Vm) => -1.5,
        (Nm, Bm) => -0.5,
        (Nm, Fm) => -1.5,
        (Nm, Vm) => -2.0,
        (Vm, Vm) | (Fm, Fm) | (Bm, Bm) | (Nm, Nm) => 0.0,
    }
}

/// Mitigation outcome over two aligned audit runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationSummary {
    pub mean_score: f64,
    pub pair_count: u64,
    /// Transition counts indexed `[before][after]` in VM, FM, BM, NM order.
    pub matrix: [[u64; 4]; 4],
}

fn keyed<'a>(
    records: &'a [MatchRecord],
    side: &'static str,
) -> Result<BTreeMap<(&'a str, u32), MemClass>, AuditError> {
    let mut map = BTreeMap::new();
    for record in records {
        let key = (record.prompt_id.as_str(), record.generation_index);
        if map.insert(key, record.mem_class).is_some() {
            return Err(AuditError::DuplicateRecord {
                prompt_id: record.prompt_id.clone(),
                generation_index: record.generation_index,
                side,
            });
        }
    }
    Ok(map)
}

/// Aligns two runs by (prompt id, generation index) and averages the
/// transition scores. Alignment must be exact: duplicates or records present
/// on only one side are errors. Iteration follows sorted key order, so the
/// result is independent of input ordering.
pub fn mitigation_summary(
    before: &[MatchRecord],
    after: &[MatchRecord],
) -> Result<MitigationSummary, AuditError> {
    let before_map = keyed(before, "before")?;
    let after_map = keyed(after, "after")?;
    if let Some(key) = after_map.keys().find(|k| !before_map.contains_key(*k)) {
        return Err(AuditError::MissingRecord {
            prompt_id: key.0.to_string(),
            generation_index: key.1,
            side: "before",
        });
    }
    if before_map.is_empty() {
        return Err(AuditError::EmptyAlignment);
    }
    let mut matrix = [[0u64; 4]; 4];
    let mut sum = 0.0;
    for (key, &b) in &before_map {
        let &a = after_map
            .get(key)
            .ok_or_else(|| AuditError::MissingRecord {
                prompt_id: key.0.to_string(),
                generation_index: key.1,
                side: "after",
            })?;
        matrix[b.index()][a.index()] += 1;
        sum += transition_score(b, a);
    }
    let pair_count = before_map.len() as u64;
    Ok(MitigationSummary {
        mean_score: sum / pair_count as f64,
        pair_count,
        matrix,
    })
}

/// Mean transition score between two aligned runs.
pub fn mitigation_score(before: &[MatchRecord], after: &[MatchRecord]) -> Result<f64, AuditError> {
    Ok(mitigation_summary(before, after)?.mean_score)
}
