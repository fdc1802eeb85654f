//! Foreground/background-aware memorization classification.
//!
//! A generated/training pair gets three similarity scores: the full frames,
//! the foreground regions, and the background regions. How the regional
//! operands are masked depends on the generated image's foreground proportion
//! `rho`:
//!
//! * `rho <= beta` (foreground negligible): the full generated frame is
//!   compared against the foreground-masked training image, and both
//!   background-masked frames against each other;
//! * `rho >= 1 - beta` (background negligible): both foreground-masked frames
//!   are compared, and the full generated frame against the
//!   background-masked training image;
//! * otherwise both comparisons are masked-vs-masked.
//!
//! Masking zeroes the excluded region; the metric always runs over the full
//! frame (degenerate all-zero operands are scored, never special-cased).
//! Verdicts are assigned with strict precedence VM > FM > BM > NM, with
//! threshold boundaries inclusive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pixel::{MaskRegion, MaskedImage};
use crate::ssim::{ms_ssim, MetricError, MsSsimParams, SimilarityScore};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Thresholds and metric parameters for the four-way verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct FbMemConfig {
    /// Full-frame similarity at or above this is verbatim memorization.
    pub tau_full: f64,
    /// Regional similarity at or above this is partial memorization.
    pub tau_part: f64,
    /// Foreground-proportion margin that marks a mask as one-sided.
    pub beta: f64,
    pub metric: MsSsimParams,
}

impl Default for FbMemConfig {
    fn default() -> Self {
        Self {
            tau_full: 0.8,
            tau_part: 0.6,
            beta: 0.03,
            metric: MsSsimParams::default(),
        }
    }
}

impl FbMemConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        self.metric.validate()?;
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return Err(ClassifyError::InvalidConfig(format!(
                "beta must lie in (0, 0.5), got {}",
                self.beta
            )));
        }
        if !(self.tau_part > 0.0 && self.tau_part <= self.tau_full && self.tau_full <= 1.0) {
            return Err(ClassifyError::InvalidConfig(format!(
                "thresholds must satisfy 0 < tau_part <= tau_full <= 1, got tau_part={} tau_full={}",
                self.tau_part, self.tau_full
            )));
        }
        Ok(())
    }
}

/// The four memorization verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemClass {
    /// Verbatim: the full frames match.
    #[serde(rename = "VM")]
    Vm,
    /// Foreground memorization.
    #[serde(rename = "FM")]
    Fm,
    /// Background memorization.
    #[serde(rename = "BM")]
    Bm,
    /// Not memorized.
    #[serde(rename = "NM")]
    Nm,
}

impl MemClass {
    /// Fixed presentation/matrix order.
    pub const ALL: [MemClass; 4] = [MemClass::Vm, MemClass::Fm, MemClass::Bm, MemClass::Nm];

    pub fn label(self) -> &'static str {
        match self {
            MemClass::Vm => "VM",
            MemClass::Fm => "FM",
            MemClass::Bm => "BM",
            MemClass::Nm => "NM",
        }
    }

    /// Index into [`MemClass::ALL`]-ordered tables.
    pub fn index(self) -> usize {
        match self {
            MemClass::Vm => 0,
            MemClass::Fm => 1,
            MemClass::Bm => 2,
            MemClass::Nm => 3,
        }
    }
}

impl std::fmt::Display for MemClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Full-frame, foreground, and background similarities for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTriple {
    pub m_full: SimilarityScore,
    pub m_fg: SimilarityScore,
    pub m_bg: SimilarityScore,
}

/// Which masking scheme the generated image's foreground proportion selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptiveBranch {
    /// `rho <= beta`: foreground too small to mask the generated frame by.
    SmallForeground,
    /// Neither region negligible: masked-vs-masked on both sides.
    Balanced,
    /// `rho >= 1 - beta`: background too small to mask the generated frame by.
    LargeForeground,
}

/// Branch selection; both boundaries are inclusive.
pub fn adaptive_branch(rho: f64, beta: f64) -> AdaptiveBranch {
    if rho <= beta {
        AdaptiveBranch::SmallForeground
    } else if rho >= 1.0 - beta {
        AdaptiveBranch::LargeForeground
    } else {
        AdaptiveBranch::Balanced
    }
}

/// Foreground and background similarities under the adaptive masking scheme.
/// The full-frame score is not computed here so corpus scans can reuse one
/// they already have.
pub fn region_similarities(
    gen: &MaskedImage,
    train: &MaskedImage,
    cfg: &FbMemConfig,
) -> Result<(SimilarityScore, SimilarityScore), ClassifyError> {
    cfg.validate()?;
    let metric = &cfg.metric;
    let rho = gen.foreground_proportion();
    let (fg, bg) = match adaptive_branch(rho, cfg.beta) {
        AdaptiveBranch::SmallForeground => (
            ms_ssim(gen.image(), &train.masked(MaskRegion::Foreground), metric)?,
            ms_ssim(
                &gen.masked(MaskRegion::Background),
                &train.masked(MaskRegion::Background),
                metric,
            )?,
        ),
        AdaptiveBranch::Balanced => (
            ms_ssim(
                &gen.masked(MaskRegion::Foreground),
                &train.masked(MaskRegion::Foreground),
                metric,
            )?,
            ms_ssim(
                &gen.masked(MaskRegion::Background),
                &train.masked(MaskRegion::Background),
                metric,
            )?,
        ),
        AdaptiveBranch::LargeForeground => (
            ms_ssim(
                &gen.masked(MaskRegion::Foreground),
                &train.masked(MaskRegion::Foreground),
                metric,
            )?,
            ms_ssim(gen.image(), &train.masked(MaskRegion::Background), metric)?,
        ),
    };
    Ok((fg, bg))
}

/// All three similarity scores for one generated/training pair.
pub fn masked_similarities(
    gen: &MaskedImage,
    train: &MaskedImage,
    cfg: &FbMemConfig,
) -> Result<SimilarityTriple, ClassifyError> {
    let m_full = ms_ssim(gen.image(), train.image(), &cfg.metric)?;
    let (m_fg, m_bg) = region_similarities(gen, train, cfg)?;
    Ok(SimilarityTriple { m_full, m_fg, m_bg })
}

/// Verdict from a score triple: VM, else FM, else BM, else NM, boundaries
/// inclusive.
pub fn classify(scores: &SimilarityTriple, cfg: &FbMemConfig) -> MemClass {
    if scores.m_full.value() >= cfg.tau_full {
        MemClass::Vm
    } else if scores.m_fg.value() >= cfg.tau_part {
        MemClass::Fm
    } else if scores.m_bg.value() >= cfg.tau_part {
        MemClass::Bm
    } else {
        MemClass::Nm
    }
}

/// Convenience composition of [`masked_similarities`] and [`classify`].
pub fn classify_pair(
    gen: &MaskedImage,
    train: &MaskedImage,
    cfg: &FbMemConfig,
) -> Result<(MemClass, SimilarityTriple), ClassifyError> {
    let scores = masked_similarities(gen, train, cfg)?;
    Ok((classify(&scores, cfg), scores))
}
