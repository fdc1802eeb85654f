//! Report serialization: versioned JSON plus a flat CSV with identical
//! numeric content.
//!
//! Every floating-point value is rounded to six decimal places before
//! serialization, in both formats, so a CSV field and its JSON counterpart
//! parse to the same bits and reruns with identical inputs reproduce the
//! files byte for byte. Absent regional scores (mask-absent records) are
//! JSON `null` and an empty CSV field.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use memaudit_core::{ClassCounts, MatchRecord, MemClass, OneToManyStats, SimilarityScore};
use serde::{Deserialize, Serialize};

use crate::cli::WeightPreset;
use crate::manifest::ResolvedConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Rounds to six decimal places; the serialization precision for every
/// score in a report.
pub fn round6(value: f64) -> f64 {
    (value * 1e6).round() / 1e6
}

/// Configuration echoed into a report. Worker count is deliberately not
/// part of it: it cannot affect report contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub tau_full: f64,
    pub tau_part: f64,
    pub beta: f64,
    pub scales: u32,
    pub weights: WeightPreset,
}

impl From<&ResolvedConfig> for ConfigEcho {
    fn from(config: &ResolvedConfig) -> Self {
        Self {
            tau_full: round6(config.fbmem.tau_full),
            tau_part: round6(config.fbmem.tau_part),
            beta: round6(config.fbmem.beta),
            scales: config.scales,
            weights: config.weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub prompt_id: String,
    pub generation_index: u32,
    pub best_train_id: String,
    pub m_full: f64,
    pub m_fg: Option<f64>,
    pub m_bg: Option<f64>,
    pub mask_absent: bool,
    pub class: MemClass,
}

impl From<&MatchRecord> for ReportRecord {
    fn from(record: &MatchRecord) -> Self {
        Self {
            prompt_id: record.prompt_id.clone(),
            generation_index: record.generation_index,
            best_train_id: record.best_train_id.clone(),
            m_full: round6(record.m_full.value()),
            m_fg: record.m_fg.map(|s| round6(s.value())),
            m_bg: record.m_bg.map(|s| round6(s.value())),
            mask_absent: record.mask_absent(),
            class: record.mem_class,
        }
    }
}

impl ReportRecord {
    /// Inverse of the conversion above, up to the six-decimal rounding.
    pub fn to_match_record(&self) -> MatchRecord {
        MatchRecord {
            prompt_id: self.prompt_id.clone(),
            generation_index: self.generation_index,
            best_train_id: self.best_train_id.clone(),
            m_full: SimilarityScore::new(self.m_full),
            m_fg: self.m_fg.map(SimilarityScore::new),
            m_bg: self.m_bg.map(SimilarityScore::new),
            mem_class: self.class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub prompt_id: String,
    pub generation_index: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ConfigEcho,
    /// Full-image corpus comparisons performed across all scans.
    pub total_comparisons: u64,
    pub class_distribution: ClassCounts,
    pub records: Vec<ReportRecord>,
    pub prompts: Vec<OneToManyStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigation_score: Option<f64>,
    pub failures: Vec<FailureRecord>,
}

impl Report {
    pub fn match_records(&self) -> Vec<MatchRecord> {
        self.records
            .iter()
            .map(ReportRecord::to_match_record)
            .collect()
    }
}

pub fn write_report_json(report: &Report, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).context("serializing report")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing report '{}'", path.display()))
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read report '{}'", path.display()))?;
    let report: Report = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse report '{}'", path.display()))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        bail!(
            "report '{}' uses schema version {}, this build reads version {}",
            path.display(),
            report.schema_version,
            REPORT_SCHEMA_VERSION
        );
    }
    Ok(report)
}

/// The CSV path for a given report path: the same name with a `.csv`
/// extension.
pub fn csv_path_for(json_path: &Path) -> std::path::PathBuf {
    json_path.with_extension("csv")
}

pub const CSV_HEADER: &str = "prompt_id,gen_index,best_train_id,m_full,m_fg,m_bg,class";

fn push_score(line: &mut String, value: Option<f64>) {
    match value {
        Some(v) => write!(line, ",{v:.6}").expect("formatting into a String cannot fail"),
        None => line.push(','),
    }
}

pub fn write_report_csv(report: &Report, path: &Path) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for record in &report.records {
        let mut line = format!(
            "{},{},{}",
            record.prompt_id, record.generation_index, record.best_train_id
        );
        push_score(&mut line, Some(record.m_full));
        push_score(&mut line, record.m_fg);
        push_score(&mut line, record.m_bg);
        write!(line, ",{}", record.class).expect("formatting into a String cannot fail");
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing CSV '{}'", path.display()))
}
