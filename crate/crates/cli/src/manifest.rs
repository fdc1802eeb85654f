//! Audit manifest parsing, validation, and config resolution.
//!
//! A manifest is a versioned JSON document listing the training corpus, the
//! generated images to audit, and optional config overrides. Relative paths
//! resolve against the manifest's directory so fixture trees stay
//! relocatable. Precedence for every knob is flags, then the manifest's
//! config block, then built-in defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use memaudit_core::{FbMemConfig, GenerationRecord, MsSsimParams};
use serde::Deserialize;

use crate::cli::{AuditArgs, WeightPreset};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    #[serde(default)]
    pub config: ManifestConfig,
    pub corpus: Vec<CorpusFileEntry>,
    pub generations: Vec<GenerationRecord>,
}

#[derive(Debug, Default, Deserialize)]
pub struct ManifestConfig {
    pub tau_full: Option<f64>,
    pub tau_part: Option<f64>,
    pub beta: Option<f64>,
    pub scales: Option<u32>,
    pub weights: Option<WeightPreset>,
}

#[derive(Debug, Deserialize)]
pub struct CorpusFileEntry {
    pub train_id: String,
    pub image: String,
    #[serde(default)]
    pub mask: Option<String>,
}

/// Identifiers flow into CSV rows unquoted, so they must stay free of
/// delimiter and quoting characters.
fn check_identifier(kind: &str, id: &str) -> Result<()> {
    if id.is_empty() {
        bail!("{kind} id is empty");
    }
    if id.contains([',', '"', '\n', '\r']) {
        bail!("{kind} id '{id}' contains a comma, quote, or line break");
    }
    Ok(())
}

/// Resolves `reference` against the manifest directory and checks existence.
pub fn resolve_path(base: &Path, reference: &str) -> Result<PathBuf> {
    let candidate = Path::new(reference);
    let resolved = if candidate.is_absolute() {
        candidate.to_path_buf()
    } else {
        base.join(candidate)
    };
    if !resolved.is_file() {
        bail!("referenced file '{}' does not exist", resolved.display());
    }
    Ok(resolved)
}

/// Parses and validates a manifest; returns it with its base directory.
pub fn load_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read manifest '{}'", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse manifest '{}'", path.display()))?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        bail!(
            "manifest '{}' uses schema version {}, this build reads version {}",
            path.display(),
            manifest.schema_version,
            MANIFEST_SCHEMA_VERSION
        );
    }
    if manifest.corpus.is_empty() {
        bail!("manifest '{}' lists no corpus entries", path.display());
    }
    if manifest.generations.is_empty() {
        bail!("manifest '{}' lists no generations", path.display());
    }
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut train_ids = BTreeSet::new();
    for entry in &manifest.corpus {
        check_identifier("corpus", &entry.train_id)?;
        if !train_ids.insert(entry.train_id.as_str()) {
            bail!("duplicate corpus id '{}'", entry.train_id);
        }
        resolve_path(&base, &entry.image)
            .with_context(|| format!("corpus entry '{}'", entry.train_id))?;
        if let Some(mask) = &entry.mask {
            resolve_path(&base, mask)
                .with_context(|| format!("corpus entry '{}'", entry.train_id))?;
        }
    }
    let mut generation_keys = BTreeSet::new();
    for record in &manifest.generations {
        check_identifier("prompt", &record.prompt_id)?;
        if !generation_keys.insert((record.prompt_id.as_str(), record.generation_index)) {
            bail!(
                "duplicate generation: prompt '{}' index {}",
                record.prompt_id,
                record.generation_index
            );
        }
        resolve_path(&base, &record.image_ref).with_context(|| {
            format!(
                "generation '{}' index {}",
                record.prompt_id, record.generation_index
            )
        })?;
        if let Some(mask) = &record.mask_ref {
            resolve_path(&base, mask).with_context(|| {
                format!(
                    "generation '{}' index {}",
                    record.prompt_id, record.generation_index
                )
            })?;
        }
    }
    Ok((manifest, base))
}

/// Classifier configuration after applying flag and manifest overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub fbmem: FbMemConfig,
    pub scales: u32,
    pub weights: WeightPreset,
}

pub fn resolve_config(manifest: &ManifestConfig, flags: &AuditArgs) -> Result<ResolvedConfig> {
    let defaults = FbMemConfig::default();
    let weights = flags
        .weights
        .or(manifest.weights)
        .unwrap_or(WeightPreset::Equal);
    let scales = flags.scales.or(manifest.scales);
    let metric = match weights {
        WeightPreset::Equal => MsSsimParams::equal(scales.unwrap_or(5) as usize),
        WeightPreset::Classic => {
            if let Some(n) = scales {
                if n != 5 {
                    bail!("classic weights define exactly five scales, got --scales {n}");
                }
            }
            MsSsimParams::classic()
        }
    };
    let fbmem = FbMemConfig {
        tau_full: flags
            .tau_full
            .or(manifest.tau_full)
            .unwrap_or(defaults.tau_full),
        tau_part: flags
            .tau_part
            .or(manifest.tau_part)
            .unwrap_or(defaults.tau_part),
        beta: flags.beta.or(manifest.beta).unwrap_or(defaults.beta),
        metric,
    };
    fbmem.validate()?;
    Ok(ResolvedConfig {
        fbmem,
        scales: scales.unwrap_or(5),
        weights,
    })
}
