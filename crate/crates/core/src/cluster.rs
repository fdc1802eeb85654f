//! Prompt-embedding clustering and cluster-level neuron-set aggregation.
//!
//! Prompts arrive as fixed-length embedding vectors and are grouped with
//! seeded k-means (k-means++ initialization, Euclidean distance). Per-prompt
//! neuron sets are then unioned across each cluster into a mitigation plan:
//! one consolidated neuron set per cluster plus a dampening factor, exported
//! as a versioned JSON document.
//!
//! Neuron identifiers are opaque 64-bit integers. The file format also
//! accepts a `"layer:index"` string form, packed as `(layer << 32) | index`;
//! the toolkit never interprets the packed halves.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema tag written into neuron-set and plan documents.
pub const PLAN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("i/o error for '{path}': {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("'{path}' line {line}: {message}")]
    EmbeddingParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("embedding file '{path}' contains no rows")]
    EmptyEmbeddings { path: String },
    #[error("prompt '{prompt_id}' has embedding dimension {got}, expected {expected}")]
    DimensionMismatch {
        prompt_id: String,
        got: usize,
        expected: usize,
    },
    #[error("embedding for prompt '{prompt_id}' contains a non-finite value")]
    NonFinite { prompt_id: String },
    #[error("duplicate prompt id '{0}'")]
    DuplicatePrompt(String),
    #[error("cannot form {k} clusters from {prompts} prompts")]
    BadClusterCount { k: u32, prompts: usize },
    #[error("failed to parse JSON in '{path}': {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("'{path}' uses schema version {found}, this build reads version {expected}")]
    UnsupportedSchema {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("invalid neuron id '{token}' for prompt '{prompt_id}': {message}")]
    NeuronId {
        prompt_id: String,
        token: String,
        message: String,
    },
    #[error("prompt '{0}' appears in more than one neuron set")]
    DuplicateNeuronSet(String),
    #[error("prompt '{0}' has a neuron set but no cluster assignment")]
    UnassignedPrompt(String),
    #[error("alpha_damp must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
}

/// One prompt's embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub prompt_id: String,
    pub vector: Vec<f64>,
}

/// Reads `prompt_id,v1,...,vD` rows (no header). Every row must carry the
/// same dimension and finite values.
pub fn load_embeddings(path: &Path) -> Result<Vec<PromptEmbedding>, ClusterError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ClusterError::Io {
        path: display.clone(),
        source,
    })?;
    let mut rows = Vec::new();
    let mut expected_dim = None;
    for (number, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| ClusterError::EmbeddingParse {
            path: display.clone(),
            line: number + 1,
            message,
        };
        let mut fields = line.split(',');
        let prompt_id = fields.next().unwrap_or_default().trim().to_string();
        if prompt_id.is_empty() {
            return Err(parse_err("empty prompt id".to_string()));
        }
        let mut vector = Vec::new();
        for field in fields {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad number '{}': {e}", field.trim())))?;
            if !value.is_finite() {
                return Err(parse_err(format!("non-finite value '{}'", field.trim())));
            }
            vector.push(value);
        }
        if vector.is_empty() {
            return Err(parse_err("row has no embedding values".to_string()));
        }
        match expected_dim {
            None => expected_dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(parse_err(format!(
                    "dimension {} does not match earlier rows of dimension {d}",
                    vector.len()
                )))
            }
            Some(_) => {}
        }
        rows.push(PromptEmbedding { prompt_id, vector });
    }
    if rows.is_empty() {
        return Err(ClusterError::EmptyEmbeddings { path: display });
    }
    Ok(rows)
}

/// Scales each vector to unit Euclidean norm. Zero vectors are left as-is.
/// With normalized inputs, Euclidean nearest-centroid ordering matches
/// cosine similarity ordering.
pub fn l2_normalize(embeddings: &mut [PromptEmbedding]) {
    for embedding in embeddings {
        let norm = embedding.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut embedding.vector {
                *v /= norm;
            }
        }
    }
}

/// Prompt-to-cluster mapping produced by [`cluster_prompts`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: u32,
    /// Cluster id per prompt; every id lies in `[0, k)`.
    pub assignments: BTreeMap<String, u32>,
}

impl ClusterAssignment {
    /// Prompts assigned to `cluster_id`, sorted by prompt id.
    pub fn members(&self, cluster_id: u32) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &c)| c == cluster_id)
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

/// Convergence record for one clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansDiagnostics {
    pub iterations: u32,
    pub converged: bool,
    /// Sum of squared point-to-centroid distances after each assignment
    /// pass; nonincreasing by construction.
    pub objective_history: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn validate_embeddings(embeddings: &[PromptEmbedding], k: u32) -> Result<usize, ClusterError> {
    if k == 0 || k as usize > embeddings.len() {
        return Err(ClusterError::BadClusterCount {
            k,
            prompts: embeddings.len(),
        });
    }
    let dim = embeddings[0].vector.len();
    let mut seen = BTreeSet::new();
    for embedding in embeddings {
        if !seen.insert(embedding.prompt_id.as_str()) {
            return Err(ClusterError::DuplicatePrompt(embedding.prompt_id.clone()));
        }
        if embedding.vector.len() != dim || dim == 0 {
            return Err(ClusterError::DimensionMismatch {
                prompt_id: embedding.prompt_id.clone(),
                got: embedding.vector.len(),
                expected: dim.max(1),
            });
        }
        if embedding.vector.iter().any(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite {
                prompt_id: embedding.prompt_id.clone(),
            });
        }
    }
    Ok(dim)
}

/// Seeded k-means++ initialization: the first centroid is uniform, each
/// further one is sampled proportionally to squared distance from the
/// nearest centroid chosen so far (uniform fallback when every point
/// coincides with a centroid).
fn seed_centroids(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..points.len())].to_vec());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(weights) => weights.sample(rng),
            Err(_) => rng.gen_range(0..points.len()),
        };
        centroids.push(points[next].to_vec());
        let newest = centroids.last().expect("just pushed");
        for (slot, point) in d2.iter_mut().zip(points) {
            *slot = slot.min(dist2(point, newest));
        }
    }
    centroids
}

/// Index of the nearest centroid, ties broken toward the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, centroid) in centroids.iter().enumerate() {
        let d = dist2(point, centroid);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

const KMEANS_MAX_ITERATIONS: u32 = 300;
const KMEANS_SHIFT_TOLERANCE: f64 = 1e-6;

/// [`cluster_prompts`] plus centroids and the convergence trace.
pub fn cluster_prompts_detailed(
    embeddings: &[PromptEmbedding],
    k: u32,
    seed: u64,
) -> Result<(ClusterAssignment, KmeansDiagnostics), ClusterError> {
    let dim = validate_embeddings(embeddings, k)?;
    let points: Vec<&[f64]> = embeddings.iter().map(|e| e.vector.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&points, k as usize, &mut rng);

    let mut labels = vec![0usize; points.len()];
    let mut objective_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        let mut objective = 0.0;
        for (label, point) in labels.iter_mut().zip(&points) {
            let (index, d) = nearest(point, &centroids);
            *label = index;
            objective += d;
        }
        objective_history.push(objective);

        let mut sums = vec![vec![0.0; dim]; k as usize];
        let mut counts = vec![0usize; k as usize];
        for (&label, point) in labels.iter().zip(&points) {
            counts[label] += 1;
            for (slot, &v) in sums[label].iter_mut().zip(*point) {
                *slot += v;
            }
        }
        let mut shift: f64 = 0.0;
        for ((centroid, sum), &count) in centroids.iter_mut().zip(&sums).zip(&counts) {
            if count == 0 {
                // An empty cluster keeps its centroid; it may capture points
                // again on a later iteration.
                continue;
            }
            let updated: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            shift = shift.max(dist2(centroid, &updated).sqrt());
            *centroid = updated;
        }
        if shift < KMEANS_SHIFT_TOLERANCE {
            converged = true;
            break;
        }
    }

    // One closing pass so the returned labels are nearest with respect to
    // the final centroids. The objective can only stay or drop: means
    // minimize within-cluster squared error and reassignment minimizes each
    // point's term.
    let mut objective = 0.0;
    for (label, point) in labels.iter_mut().zip(&points) {
        let (index, d) = nearest(point, &centroids);
        *label = index;
        objective += d;
    }
    objective_history.push(objective);

    let assignments = embeddings
        .iter()
        .zip(&labels)
        .map(|(e, &label)| (e.prompt_id.clone(), label as u32))
        .collect();
    Ok((
        ClusterAssignment { k, assignments },
        KmeansDiagnostics {
            iterations,
            converged,
            objective_history,
            centroids,
        },
    ))
}

/// Groups prompts into `k` clusters with seeded k-means. Identical inputs,
/// `k`, and seed always produce the identical assignment.
pub fn cluster_prompts(
    embeddings: &[PromptEmbedding],
    k: u32,
    seed: u64,
) -> Result<ClusterAssignment, ClusterError> {
    cluster_prompts_detailed(embeddings, k, seed).map(|(assignment, _)| assignment)
}

/// Refined neuron set for one prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronSet {
    pub prompt_id: String,
    pub neuron_ids: BTreeSet<u64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NeuronIdRepr {
    Plain(u64),
    LayerIndex(String),
}

#[derive(Deserialize)]
struct NeuronSetRow {
    prompt_id: String,
    neurons: Vec<NeuronIdRepr>,
}

#[derive(Deserialize)]
struct NeuronSetDocument {
    schema_version: u32,
    sets: Vec<NeuronSetRow>,
}

fn pack_layer_index(prompt_id: &str, token: &str) -> Result<u64, ClusterError> {
    let err = |message: &str| ClusterError::NeuronId {
        prompt_id: prompt_id.to_string(),
        token: token.to_string(),
        message: message.to_string(),
    };
    let (layer, index) = token
        .split_once(':')
        .ok_or_else(|| err("expected 'layer:index'"))?;
    let layer: u64 = layer
        .trim()
        .parse()
        .map_err(|_| err("layer is not an unsigned integer"))?;
    let index: u64 = index
        .trim()
        .parse()
        .map_err(|_| err("index is not an unsigned integer"))?;
    if layer > u32::MAX as u64 || index > u32::MAX as u64 {
        return Err(err("layer and index must each fit in 32 bits"));
    }
    Ok((layer << 32) | index)
}

/// Reads a neuron-set JSON document. Ids may be plain integers or
/// `"layer:index"` strings.
pub fn load_neuron_sets(path: &Path) -> Result<Vec<NeuronSet>, ClusterError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ClusterError::Io {
        path: display.clone(),
        source,
    })?;
    let document: NeuronSetDocument =
        serde_json::from_str(&text).map_err(|source| ClusterError::Json {
            path: display.clone(),
            source,
        })?;
    if document.schema_version != PLAN_SCHEMA_VERSION {
        return Err(ClusterError::UnsupportedSchema {
            path: display,
            found: document.schema_version,
            expected: PLAN_SCHEMA_VERSION,
        });
    }
    document
        .sets
        .into_iter()
        .map(|row| {
            let mut neuron_ids = BTreeSet::new();
            for id in row.neurons {
                neuron_ids.insert(match id {
                    NeuronIdRepr::Plain(v) => v,
                    NeuronIdRepr::LayerIndex(s) => pack_layer_index(&row.prompt_id, &s)?,
                });
            }
            Ok(NeuronSet {
                prompt_id: row.prompt_id,
                neuron_ids,
            })
        })
        .collect()
}

/// Consolidated neuron set for one cluster: deactivating (or dampening by
/// `alpha_damp`) every neuron in `union_neurons` covers all member prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationPlan {
    pub cluster_id: u32,
    pub member_prompts: Vec<String>,
    pub union_neurons: BTreeSet<u64>,
    pub alpha_damp: f64,
}

/// One plan per cluster: the union of all member prompts' neuron sets with
/// the dampening factor attached. Prompts without a neuron set contribute
/// nothing; a neuron set whose prompt has no assignment is an error.
pub fn aggregate_neurons(
    assignment: &ClusterAssignment,
    sets: &[NeuronSet],
    alpha_damp: f64,
) -> Result<Vec<MitigationPlan>, ClusterError> {
    if !alpha_damp.is_finite() || !(0.0..=1.0).contains(&alpha_damp) {
        return Err(ClusterError::InvalidAlpha(alpha_damp));
    }
    let mut by_prompt: BTreeMap<&str, &NeuronSet> = BTreeMap::new();
    for set in sets {
        if by_prompt.insert(set.prompt_id.as_str(), set).is_some() {
            return Err(ClusterError::DuplicateNeuronSet(set.prompt_id.clone()));
        }
        if !assignment.assignments.contains_key(&set.prompt_id) {
            return Err(ClusterError::UnassignedPrompt(set.prompt_id.clone()));
        }
    }
    let mut plans: Vec<MitigationPlan> = (0..assignment.k)
        .map(|cluster_id| MitigationPlan {
            cluster_id,
            member_prompts: Vec::new(),
            union_neurons: BTreeSet::new(),
            alpha_damp,
        })
        .collect();
    for (prompt_id, &cluster_id) in &assignment.assignments {
        let plan = &mut plans[cluster_id as usize];
        plan.member_prompts.push(prompt_id.clone());
        if let Some(set) = by_prompt.get(prompt_id.as_str()) {
            plan.union_neurons.extend(&set.neuron_ids);
        }
    }
    Ok(plans)
}

#[derive(Serialize, Deserialize)]
struct PlanDocument {
    schema_version: u32,
    plans: Vec<MitigationPlan>,
}

/// Writes plans as a versioned JSON document; [`import_plan`] restores them
/// exactly, including the raw `alpha_damp` value.
pub fn export_plan(plans: &[MitigationPlan], path: &Path) -> Result<(), ClusterError> {
    let document = PlanDocument {
        schema_version: PLAN_SCHEMA_VERSION,
        plans: plans.to_vec(),
    };
    let mut text =
        serde_json::to_string_pretty(&document).map_err(|source| ClusterError::Json {
            path: path.display().to_string(),
            source,
        })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| ClusterError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a plan document written by [`export_plan`].
pub fn import_plan(path: &Path) -> Result<Vec<MitigationPlan>, ClusterError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ClusterError::Io {
        path: display.clone(),
        source,
    })?;
    let document: PlanDocument =
        serde_json::from_str(&text).map_err(|source| ClusterError::Json {
            path: display.clone(),
            source,
        })?;
    if document.schema_version != PLAN_SCHEMA_VERSION {
        return Err(ClusterError::UnsupportedSchema {
            path: display,
            found: document.schema_version,
            expected: PLAN_SCHEMA_VERSION,
        });
    }
    Ok(document.plans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn embedding(id: &str, vector: Vec<f64>) -> PromptEmbedding {
        PromptEmbedding {
            prompt_id: id.to_string(),
            vector,
        }
    }

    /// Two tight blobs around the given centers, twenty points each.
    fn two_blobs(centers: [[f64; 3]; 2], seed: u64) -> Vec<PromptEmbedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (b, center) in centers.iter().enumerate() {
            for i in 0..20 {
                let vector = center
                    .iter()
                    .map(|&c| c + rng.gen_range(-0.5..0.5))
                    .collect();
                out.push(embedding(&format!("b{b}-{i:02}"), vector));
            }
        }
        out
    }

    #[test]
    fn distinct_points_with_k_equal_n_become_singletons() {
        let embeddings: Vec<_> = (0..12)
            .map(|i| embedding(&format!("p{i:02}"), vec![i as f64 * 10.0, 0.0]))
            .collect();
        let assignment = cluster_prompts(&embeddings, 12, 7).unwrap();
        let mut sizes = vec![0u32; 12];
        for &cluster in assignment.assignments.values() {
            assert!(cluster < 12);
            sizes[cluster as usize] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 1), "{sizes:?}");
    }

    #[test]
    fn well_separated_blobs_are_recovered_exactly() {
        let embeddings = two_blobs([[0.0, 0.0, 0.0], [10.0, 10.0, 10.0]], 3);
        let (assignment, diagnostics) = cluster_prompts_detailed(&embeddings, 2, 11).unwrap();
        assert!(diagnostics.converged);
        let first = assignment.assignments["b0-00"];
        let second = assignment.assignments["b1-00"];
        assert_ne!(first, second);
        for (prompt, &cluster) in &assignment.assignments {
            let expected = if prompt.starts_with("b0") {
                first
            } else {
                second
            };
            assert_eq!(cluster, expected, "{prompt}");
        }
        // Brute-force oracle: every point sits with its nearest centroid.
        for e in &embeddings {
            let (nearest_index, _) = nearest(&e.vector, &diagnostics.centroids);
            assert_eq!(assignment.assignments[&e.prompt_id], nearest_index as u32);
        }
        assert_eq!(assignment.members(first).len(), 20);
        assert_eq!(assignment.members(second).len(), 20);
    }

    #[test]
    fn same_seed_reproduces_the_assignment() {
        let embeddings = two_blobs([[0.0, 0.0, 0.0], [4.0, -2.0, 1.0]], 8);
        let a = cluster_prompts(&embeddings, 5, 42).unwrap();
        let b = cluster_prompts(&embeddings, 5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_never_increases() {
        let embeddings = two_blobs([[0.0, 1.0, 2.0], [1.5, 0.5, 2.5]], 21);
        let (_, diagnostics) = cluster_prompts_detailed(&embeddings, 4, 9).unwrap();
        let history = &diagnostics.objective_history;
        assert!(history.len() >= 2);
        for pair in history.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12,
                "objective rose: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn clustering_validates_inputs() {
        let embeddings = vec![embedding("a", vec![0.0]), embedding("b", vec![1.0])];
        assert!(matches!(
            cluster_prompts(&embeddings, 3, 0),
            Err(ClusterError::BadClusterCount { k: 3, prompts: 2 })
        ));
        assert!(matches!(
            cluster_prompts(&embeddings, 0, 0),
            Err(ClusterError::BadClusterCount { .. })
        ));
        let ragged = vec![embedding("a", vec![0.0]), embedding("b", vec![1.0, 2.0])];
        assert!(matches!(
            cluster_prompts(&ragged, 1, 0),
            Err(ClusterError::DimensionMismatch { .. })
        ));
        let nan = vec![embedding("a", vec![f64::NAN])];
        assert!(matches!(
            cluster_prompts(&nan, 1, 0),
            Err(ClusterError::NonFinite { .. })
        ));
        let duped = vec![embedding("a", vec![0.0]), embedding("a", vec![1.0])];
        assert!(matches!(
            cluster_prompts(&duped, 1, 0),
            Err(ClusterError::DuplicatePrompt(p)) if p == "a"
        ));
    }

    #[test]
    fn embeddings_csv_round_trips_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::write(&good, "p1, 0.5, -1.25, 3\n\np2,0,0,0\r\np3,1e-3,2,9.5\n").unwrap();
        let rows = load_embeddings(&good).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].prompt_id, "p1");
        assert_eq!(rows[0].vector, vec![0.5, -1.25, 3.0]);
        assert_eq!(rows[1].vector, vec![0.0, 0.0, 0.0]);

        let bad_number = dir.path().join("bad.csv");
        std::fs::write(&bad_number, "p1,0.5\np2,oops\n").unwrap();
        assert!(matches!(
            load_embeddings(&bad_number),
            Err(ClusterError::EmbeddingParse { line: 2, .. })
        ));

        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "p1,0.5,1.0\np2,0.5\n").unwrap();
        assert!(matches!(
            load_embeddings(&ragged),
            Err(ClusterError::EmbeddingParse { line: 2, .. })
        ));

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "\n\n").unwrap();
        assert!(matches!(
            load_embeddings(&empty),
            Err(ClusterError::EmptyEmbeddings { .. })
        ));

        let missing = dir.path().join("missing.csv");
        assert!(matches!(
            load_embeddings(&missing),
            Err(ClusterError::Io { .. })
        ));
    }

    #[test]
    fn normalization_yields_unit_vectors_and_keeps_zeros() {
        let mut rows = vec![
            embedding("a", vec![3.0, 4.0]),
            embedding("z", vec![0.0, 0.0]),
        ];
        l2_normalize(&mut rows);
        let norm = rows[0].vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(rows[0].vector, vec![0.6, 0.8]);
        assert_eq!(rows[1].vector, vec![0.0, 0.0]);
    }

    fn neuron_set(prompt: &str, ids: &[u64]) -> NeuronSet {
        NeuronSet {
            prompt_id: prompt.to_string(),
            neuron_ids: ids.iter().copied().collect(),
        }
    }

    fn assignment_of(pairs: &[(&str, u32)], k: u32) -> ClusterAssignment {
        ClusterAssignment {
            k,
            assignments: pairs.iter().map(|(p, c)| (p.to_string(), *c)).collect(),
        }
    }

    #[test]
    fn union_covers_every_member_set() {
        let assignment = assignment_of(&[("p1", 0), ("p2", 0), ("p3", 1)], 2);
        let sets = vec![
            neuron_set("p1", &[1, 2]),
            neuron_set("p2", &[2, 3]),
            neuron_set("p3", &[7]),
        ];
        let plans = aggregate_neurons(&assignment, &sets, 0.0).unwrap();
        assert_eq!(plans.len(), 2);
        assert_eq!(
            plans[0].union_neurons,
            [1u64, 2, 3].into_iter().collect::<BTreeSet<_>>()
        );
        assert_eq!(plans[0].member_prompts, vec!["p1", "p2"]);
        // A single-member cluster's plan is exactly that member's set.
        assert_eq!(
            plans[1].union_neurons,
            [7u64].into_iter().collect::<BTreeSet<_>>()
        );
        for plan in &plans {
            for set in sets
                .iter()
                .filter(|s| plan.member_prompts.contains(&s.prompt_id))
            {
                assert!(set.neuron_ids.is_subset(&plan.union_neurons));
            }
        }
    }

    #[test]
    fn empty_sets_and_clusters_produce_empty_unions() {
        let assignment = assignment_of(&[("p1", 0), ("p2", 1)], 3);
        let sets = vec![neuron_set("p1", &[])];
        let plans = aggregate_neurons(&assignment, &sets, 0.1).unwrap();
        assert_eq!(plans.len(), 3);
        assert!(plans[0].union_neurons.is_empty());
        assert!(plans[1].union_neurons.is_empty());
        assert!(plans[2].union_neurons.is_empty());
        assert!(plans[2].member_prompts.is_empty());
        assert!(plans.iter().all(|p| p.alpha_damp == 0.1));
    }

    #[test]
    fn aggregation_rejects_bad_inputs() {
        let assignment = assignment_of(&[("p1", 0)], 1);
        let stray = vec![neuron_set("ghost", &[1])];
        assert!(matches!(
            aggregate_neurons(&assignment, &stray, 0.0),
            Err(ClusterError::UnassignedPrompt(p)) if p == "ghost"
        ));
        let duped = vec![neuron_set("p1", &[1]), neuron_set("p1", &[2])];
        assert!(matches!(
            aggregate_neurons(&assignment, &duped, 0.0),
            Err(ClusterError::DuplicateNeuronSet(_))
        ));
        for alpha in [-0.1, 1.1, f64::NAN] {
            assert!(matches!(
                aggregate_neurons(&assignment, &[], alpha),
                Err(ClusterError::InvalidAlpha(_))
            ));
        }
    }

    #[test]
    fn neuron_ids_accept_integer_and_layer_index_forms() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sets.json");
        std::fs::write(
            &path,
            r#"{"schema_version":1,"sets":[{"prompt_id":"p1","neurons":[5,"3:17",5]}]}"#,
        )
        .unwrap();
        let sets = load_neuron_sets(&path).unwrap();
        assert_eq!(sets.len(), 1);
        let expected: BTreeSet<u64> = [5u64, (3u64 << 32) | 17].into_iter().collect();
        assert_eq!(sets[0].neuron_ids, expected);

        std::fs::write(
            &path,
            r#"{"schema_version":1,"sets":[{"prompt_id":"p1","neurons":["3-17"]}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_neuron_sets(&path),
            Err(ClusterError::NeuronId { .. })
        ));

        std::fs::write(&path, r#"{"schema_version":9,"sets":[]}"#).unwrap();
        assert!(matches!(
            load_neuron_sets(&path),
            Err(ClusterError::UnsupportedSchema { found: 9, .. })
        ));
    }

    #[test]
    fn plans_round_trip_through_the_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        let plans = vec![
            MitigationPlan {
                cluster_id: 0,
                member_prompts: vec!["p1".into(), "p2".into()],
                union_neurons: [1u64, 2, (4u64 << 32) | 9].into_iter().collect(),
                alpha_damp: 0.2,
            },
            MitigationPlan {
                cluster_id: 1,
                member_prompts: Vec::new(),
                union_neurons: BTreeSet::new(),
                alpha_damp: 0.2,
            },
        ];
        export_plan(&plans, &path).unwrap();
        let restored = import_plan(&path).unwrap();
        assert_eq!(restored, plans);
        assert_eq!(restored[0].alpha_damp, 0.2);

        export_plan(&[], &path).unwrap();
        assert_eq!(import_plan(&path).unwrap(), Vec::new());
    }
}
