//! Memorization-audit primitives for generative image models.
//!
//! The crate is organized as a pipeline:
//!
//! * [`pixel`] - grayscale rasters, binary masks, resizing, and mask algebra;
//! * [`ssim`] - windowed SSIM / multi-scale SSIM kernels, a brute-force
//!   reference path, and a data-parallel batch entry point;
//! * [`classify`] - the adaptive foreground/background similarity split and
//!   the four-way memorization verdict;
//! * [`audit`] - corpus-scale best-match retrieval, one-to-many match
//!   statistics, and mitigation transition scoring;
//! * [`cluster`] - prompt-embedding k-means and per-cluster neuron-set union
//!   plans;
//! * [`synth`] - deterministic synthetic images shared by the bench harness
//!   and the test suites.

pub mod audit;
pub mod classify;
pub mod cluster;
pub mod pixel;
pub mod ssim;
pub mod synth;

pub use audit::{
    best_match, best_match_unmasked, comparison_count, mitigation_score, mitigation_summary,
    one_to_many, transition_score, AuditError, ClassCounts, CorpusEntry, GenerationRecord,
    MatchRecord, MitigationSummary, OneToManyStats, PreparedCorpus,
};
pub use classify::{
    adaptive_branch, classify, classify_pair, masked_similarities, region_similarities,
    AdaptiveBranch, ClassifyError, FbMemConfig, MemClass, SimilarityTriple,
};
pub use cluster::{
    aggregate_neurons, cluster_prompts, cluster_prompts_detailed, export_plan, import_plan,
    l2_normalize, load_embeddings, load_neuron_sets, ClusterAssignment, ClusterError,
    KmeansDiagnostics, MitigationPlan, NeuronSet, PromptEmbedding, PLAN_SCHEMA_VERSION,
};
pub use pixel::{
    apply_mask, foreground_proportion, load_image, load_mask, resize, resize_mask, BinaryMask,
    ChannelPolicy, MaskRegion, MaskedImage, PixelError, PixelImage,
};
pub use ssim::{
    batch_similarity, max_scales, ms_ssim, ms_ssim_precomputed, ssim, ssim_components, MetricError,
    MsSsimParams, MsSsimPrecomp, ScaleWeights, ScoreMatrix, SimilarityScore, SsimParams,
};
pub use synth::{add_noise, random_image, uniform_image};
