//! Ensemble cover-version identification.
//!
//! Given a pool of candidate versions of one musical work and their pairwise
//! similarity scores, the engine converts scores to distances, collapses the
//! distance graph with a loose Floyd-Warshall procedure, clusters the
//! candidates hierarchically, and scores each candidate against a reference
//! track as `100 × (1 − cophenetic distance)`.
//!
//! ```
//! use covergraph_core::{generate_synthetic_work, run_pipeline, EngineConfig, SyntheticSpec};
//!
//! let spec = SyntheticSpec { n_candidates: 30, rng_seed: 3, ..Default::default() };
//! let (manifest, scores) = generate_synthetic_work(&spec).unwrap();
//! let analysis = run_pipeline(&manifest, &scores, &EngineConfig::default()).unwrap();
//! assert_eq!(analysis.scores.rows[manifest.reference_index()].ensemble_score, 100.0);
//! ```

pub mod collapse;
pub mod distance;
pub mod error;
pub mod evaluation;
pub mod hierarchy;
pub mod model;
pub mod pipeline;
pub mod scoring;
pub mod workspace;

pub use collapse::{collapse, CollapseMode, CollapseParams, CollapseResult, PathStep};
pub use distance::{matrix_to_distances, score_to_distance, LogisticParams};
pub use error::{Error, Result};
pub use evaluation::{
    classify_at, compare_direct_vs_ensemble, optimal_threshold, retrieval_stats, threshold_sweep,
    universal_threshold, PairedReport, RetrievalStats, ThresholdReport,
};
pub use hierarchy::{build_dendrogram, final_scores, Dendrogram, FinalScoreTable, Linkage};
pub use model::{load_score_matrix, validate_labels, DistanceMatrix, Label, ScoreMatrix, TrackRef, WorkManifest};
pub use pipeline::{run_pipeline, EngineConfig, PipelineError, Stage, WorkAnalysis};
pub use scoring::{
    generate_synthetic_work, score_all_pairs, score_pair_alignment, AlignmentParams, FeatureSequence,
    SyntheticSpec,
};
pub use workspace::{ScoreSource, Workspace};
