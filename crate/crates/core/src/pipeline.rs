//! End-to-end analysis of one work: distances, collapse, clustering, scores.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collapse::{collapse, CollapseParams, CollapseResult};
use crate::distance::{matrix_to_distances, LogisticParams};
use crate::error::Error;
use crate::hierarchy::{build_dendrogram, final_scores, Dendrogram, FinalScoreTable, Linkage};
use crate::model::{DistanceMatrix, ScoreMatrix, WorkManifest};

pub const ENGINE_VERSION: &str = concat!("covergraph ", env!("CARGO_PKG_VERSION"));

/// Parameters of everything downstream of the raw scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EngineConfig {
    pub logistic: LogisticParams,
    pub collapse: CollapseParams,
    pub linkage: Linkage,
}

impl EngineConfig {
    pub fn validate(&self) -> crate::Result<()> {
        self.logistic.validate()?;
        self.collapse.validate()
    }
}

/// Pipeline stage, used to tag errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    CoreModel,
    PairwiseScoring,
    DistanceTransform,
    GraphCollapse,
    Hierarchy,
    Evaluation,
    Workspace,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::CoreModel => "core-model",
            Stage::PairwiseScoring => "pairwise-scoring",
            Stage::DistanceTransform => "distance-transform",
            Stage::GraphCollapse => "graph-collapse",
            Stage::Hierarchy => "hierarchy",
            Stage::Evaluation => "evaluation",
            Stage::Workspace => "workspace",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {error}")]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T> StageContext<T> for crate::Result<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|error| PipelineError { stage, error })
    }
}

#[derive(Debug, Clone)]
pub struct WorkAnalysis {
    pub distances: DistanceMatrix,
    pub collapse: CollapseResult,
    pub dendrogram: Dendrogram,
    pub scores: FinalScoreTable,
}

pub fn run_pipeline(
    manifest: &WorkManifest,
    scores: &ScoreMatrix,
    config: &EngineConfig,
) -> Result<WorkAnalysis, PipelineError> {
    config.validate().stage(Stage::CoreModel)?;
    if scores.track_ids() != manifest.track_ids().as_slice() {
        return Err(Error::invalid("scores", "track order differs from the manifest")).stage(Stage::CoreModel);
    }
    scores.check_invariants().stage(Stage::CoreModel)?;
    let distances = matrix_to_distances(scores, &config.logistic);
    let collapsed = collapse(&distances, &config.collapse).stage(Stage::GraphCollapse)?;
    let dendrogram = build_dendrogram(&collapsed.distances, config.linkage).stage(Stage::Hierarchy)?;
    let table = final_scores(&dendrogram, manifest.reference_index(), scores).stage(Stage::Hierarchy)?;
    Ok(WorkAnalysis {
        distances,
        collapse: collapsed,
        dendrogram,
        scores: table,
    })
}

/// Short stable digest of any serializable value, chained onto `parent`.
pub fn param_hash<T: Serialize>(parent: &str, value: &T) -> String {
    let mut h = Sha256::new();
    h.update(parent.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(value).expect("parameters serialize"));
    hex::encode(&h.finalize()[..8])
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}
