//! Directory-tree workspace: one subdirectory per work holding every
//! pipeline artifact, stamped with the engine version and the hash of the
//! parameters that produced it.
//!
//! ```text
//! <root>/works/<work_id>/
//!     manifest.json  scores.csv  distances.csv  collapsed.csv  bridges.csv
//!     dendrogram.json  final_scores.csv  meta.json
//!     annotation.json  annotations.jsonl
//! <root>/reports/
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::collapse::{load_bridges, CollapseResult};
use crate::distance::matrix_to_distances;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_collection, threshold_sweep, CollectionReport, SweepPoint};
use crate::hierarchy::{build_dendrogram, final_scores, Dendrogram, FinalScoreTable, Linkage, Merge, TrackScore, TreeNode};
use crate::model::{format_f64, load_score_matrix, read_comments, strip_comments, DistanceMatrix, ScoreMatrix, WorkManifest};
use crate::pipeline::{content_hash, param_hash, EngineConfig, PipelineError, Stage, StageContext, ENGINE_VERSION};
use crate::scoring::{load_features_dir, score_all_pairs, AlignmentParams, SmithWaterman};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const DISTANCES_FILE: &str = "distances.csv";
pub const COLLAPSED_FILE: &str = "collapsed.csv";
pub const BRIDGES_FILE: &str = "bridges.csv";
pub const DENDROGRAM_FILE: &str = "dendrogram.json";
pub const FINAL_SCORES_FILE: &str = "final_scores.csv";
pub const META_FILE: &str = "meta.json";
pub const ANNOTATION_FILE: &str = "annotation.json";
pub const JOURNAL_FILE: &str = "annotations.jsonl";

/// Where a work's raw scores come from.
#[derive(Debug, Clone)]
pub enum ScoreSource {
    /// Triplet or dense score CSV.
    File(PathBuf),
    /// `<dir>/<track_id>.csv` feature files scored with Smith-Waterman.
    Features { dir: PathBuf, params: AlignmentParams },
    /// Scores already in memory, identified by a descriptor string.
    Provided { scores: ScoreMatrix, descriptor: String },
}

/// Parameter bookkeeping for one work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkMeta {
    pub engine_version: String,
    pub work_id: String,
    pub scores_hash: String,
    pub distances_hash: String,
    /// Hash of the full parameter chain behind the downstream artifacts.
    pub params_hash: String,
    pub config: EngineConfig,
    pub sweeps_run: usize,
    pub converged: bool,
}

/// Stages regenerated by a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOutcome {
    pub scores_written: bool,
    pub distances_written: bool,
    pub downstream_written: bool,
}

/// Dendrogram artifact: the merge list plus a nested tree for the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DendrogramFile {
    pub engine_version: String,
    pub params_hash: String,
    pub work_id: String,
    pub linkage: Linkage,
    pub config: EngineConfig,
    pub reference_id: String,
    pub track_ids: Vec<String>,
    pub merges: Vec<Merge>,
    pub root: TreeNode,
}

impl DendrogramFile {
    pub fn dendrogram(&self) -> Result<Dendrogram> {
        Dendrogram::from_merges(self.track_ids.len(), self.merges.clone(), self.linkage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub work_id: String,
    /// Threshold on the ensemble score scale, in `[0, 100]`.
    pub threshold: f64,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
    /// Tracks with `ensemble_score >= threshold` when the annotation was written.
    pub positives: Vec<String>,
    pub revision: u64,
    pub params_hash: String,
}

/// A fully processed work loaded back from disk.
#[derive(Debug, Clone)]
pub struct LoadedWork {
    pub manifest: WorkManifest,
    pub meta: WorkMeta,
    pub scores: FinalScoreTable,
    pub dendrogram_file: DendrogramFile,
    pub dendrogram: Dendrogram,
    pub collapse: CollapseResult,
}

impl LoadedWork {
    pub fn track_index(&self, id: &str) -> Option<usize> {
        self.manifest.index_of(id)
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Leaves the file untouched when the content is unchanged.
fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<()> {
    if fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(());
    }
    write_atomic(path, bytes)
}

fn stamp(hash_key: &str, hash: &str) -> Vec<String> {
    vec![format!("engine={ENGINE_VERSION}"), format!("{hash_key}={hash}")]
}

/// Human-readable parameter set recorded next to the hash.
fn param_line(config: &EngineConfig) -> String {
    format!(
        "logistic.midpoint={},logistic.scale={},eta={},linkage={}",
        format_f64(config.logistic.midpoint),
        format_f64(config.logistic.scale),
        format_f64(config.collapse.eta),
        config.linkage
    )
}

fn valid_work_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("work_id", format!("{id:?} is not usable as a directory name")))
    }
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("works")).map_err(|e| Error::io(&root, e))?;
        Ok(Workspace { root })
    }

    /// Opens an existing workspace without creating anything.
    pub fn open_existing(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("works").is_dir() {
            return Err(Error::NotFound(root.join("works")));
        }
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn work_dir(&self, work_id: &str) -> PathBuf {
        self.root.join("works").join(work_id)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    /// Work ids with a completed run, ascending.
    pub fn works(&self) -> Result<Vec<String>> {
        let dir = self.root.join("works");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().join(META_FILE).is_file() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn read_meta(&self, work_id: &str) -> Result<WorkMeta> {
        let path = self.work_dir(work_id).join(META_FILE);
        let text = read_text(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    /// Runs the full pipeline for one work, regenerating only the stages
    /// whose parameter hash changed. Identical inputs produce byte-identical
    /// artifacts.
    pub fn run_work(
        &self,
        manifest: &WorkManifest,
        source: &ScoreSource,
        config: &EngineConfig,
    ) -> std::result::Result<RunOutcome, PipelineError> {
        config.validate().stage(Stage::CoreModel)?;
        valid_work_id(&manifest.work_id).stage(Stage::Workspace)?;
        let dir = self.work_dir(&manifest.work_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)).stage(Stage::Workspace)?;
        let previous = self.read_meta(&manifest.work_id).ok();
        let mut outcome = RunOutcome::default();

        let manifest_json = manifest.to_json() + "\n";
        write_if_changed(&dir.join(MANIFEST_FILE), manifest_json.as_bytes()).stage(Stage::Workspace)?;
        let manifest_hash = content_hash(manifest_json.as_bytes());

        // Raw scores.
        let scores_path = dir.join(SCORES_FILE);
        let (scores_hash, fresh_scores) = match source {
            ScoreSource::File(path) => {
                let bytes = fs::read(path).map_err(|e| Error::io(path, e)).stage(Stage::PairwiseScoring)?;
                (param_hash(&manifest_hash, &("file", content_hash(&bytes))), None)
            }
            ScoreSource::Features { dir: fdir, params } => {
                let digests = feature_digests(manifest, fdir).stage(Stage::PairwiseScoring)?;
                (param_hash(&manifest_hash, &("features", params, digests)), None)
            }
            ScoreSource::Provided { scores, descriptor } => {
                (param_hash(&manifest_hash, &("provided", descriptor)), Some(scores))
            }
        };
        let scores_current = previous.as_ref().is_some_and(|m| m.scores_hash == scores_hash) && scores_path.is_file();
        let scores = if scores_current {
            load_score_matrix(&scores_path, manifest).stage(Stage::PairwiseScoring)?
        } else {
            let scores = match (source, fresh_scores) {
                (_, Some(s)) => s.clone(),
                (ScoreSource::File(path), _) => load_score_matrix(path, manifest).stage(Stage::PairwiseScoring)?,
                (ScoreSource::Features { dir: fdir, params }, _) => {
                    let features = load_features_dir(manifest, fdir).stage(Stage::PairwiseScoring)?;
                    score_all_pairs(manifest, &features, &SmithWaterman(*params)).stage(Stage::PairwiseScoring)?
                }
                (ScoreSource::Provided { .. }, None) => unreachable!(),
            };
            if scores.track_ids() != manifest.track_ids().as_slice() {
                return Err(Error::invalid("scores", "track order differs from the manifest"))
                    .stage(Stage::PairwiseScoring);
            }
            scores.check_invariants().stage(Stage::PairwiseScoring)?;
            let mut buf = Vec::new();
            scores
                .write_triplets(&mut buf, &stamp("scores_hash", &scores_hash))
                .stage(Stage::PairwiseScoring)?;
            write_if_changed(&scores_path, &buf).stage(Stage::Workspace)?;
            outcome.scores_written = true;
            scores
        };

        // Distances.
        let distances_hash = param_hash(&scores_hash, &config.logistic);
        let distances = matrix_to_distances(&scores, &config.logistic);
        let distances_path = dir.join(DISTANCES_FILE);
        let distances_current =
            previous.as_ref().is_some_and(|m| m.distances_hash == distances_hash) && distances_path.is_file();
        if !distances_current {
            let mut comments = stamp("distances_hash", &distances_hash);
            comments.push(format!(
                "logistic.midpoint={},logistic.scale={}",
                config.logistic.midpoint, config.logistic.scale
            ));
            let mut buf = Vec::new();
            distances.write_dense(&mut buf, &comments).stage(Stage::DistanceTransform)?;
            write_if_changed(&distances_path, &buf).stage(Stage::Workspace)?;
            outcome.distances_written = true;
        }

        // Collapse, dendrogram, final scores.
        let params_hash = param_hash(&distances_hash, &(config.collapse, config.linkage));
        let downstream_current = previous.as_ref().is_some_and(|m| m.params_hash == params_hash)
            && [COLLAPSED_FILE, BRIDGES_FILE, DENDROGRAM_FILE, FINAL_SCORES_FILE]
                .iter()
                .all(|f| dir.join(f).is_file());
        let (sweeps_run, converged) = if downstream_current {
            let m = previous.as_ref().unwrap();
            (m.sweeps_run, m.converged)
        } else {
            let collapsed = crate::collapse::collapse(&distances, &config.collapse).stage(Stage::GraphCollapse)?;
            let dendrogram = build_dendrogram(&collapsed.distances, config.linkage).stage(Stage::Hierarchy)?;
            let table = final_scores(&dendrogram, manifest.reference_index(), &scores).stage(Stage::Hierarchy)?;

            let mut downstream_stamp = stamp("params_hash", &params_hash);
            downstream_stamp.push(param_line(config));
            let mut comments = downstream_stamp.clone();
            comments.push(collapsed.header_comment(&config.collapse));
            let mut buf = Vec::new();
            collapsed.distances.write_dense(&mut buf, &comments).stage(Stage::GraphCollapse)?;
            write_if_changed(&dir.join(COLLAPSED_FILE), &buf).stage(Stage::Workspace)?;

            let mut buf = Vec::new();
            crate::model::write_comments(&mut buf, &downstream_stamp).stage(Stage::Workspace)?;
            collapsed.write_bridges(&mut buf).stage(Stage::GraphCollapse)?;
            write_if_changed(&dir.join(BRIDGES_FILE), &buf).stage(Stage::Workspace)?;

            let ids = manifest.track_ids();
            let file = DendrogramFile {
                engine_version: ENGINE_VERSION.to_string(),
                params_hash: params_hash.clone(),
                work_id: manifest.work_id.clone(),
                linkage: config.linkage,
                config: *config,
                reference_id: manifest.reference.id.clone(),
                root: dendrogram.to_tree(&ids),
                track_ids: ids,
                merges: dendrogram.merges.clone(),
            };
            let json = serde_json::to_string(&file).expect("dendrogram serializes") + "\n";
            write_if_changed(&dir.join(DENDROGRAM_FILE), json.as_bytes()).stage(Stage::Workspace)?;

            let csv = table.to_csv(&downstream_stamp);
            write_if_changed(&dir.join(FINAL_SCORES_FILE), csv.as_bytes()).stage(Stage::Workspace)?;
            outcome.downstream_written = true;
            (collapsed.sweeps_run, collapsed.converged)
        };

        let meta = WorkMeta {
            engine_version: ENGINE_VERSION.to_string(),
            work_id: manifest.work_id.clone(),
            scores_hash,
            distances_hash,
            params_hash,
            config: *config,
            sweeps_run,
            converged,
        };
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
        write_if_changed(&dir.join(META_FILE), json.as_bytes()).stage(Stage::Workspace)?;
        Ok(outcome)
    }

    /// Loads every artifact of a processed work.
    pub fn load_work(&self, work_id: &str) -> Result<LoadedWork> {
        valid_work_id(work_id)?;
        let dir = self.work_dir(work_id);
        let meta = self.read_meta(work_id)?;
        let manifest = WorkManifest::load(dir.join(MANIFEST_FILE))?;
        let mut scores = load_final_scores(&dir.join(FINAL_SCORES_FILE), &manifest)?;

        let dendrogram_path = dir.join(DENDROGRAM_FILE);
        let dendrogram_file: DendrogramFile = serde_json::from_str(&read_text(&dendrogram_path)?)
            .map_err(|e| Error::parse(dendrogram_path.display().to_string(), e))?;
        let dendrogram = dendrogram_file.dendrogram()?;
        let cophenetic = dendrogram.cophenetic_row(scores.reference);
        for (row, c) in scores.rows.iter_mut().zip(cophenetic) {
            row.cophenetic_to_reference = c;
        }

        let distances = DistanceMatrix::load(dir.join(COLLAPSED_FILE), true)?;
        let bridges = load_bridges(dir.join(BRIDGES_FILE))?;
        let collapse = CollapseResult::from_parts(distances, &bridges, meta.sweeps_run, meta.converged)?;
        Ok(LoadedWork {
            manifest,
            meta,
            scores,
            dendrogram_file,
            dendrogram,
            collapse,
        })
    }

    /// Raw dendrogram JSON exactly as stored.
    pub fn dendrogram_json(&self, work_id: &str) -> Result<String> {
        valid_work_id(work_id)?;
        read_text(&self.work_dir(work_id).join(DENDROGRAM_FILE))
    }

    pub fn sweep(&self, work_id: &str, column: ScoreColumn) -> Result<Vec<SweepPoint>> {
        let work = self.load_work(work_id)?;
        let (idx, labels) = crate::evaluation::evaluated_tracks(&work.manifest)?;
        let scores: Vec<f64> = idx
            .iter()
            .map(|&i| column.pick(&work.scores.rows[i]))
            .collect();
        threshold_sweep(&scores, &labels)
    }

    /// Ranking and classification reports over every labeled work.
    pub fn evaluate(&self) -> Result<CollectionReport> {
        let mut loaded = Vec::new();
        for id in self.works()? {
            let work = self.load_work(&id)?;
            if work.manifest.has_labels() {
                loaded.push(work);
            }
        }
        if loaded.is_empty() {
            return Err(Error::NoLabels("workspace has no labeled works".into()));
        }
        let refs: Vec<_> = loaded.iter().map(|w| (&w.manifest, &w.scores, &w.collapse)).collect();
        evaluate_collection(&refs)
    }

    pub fn read_annotation(&self, work_id: &str) -> Result<Option<Annotation>> {
        valid_work_id(work_id)?;
        let path = self.work_dir(work_id).join(ANNOTATION_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| Error::parse(path.display().to_string(), e)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Appends the annotation to the journal, then atomically replaces the
    /// current snapshot. Returns the stored annotation and whether
    /// `base_revision` was stale (the write still wins).
    ///
    /// Callers must serialize writes to the same work.
    pub fn write_annotation(
        &self,
        work_id: &str,
        threshold: f64,
        annotator: &str,
        base_revision: Option<u64>,
    ) -> Result<(Annotation, bool)> {
        if !(0.0..=100.0).contains(&threshold) {
            return Err(Error::invalid("threshold", format!("{threshold} outside [0, 100]")));
        }
        let work = self.load_work(work_id)?;
        let current = self.read_annotation(work_id)?;
        let current_revision = current.as_ref().map_or(0, |a| a.revision);
        let conflict = base_revision.is_some_and(|b| b != current_revision);
        let annotation = Annotation {
            work_id: work_id.to_string(),
            threshold,
            annotator: annotator.to_string(),
            timestamp: Utc::now(),
            positives: positives_at(&work.scores, threshold),
            revision: current_revision + 1,
            params_hash: work.meta.params_hash.clone(),
        };
        let dir = self.work_dir(work_id);
        let journal = dir.join(JOURNAL_FILE);
        let mut line = serde_json::to_string(&annotation).expect("annotation serializes");
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&journal)
            .and_then(|mut f| f.write_all(line.as_bytes()).and_then(|_| f.sync_data()))
            .map_err(|e| Error::io(&journal, e))?;
        let snapshot = serde_json::to_string_pretty(&annotation).expect("annotation serializes") + "\n";
        write_atomic(&dir.join(ANNOTATION_FILE), snapshot.as_bytes())?;
        Ok((annotation, conflict))
    }

    pub fn read_journal(&self, work_id: &str) -> Result<Vec<Annotation>> {
        valid_work_id(work_id)?;
        let path = self.work_dir(work_id).join(JOURNAL_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::parse(path.display().to_string(), e)))
            .collect()
    }

    pub fn write_report<T: Serialize>(&self, name: &str, report: &T) -> Result<PathBuf> {
        let dir = self.reports_dir();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(name);
        let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }
}

/// Content digest of every candidate's feature file.
fn feature_digests(manifest: &WorkManifest, dir: &Path) -> Result<Vec<(String, String)>> {
    manifest
        .candidates
        .iter()
        .map(|t| {
            let path = dir.join(format!("{}.csv", t.id));
            match fs::read(&path) {
                Ok(bytes) => Ok((t.id.clone(), content_hash(&bytes))),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFeatures(t.id.clone())),
                Err(e) => Err(Error::io(path, e)),
            }
        })
        .collect()
}

/// Tracks whose ensemble score reaches `threshold`, in manifest order.
pub fn positives_at(scores: &FinalScoreTable, threshold: f64) -> Vec<String> {
    scores
        .rows
        .iter()
        .filter(|r| r.ensemble_score >= threshold)
        .map(|r| r.track_id.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreColumn {
    Direct,
    Ensemble,
}

impl ScoreColumn {
    pub fn pick(self, row: &TrackScore) -> f64 {
        match self {
            ScoreColumn::Direct => row.direct_score,
            ScoreColumn::Ensemble => row.ensemble_score,
        }
    }
}

impl std::str::FromStr for ScoreColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ScoreColumn::Direct),
            "ensemble" => Ok(ScoreColumn::Ensemble),
            other => Err(Error::invalid("column", format!("unknown score column {other:?}"))),
        }
    }
}

/// Parses `final_scores.csv` back into a table. Cophenetic distances are
/// approximated from the ensemble column until the dendrogram fills them in.
fn load_final_scores(path: &Path, manifest: &WorkManifest) -> Result<FinalScoreTable> {
    let text = read_text(path)?;
    let body = strip_comments(&text);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::with_capacity(manifest.len());
    for rec in reader.deserialize::<(String, f64, f64)>() {
        let (track_id, direct_score, ensemble_score) = rec.map_err(|e| Error::parse(path.display().to_string(), e))?;
        rows.push(TrackScore {
            track_id,
            direct_score,
            ensemble_score,
            cophenetic_to_reference: 1.0 - ensemble_score / 100.0,
        });
    }
    if rows.iter().map(|r| &r.track_id).ne(manifest.candidates.iter().map(|t| &t.id)) {
        return Err(Error::parse(path.display().to_string(), "track order differs from the manifest"));
    }
    Ok(FinalScoreTable {
        reference: manifest.reference_index(),
        rows,
    })
}

/// Artifact header lines (`engine=...`, `params_hash=...`) of a CSV file.
pub fn artifact_header(path: &Path) -> Result<Vec<String>> {
    Ok(read_comments(&read_text(path)?))
}

/// RFC 3339 rendering used in human-facing output.
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Millis, true)
}
