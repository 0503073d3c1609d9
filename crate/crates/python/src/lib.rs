//! Python bindings for the covergraph engine.

use std::collections::BTreeMap;
use std::path::PathBuf;

use covergraph_core::evaluation::{self, path_hops};
use covergraph_core::pipeline::content_hash;
use covergraph_core::{
    CollapseMode, CollapseParams, CollapseResult, DistanceMatrix, EngineConfig, Error, Label, Linkage, LogisticParams,
    PipelineError, ScoreMatrix, ScoreSource, SyntheticSpec, TrackRef, WorkAnalysis, WorkManifest,
};
use pyo3::exceptions::{PyFileNotFoundError, PyIndexError, PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

/// Maps an engine error onto the closest Python exception, keeping `msg`.
fn raise(e: &Error, msg: String) -> PyErr {
    match e {
        Error::NotFound(_) => PyFileNotFoundError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::IndexOutOfRange { .. } => PyIndexError::new_err(msg),
        Error::UnknownTrack(_) => PyKeyError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn core_err(e: Error) -> PyErr {
    raise(&e, e.to_string())
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for Result<T, Error> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(core_err)
    }
}

impl<T> OrRaise<T> for Result<T, PipelineError> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(|e| raise(&e.error, e.to_string()))
    }
}

/// Converts any serializable value into plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn index_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn distance_matrix(rows: &[Vec<f64>]) -> PyResult<DistanceMatrix> {
    DistanceMatrix::from_rows(index_ids(rows.len()), rows).or_raise()
}

fn check_index(i: usize, n: usize) -> PyResult<()> {
    if i < n {
        Ok(())
    } else {
        Err(core_err(Error::IndexOutOfRange { index: i, len: n }))
    }
}

/// Engine parameters; unset keywords keep their defaults.
#[pyclass(name = "EngineConfig", module = "covergraph", frozen)]
struct PyEngineConfig(EngineConfig);

#[pymethods]
impl PyEngineConfig {
    #[new]
    #[pyo3(signature = (*, midpoint=None, scale=None, eta=None, linkage=None, mode=None, max_sweeps=None, update_tolerance=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        midpoint: Option<f64>,
        scale: Option<f64>,
        eta: Option<f64>,
        linkage: Option<&str>,
        mode: Option<&str>,
        max_sweeps: Option<usize>,
        update_tolerance: Option<f64>,
    ) -> PyResult<Self> {
        let mut c = EngineConfig::default();
        if let Some(v) = midpoint {
            c.logistic.midpoint = v;
        }
        if let Some(v) = scale {
            c.logistic.scale = v;
        }
        if let Some(v) = eta {
            c.collapse.eta = v;
        }
        if let Some(v) = linkage {
            c.linkage = v.parse::<Linkage>().or_raise()?;
        }
        if let Some(v) = mode {
            c.collapse.mode = v.parse::<CollapseMode>().or_raise()?;
        }
        if let Some(v) = max_sweeps {
            c.collapse.max_sweeps = v;
        }
        if let Some(v) = update_tolerance {
            c.collapse.update_tolerance = v;
        }
        c.validate().or_raise()?;
        Ok(PyEngineConfig(c))
    }

    #[getter]
    fn midpoint(&self) -> f64 {
        self.0.logistic.midpoint
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.0.logistic.scale
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.0.collapse.eta
    }

    #[getter]
    fn linkage(&self) -> String {
        self.0.linkage.to_string()
    }

    #[getter]
    fn mode(&self) -> String {
        self.0.collapse.mode.to_string()
    }

    #[getter]
    fn max_sweeps(&self) -> usize {
        self.0.collapse.max_sweeps
    }

    #[getter]
    fn update_tolerance(&self) -> f64 {
        self.0.collapse.update_tolerance
    }

    fn __repr__(&self) -> String {
        format!(
            "EngineConfig(midpoint={}, scale={}, eta={}, linkage='{}', mode='{}', max_sweeps={}, update_tolerance={})",
            self.midpoint(),
            self.scale(),
            self.eta(),
            self.linkage(),
            self.mode(),
            self.max_sweeps(),
            self.update_tolerance()
        )
    }
}

fn config_or_default(config: Option<PyRef<'_, PyEngineConfig>>) -> EngineConfig {
    config.map(|c| c.0).unwrap_or_default()
}

/// Result of the loose Floyd-Warshall collapse.
#[pyclass(name = "Collapse", module = "covergraph", frozen)]
struct PyCollapse(CollapseResult);

#[pymethods]
impl PyCollapse {
    #[getter]
    fn distances(&self) -> Vec<Vec<f64>> {
        self.0.distances.to_rows()
    }

    #[getter]
    fn sweeps_run(&self) -> usize {
        self.0.sweeps_run
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn updates_per_sweep(&self) -> Vec<usize> {
        self.0.updates_per_sweep.clone()
    }

    /// `(i, j, k)` for every shortened pair `i < j` routed through `k`.
    #[getter]
    fn bridges(&self) -> Vec<(usize, usize, usize)> {
        self.0.bridges()
    }

    fn bridge(&self, i: usize, j: usize) -> PyResult<Option<usize>> {
        let n = self.0.distances.len();
        check_index(i, n)?;
        check_index(j, n)?;
        Ok(self.0.bridge(i, j))
    }

    /// Track indices from `source` to `target`, loop-erased.
    fn trace_path(&self, source: usize, target: usize) -> PyResult<Vec<usize>> {
        let n = self.0.distances.len();
        check_index(source, n)?;
        check_index(target, n)?;
        Ok(self.0.trace_path(source, target).or_raise()?.into_iter().map(|s| s.index).collect())
    }
}

/// Agglomerative clustering of a distance matrix.
#[pyclass(name = "Dendrogram", module = "covergraph", frozen)]
struct PyDendrogram(covergraph_core::Dendrogram);

#[pymethods]
impl PyDendrogram {
    #[new]
    #[pyo3(signature = (distances, linkage="average"))]
    fn new(distances: Vec<Vec<f64>>, linkage: &str) -> PyResult<Self> {
        let linkage = linkage.parse::<Linkage>().or_raise()?;
        let d = distance_matrix(&distances)?;
        Ok(PyDendrogram(covergraph_core::build_dendrogram(&d, linkage).or_raise()?))
    }

    #[getter]
    fn n_leaves(&self) -> usize {
        self.0.n_leaves()
    }

    #[getter]
    fn linkage(&self) -> String {
        self.0.linkage.to_string()
    }

    /// `(cluster_a, cluster_b, height, size)` per merge; merge `m` creates cluster `n + m`.
    #[getter]
    fn merges(&self) -> Vec<(usize, usize, f64, usize)> {
        self.0
            .merges
            .iter()
            .map(|m| (m.cluster_a, m.cluster_b, m.height, m.size))
            .collect()
    }

    fn cophenetic_distance(&self, i: usize, j: usize) -> PyResult<f64> {
        check_index(i, self.0.n_leaves())?;
        check_index(j, self.0.n_leaves())?;
        Ok(self.0.cophenetic_distance(i, j))
    }

    fn cophenetic_matrix(&self) -> Vec<Vec<f64>> {
        self.0.cophenetic_matrix()
    }

    /// Cluster label (lowest member index) per leaf, merging below `height`.
    fn cut_clusters(&self, height: f64) -> Vec<usize> {
        self.0.cut_clusters(height)
    }

    /// Cluster label per leaf, merging where the ensemble score is at least `score`.
    fn cut_clusters_at_score(&self, score: f64) -> Vec<usize> {
        self.0.cut_clusters_at_score(score)
    }
}

/// One work: its manifest and raw pairwise scores.
#[pyclass(name = "Work", module = "covergraph", frozen)]
struct PyWork {
    manifest: WorkManifest,
    scores: ScoreMatrix,
}

#[pymethods]
impl PyWork {
    /// `scores[i][j]` is the raw similarity of `track_ids[i]` and `track_ids[j]`;
    /// labels map track ids to `"positive"` or `"negative"`.
    #[new]
    #[pyo3(signature = (work_id, reference_id, track_ids, scores, labels=None))]
    fn new(
        work_id: String,
        reference_id: &str,
        track_ids: Vec<String>,
        scores: Vec<Vec<f64>>,
        labels: Option<BTreeMap<String, String>>,
    ) -> PyResult<Self> {
        let labels = labels
            .map(|l| {
                l.into_iter()
                    .map(|(k, v)| Ok((k, v.parse::<Label>().or_raise()?)))
                    .collect::<PyResult<BTreeMap<_, _>>>()
            })
            .transpose()?;
        let tracks = track_ids.iter().map(|id| TrackRef::new(id.as_str(), id.as_str(), "")).collect();
        let manifest = WorkManifest::new(work_id, reference_id, tracks, labels).or_raise()?;
        let n = track_ids.len();
        if scores.len() != n {
            return Err(core_err(Error::DimensionMismatch(scores.len(), n)));
        }
        if let Some(row) = scores.iter().find(|r| r.len() != n) {
            return Err(core_err(Error::DimensionMismatch(row.len(), n)));
        }
        let scores = ScoreMatrix::from_fn(track_ids, |i, j| scores[i][j]).or_raise()?;
        scores.check_invariants().or_raise()?;
        Ok(PyWork { manifest, scores })
    }

    /// A labeled synthetic work, reproducible from `seed`.
    #[staticmethod]
    #[pyo3(signature = (n_candidates=200, seed=0, positive_fraction=0.3, work_id=None))]
    fn synthetic(n_candidates: usize, seed: u64, positive_fraction: f64, work_id: Option<String>) -> PyResult<Self> {
        let spec = SyntheticSpec {
            work_id,
            n_candidates,
            positive_fraction,
            rng_seed: seed,
            ..SyntheticSpec::default()
        };
        let (manifest, scores) = covergraph_core::generate_synthetic_work(&spec).or_raise()?;
        Ok(PyWork { manifest, scores })
    }

    /// Reads a manifest JSON and a triplet or dense score CSV.
    #[staticmethod]
    fn load(manifest: PathBuf, scores: PathBuf) -> PyResult<Self> {
        let manifest = WorkManifest::load(manifest).or_raise()?;
        let scores = covergraph_core::load_score_matrix(scores, &manifest).or_raise()?;
        Ok(PyWork { manifest, scores })
    }

    #[getter]
    fn work_id(&self) -> String {
        self.manifest.work_id.clone()
    }

    #[getter]
    fn reference_id(&self) -> String {
        self.manifest.reference.id.clone()
    }

    #[getter]
    fn reference_index(&self) -> usize {
        self.manifest.reference_index()
    }

    #[getter]
    fn track_ids(&self) -> Vec<String> {
        self.manifest.track_ids()
    }

    #[getter]
    fn labels(&self) -> Option<BTreeMap<String, String>> {
        self.manifest
            .labels
            .as_ref()
            .map(|l| l.iter().map(|(k, v)| (k.clone(), v.to_string())).collect())
    }

    fn scores(&self) -> Vec<Vec<f64>> {
        (0..self.scores.len()).map(|i| self.scores.row(i).to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.manifest.len()
    }

    /// Runs transform, collapse, clustering and final scoring.
    #[pyo3(signature = (config=None))]
    fn analyze(&self, config: Option<PyRef<'_, PyEngineConfig>>) -> PyResult<PyAnalysis> {
        let config = config_or_default(config);
        let analysis = covergraph_core::run_pipeline(&self.manifest, &self.scores, &config).or_raise()?;
        Ok(PyAnalysis {
            manifest: self.manifest.clone(),
            analysis,
        })
    }
}

/// Pipeline output for one work.
#[pyclass(name = "Analysis", module = "covergraph", frozen)]
struct PyAnalysis {
    manifest: WorkManifest,
    analysis: WorkAnalysis,
}

impl PyAnalysis {
    fn index(&self, track_id: &str) -> PyResult<usize> {
        self.manifest
            .index_of(track_id)
            .ok_or_else(|| core_err(Error::UnknownTrack(track_id.to_string())))
    }
}

#[pymethods]
impl PyAnalysis {
    #[getter]
    fn track_ids(&self) -> Vec<String> {
        self.manifest.track_ids()
    }

    #[getter]
    fn reference_index(&self) -> usize {
        self.analysis.scores.reference
    }

    #[getter]
    fn direct_scores(&self) -> Vec<f64> {
        self.analysis.scores.direct()
    }

    #[getter]
    fn ensemble_scores(&self) -> Vec<f64> {
        self.analysis.scores.ensemble()
    }

    /// Distances before the collapse.
    #[getter]
    fn distances(&self) -> Vec<Vec<f64>> {
        self.analysis.distances.to_rows()
    }

    #[getter]
    fn collapse(&self) -> PyCollapse {
        PyCollapse(self.analysis.collapse.clone())
    }

    #[getter]
    fn dendrogram(&self) -> PyDendrogram {
        PyDendrogram(self.analysis.dendrogram.clone())
    }

    /// Hops from the reference to `track_id` as dicts.
    fn path<'py>(&self, py: Python<'py>, track_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let target = self.index(track_id)?;
        let hops = path_hops(&self.analysis.scores, &self.analysis.collapse, target).or_raise()?;
        to_py(py, &hops)
    }

    /// Direct vs ensemble report; needs labels. `universal` is a
    /// `(direct, ensemble)` threshold pair for the classification protocol.
    #[pyo3(signature = (universal=None))]
    fn compare<'py>(&self, py: Python<'py>, universal: Option<(f64, f64)>) -> PyResult<Bound<'py, PyAny>> {
        let report = covergraph_core::compare_direct_vs_ensemble(
            &self.manifest,
            &self.analysis.scores,
            &self.analysis.collapse,
            universal,
        )
        .or_raise()?;
        to_py(py, &report)
    }

    /// `track_id,direct_score,ensemble_score` CSV text.
    fn to_csv(&self) -> String {
        self.analysis.scores.to_csv(&[])
    }
}

/// A persistent workspace directory.
#[pyclass(name = "Workspace", module = "covergraph", frozen)]
struct PyWorkspace(covergraph_core::Workspace);

#[pymethods]
impl PyWorkspace {
    #[new]
    fn new(root: PathBuf) -> PyResult<Self> {
        Ok(PyWorkspace(covergraph_core::Workspace::open(root).or_raise()?))
    }

    #[getter]
    fn root(&self) -> PathBuf {
        self.0.root().to_path_buf()
    }

    fn works(&self) -> PyResult<Vec<String>> {
        self.0.works().or_raise()
    }

    /// Runs a work into the workspace; unchanged stages are left as they are.
    #[pyo3(signature = (work, config=None))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        work: PyRef<'_, PyWork>,
        config: Option<PyRef<'_, PyEngineConfig>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let config = config_or_default(config);
        let mut dense = Vec::new();
        work.scores.write_dense(&mut dense, &[]).or_raise()?;
        let source = ScoreSource::Provided {
            scores: work.scores.clone(),
            descriptor: format!("python:{}", content_hash(&dense)),
        };
        let outcome = self.0.run_work(&work.manifest, &source, &config).or_raise()?;
        let meta = self.0.read_meta(&work.manifest.work_id).or_raise()?;
        let out = serde_json::json!({
            "work_id": meta.work_id,
            "params_hash": meta.params_hash,
            "sweeps_run": meta.sweeps_run,
            "converged": meta.converged,
            "scores_written": outcome.scores_written,
            "distances_written": outcome.distances_written,
            "downstream_written": outcome.downstream_written,
        });
        to_py(py, &out)
    }

    fn params_hash(&self, work_id: &str) -> PyResult<String> {
        Ok(self.0.read_meta(work_id).or_raise()?.params_hash)
    }

    /// Final score rows of a stored work as dicts.
    fn final_scores<'py>(&self, py: Python<'py>, work_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let work = self.0.load_work(work_id).or_raise()?;
        to_py(py, &work.scores.rows)
    }

    /// Ranking and classification reports over every labeled work.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.evaluate().or_raise()?)
    }
}

#[pyfunction]
#[pyo3(signature = (score, midpoint=None, scale=None))]
fn score_to_distance(score: f64, midpoint: Option<f64>, scale: Option<f64>) -> PyResult<f64> {
    let d = LogisticParams::default();
    let params = LogisticParams::new(midpoint.unwrap_or(d.midpoint), scale.unwrap_or(d.scale)).or_raise()?;
    Ok(covergraph_core::score_to_distance(score, &params))
}

/// Collapses a symmetric distance matrix with zero diagonal.
#[pyfunction]
#[pyo3(signature = (distances, *, eta=None, mode=None, max_sweeps=None, update_tolerance=None))]
fn collapse(
    distances: Vec<Vec<f64>>,
    eta: Option<f64>,
    mode: Option<&str>,
    max_sweeps: Option<usize>,
    update_tolerance: Option<f64>,
) -> PyResult<PyCollapse> {
    let mut p = CollapseParams::default();
    if let Some(v) = eta {
        p.eta = v;
    }
    if let Some(v) = mode {
        p.mode = v.parse::<CollapseMode>().or_raise()?;
    }
    if let Some(v) = max_sweeps {
        p.max_sweeps = v;
    }
    if let Some(v) = update_tolerance {
        p.update_tolerance = v;
    }
    let d = distance_matrix(&distances)?;
    Ok(PyCollapse(covergraph_core::collapse(&d, &p).or_raise()?))
}

/// Threshold minimizing misclassifications under `score >= threshold`.
#[pyfunction]
fn optimal_threshold<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &covergraph_core::optimal_threshold(&scores, &labels).or_raise()?)
}

#[pyfunction]
fn classify_at<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    labels: Vec<bool>,
    threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &covergraph_core::classify_at(&scores, &labels, threshold).or_raise()?)
}

/// Error counts at every candidate threshold.
#[pyfunction]
fn threshold_sweep<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &covergraph_core::threshold_sweep(&scores, &labels).or_raise()?)
}

/// Upper median of the per-work optimal thresholds.
#[pyfunction]
fn universal_threshold(per_work_optimal: Vec<f64>) -> PyResult<f64> {
    covergraph_core::universal_threshold(&per_work_optimal).or_raise()
}

/// Mean rank, MRR and recall counts from `(rank, candidate_count)` pairs.
#[pyfunction]
#[pyo3(signature = (queries, cutoffs=None))]
fn retrieval_stats<'py>(
    py: Python<'py>,
    queries: Vec<(usize, usize)>,
    cutoffs: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cutoffs = cutoffs.unwrap_or_else(|| evaluation::DEFAULT_CUTOFFS.to_vec());
    to_py(py, &covergraph_core::retrieval_stats(&queries, &cutoffs).or_raise()?)
}

#[pymodule]
fn covergraph(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyEngineConfig>()?;
    m.add_class::<PyWork>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_class::<PyCollapse>()?;
    m.add_class::<PyDendrogram>()?;
    m.add_class::<PyWorkspace>()?;
    m.add_function(wrap_pyfunction!(score_to_distance, m)?)?;
    m.add_function(wrap_pyfunction!(collapse, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(classify_at, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(universal_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(retrieval_stats, m)?)?;
    Ok(())
}
