//! JSON API over a workspace. Reads are pure views of the artifacts on
//! disk; annotation writes are serialized per work.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use covergraph_core::evaluation::{path_hops, SweepPoint};
use covergraph_core::pipeline::content_hash;
use covergraph_core::workspace::{LoadedWork, ScoreColumn, WorkMeta, MANIFEST_FILE};
use covergraph_core::{Error, WorkManifest, Workspace};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::commands::Cut;

pub const PARAMS_HASH_HEADER: &str = "x-params-hash";

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

/// JSON response carrying the producing parameter hash as a body field and
/// as a header.
fn reply(status: StatusCode, params_hash: &str, body: impl Serialize) -> ApiResult {
    let mut value = serde_json::to_value(body).map_err(ApiError::internal)?;
    if let Value::Object(map) = &mut value {
        map.insert("params_hash".into(), Value::String(params_hash.to_string()));
    }
    let mut response = (status, Json(value)).into_response();
    attach_hash(&mut response, params_hash);
    Ok(response)
}

fn attach_hash(response: &mut Response, params_hash: &str) {
    if let Ok(v) = HeaderValue::from_str(params_hash) {
        response.headers_mut().insert(PARAMS_HASH_HEADER, v);
    }
}

pub struct AppState {
    ws: Workspace,
    cache: Mutex<HashMap<String, Arc<LoadedWork>>>,
    write_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

type Shared = Arc<AppState>;

impl AppState {
    fn known(&self, work_id: &str) -> Result<WorkMeta, ApiError> {
        let works = self.ws.works().map_err(ApiError::internal)?;
        if !works.iter().any(|w| w == work_id) {
            return Err(ApiError::not_found(format!("unknown work {work_id:?}")));
        }
        self.ws.read_meta(work_id).map_err(ApiError::internal)
    }

    /// Loaded artifacts, reused while the recorded hashes are unchanged.
    fn load(&self, work_id: &str) -> Result<Arc<LoadedWork>, ApiError> {
        let meta = self.known(work_id)?;
        if let Some(hit) = self.cache.lock().unwrap().get(work_id) {
            if hit.meta == meta {
                return Ok(hit.clone());
            }
        }
        let work = Arc::new(self.ws.load_work(work_id).map_err(ApiError::internal)?);
        self.cache.lock().unwrap().insert(work_id.to_string(), work.clone());
        Ok(work)
    }

    fn write_lock(&self, work_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.write_locks
            .lock()
            .unwrap()
            .entry(work_id.to_string())
            .or_default()
            .clone()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

pub fn router(ws: Workspace) -> Router {
    let state = Arc::new(AppState {
        ws,
        cache: Mutex::new(HashMap::new()),
        write_locks: Mutex::new(HashMap::new()),
    });
    Router::new()
        .route("/api/works", get(list_works))
        .route("/api/works/{id}", get(work_detail))
        .route("/api/works/{id}/scores", get(work_scores))
        .route("/api/works/{id}/dendrogram", get(work_dendrogram))
        .route("/api/works/{id}/clusters", get(work_clusters))
        .route("/api/works/{id}/path/{track}", get(work_path))
        .route("/api/works/{id}/sweep", get(work_sweep))
        .route("/api/works/{id}/annotation", get(get_annotation).post(post_annotation))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

pub async fn serve(ws: Workspace, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving {} on http://{}", ws.root().display(), listener.local_addr()?);
    axum::serve(listener, router(ws))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Serialize)]
struct WorkSummary {
    work_id: String,
    reference_id: String,
    n_tracks: usize,
    labeled: bool,
    params_hash: String,
}

async fn list_works(State(state): State<Shared>) -> ApiResult {
    let works = blocking(move || {
        let ids = state.ws.works().map_err(ApiError::internal)?;
        ids.into_iter()
            .map(|id| {
                let meta = state.ws.read_meta(&id).map_err(ApiError::internal)?;
                let manifest =
                    WorkManifest::load(state.ws.work_dir(&id).join(MANIFEST_FILE)).map_err(ApiError::internal)?;
                Ok(WorkSummary {
                    work_id: id,
                    reference_id: manifest.reference.id.clone(),
                    n_tracks: manifest.len(),
                    labeled: manifest.has_labels(),
                    params_hash: meta.params_hash,
                })
            })
            .collect::<Result<Vec<_>, ApiError>>()
    })
    .await?;
    let joined: Vec<&str> = works.iter().map(|w| w.params_hash.as_str()).collect();
    let hash = content_hash(joined.join(",").as_bytes());
    reply(StatusCode::OK, &hash, json!({ "works": works }))
}

#[derive(Serialize)]
struct TrackEntry<'a> {
    id: &'a str,
    title: &'a str,
    artist: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<covergraph_core::Label>,
}

async fn work_detail(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let (work, annotation) = blocking(move || {
        let work = state.load(&id)?;
        let annotation = state.ws.read_annotation(&id).map_err(ApiError::internal)?;
        Ok((work, annotation))
    })
    .await?;
    let m = &work.manifest;
    let tracks: Vec<TrackEntry> = m
        .candidates
        .iter()
        .map(|t| TrackEntry {
            id: &t.id,
            title: &t.title,
            artist: &t.artist,
            label: m.label_of(&t.id),
        })
        .collect();
    reply(
        StatusCode::OK,
        &work.meta.params_hash,
        json!({
            "work_id": m.work_id,
            "engine_version": work.meta.engine_version,
            "config": work.meta.config,
            "reference_id": m.reference.id,
            "n_tracks": m.len(),
            "sweeps_run": work.meta.sweeps_run,
            "converged": work.meta.converged,
            "tracks": tracks,
            "annotation": annotation,
        }),
    )
}

async fn work_scores(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let work = blocking(move || state.load(&id)).await?;
    let m = &work.manifest;
    let rows: Vec<Value> = work
        .scores
        .rows
        .iter()
        .map(|r| {
            json!({
                "track_id": r.track_id,
                "direct_score": r.direct_score,
                "ensemble_score": r.ensemble_score,
                "cophenetic_to_reference": r.cophenetic_to_reference,
                "label": m.label_of(&r.track_id),
            })
        })
        .collect();
    reply(
        StatusCode::OK,
        &work.meta.params_hash,
        json!({ "work_id": m.work_id, "reference_id": m.reference.id, "rows": rows }),
    )
}

async fn work_dendrogram(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let (meta, body) = blocking(move || {
        let meta = state.known(&id)?;
        let body = state.ws.dendrogram_json(&id).map_err(ApiError::internal)?;
        Ok((meta, body))
    })
    .await?;
    let mut response = ([(header::CONTENT_TYPE, "application/json")], body).into_response();
    attach_hash(&mut response, &meta.params_hash);
    Ok(response)
}

fn parse_number(query: &HashMap<String, String>, key: &str) -> Result<Option<f64>, ApiError> {
    match query.get(key) {
        None => Ok(None),
        Some(raw) => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(ApiError::bad_request(format!("{key} must be a finite number, got {raw:?}"))),
        },
    }
}

async fn work_clusters(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult {
    let cut = match (parse_number(&query, "threshold")?, parse_number(&query, "score")?) {
        (Some(h), None) => Cut::Height(h),
        (None, Some(s)) => Cut::Score(s),
        _ => return Err(ApiError::bad_request("give exactly one of threshold (height) or score")),
    };
    let work = blocking(move || state.load(&id)).await?;
    let labels = cut.apply(&work);
    let ids = &work.manifest.candidates;
    let mut n_clusters = 0;
    let assignment: Vec<Value> = ids
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (t, &l))| {
            if l == i {
                n_clusters += 1;
            }
            json!({ "track_id": t.id, "cluster": ids[l].id })
        })
        .collect();
    let (threshold, score) = match cut {
        Cut::Height(h) => (Some(h), None),
        Cut::Score(s) => (None, Some(s)),
    };
    reply(
        StatusCode::OK,
        &work.meta.params_hash,
        json!({
            "work_id": work.manifest.work_id,
            "threshold": threshold,
            "score": score,
            "n_clusters": n_clusters,
            "labels": labels,
            "assignment": assignment,
        }),
    )
}

async fn work_path(State(state): State<Shared>, Path((id, track)): Path<(String, String)>) -> ApiResult {
    let work = blocking(move || state.load(&id)).await?;
    let target = work
        .track_index(&track)
        .ok_or_else(|| ApiError::not_found(format!("unknown track {track:?}")))?;
    let reference = work.scores.reference;
    if target != reference && work.collapse.bridge(reference, target).is_none() {
        return Err(ApiError::not_found(format!(
            "no path recorded for {track:?} (direct match or isolated)"
        )));
    }
    let hops = path_hops(&work.scores, &work.collapse, target).map_err(ApiError::internal)?;
    reply(
        StatusCode::OK,
        &work.meta.params_hash,
        json!({ "work_id": work.manifest.work_id, "track_id": track, "hops": hops }),
    )
}

async fn work_sweep(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult {
    let column: ScoreColumn = match query.get("column") {
        None => ScoreColumn::Ensemble,
        Some(c) => c.parse().map_err(|e: Error| ApiError::bad_request(e.to_string()))?,
    };
    let (work, points) = blocking(move || {
        let work = state.load(&id)?;
        let points: Option<Vec<SweepPoint>> = if work.manifest.has_labels() {
            Some(state.ws.sweep(&id, column).map_err(ApiError::internal)?)
        } else {
            None
        };
        Ok((work, points))
    })
    .await?;
    reply(
        StatusCode::OK,
        &work.meta.params_hash,
        json!({
            "work_id": work.manifest.work_id,
            "column": column,
            "labeled": points.is_some(),
            "points": points.unwrap_or_default(),
        }),
    )
}

async fn get_annotation(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let (meta, annotation) = blocking(move || {
        let meta = state.known(&id)?;
        let annotation = state.ws.read_annotation(&id).map_err(ApiError::internal)?;
        Ok((meta, annotation))
    })
    .await?;
    reply(
        StatusCode::OK,
        &meta.params_hash,
        json!({ "work_id": meta.work_id, "annotation": annotation }),
    )
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRequest {
    threshold: f64,
    #[serde(default)]
    annotator: String,
    #[serde(default)]
    base_revision: Option<u64>,
}

async fn post_annotation(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let request: AnnotationRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
    if !(0.0..=100.0).contains(&request.threshold) {
        return Err(ApiError::bad_request(format!(
            "threshold {} outside [0, 100]",
            request.threshold
        )));
    }
    let lock = state.write_lock(&id);
    let _guard = lock.lock().await;
    let (annotation, conflict) = blocking(move || {
        state.known(&id)?;
        state
            .ws
            .write_annotation(&id, request.threshold, &request.annotator, request.base_revision)
            .map_err(ApiError::internal)
    })
    .await?;
    let status = if conflict { StatusCode::CONFLICT } else { StatusCode::OK };
    let hash = annotation.params_hash.clone();
    reply(
        status,
        &hash,
        json!({ "work_id": annotation.work_id, "annotation": annotation, "conflict": conflict }),
    )
}
