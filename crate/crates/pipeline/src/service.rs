//! HTTP API over a project snapshot.
//!
//! Readers clone an `Arc` of the current snapshot and never block each
//! other. Registration runs register, align and fit-planes under a writer
//! lock, then swaps in a freshly loaded snapshot.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use asbuilt_core::geometry::{CameraIntrinsics, PixelPoint, Vec3};
use asbuilt_core::measurement::WindowScale;
use asbuilt_core::spatial::{KeyframeId, SpatialDatabase};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::commands;
use crate::error::{PipelineError, Result, Stage};
use crate::formats::KeyframeRecord;
use crate::project::{Overrides, Project, RegistrationClicks};

/// Immutable view of a loaded project.
pub struct Snapshot {
    pub project: Project,
    pub database: Option<SpatialDatabase>,
    mesh_bytes: Bytes,
    scales: Mutex<HashMap<KeyframeId, Arc<Vec<WindowScale>>>>,
}

impl Snapshot {
    pub fn load(root: &std::path::Path, overrides: &Overrides) -> Result<Self> {
        let project = Project::load(root, overrides)?;
        let database = if project.require(Stage::Query).is_ok() { Some(project.database()?) } else { None };
        let mesh_path = project.path(&project.file.mesh);
        let mesh_bytes = std::fs::read(&mesh_path).map_err(|e| PipelineError::io(mesh_path, e))?;
        Ok(Self { project, database, mesh_bytes: Bytes::from(mesh_bytes), scales: Mutex::default() })
    }

    fn scales(&self, id: KeyframeId) -> Result<Arc<Vec<WindowScale>>> {
        if let Some(s) = self.scales.lock().expect("scale cache lock").get(&id) {
            return Ok(s.clone());
        }
        let computed = Arc::new(commands::keyframe_scales(&self.project, id)?);
        self.scales.lock().expect("scale cache lock").insert(id, computed.clone());
        Ok(computed)
    }
}

pub struct AppState {
    root: PathBuf,
    overrides: Overrides,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>, overrides: Overrides) -> Result<Arc<Self>> {
        let root = root.into();
        let snapshot = Snapshot::load(&root, &overrides)?;
        Ok(Arc::new(Self {
            root,
            overrides,
            snapshot: RwLock::new(Arc::new(snapshot)),
            writer: tokio::sync::Mutex::new(()),
        }))
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }
}

impl IntoResponse for PipelineError {
    fn into_response(self) -> Response {
        let status = match self.code() {
            "invalid_request" => StatusCode::BAD_REQUEST,
            "miss" | "not_found" => StatusCode::NOT_FOUND,
            "stage_order" => StatusCode::CONFLICT,
            "missing_file" | "io_error" | "parse_error" | "invalid_project" | "invalid_database" => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(self.body())).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| PipelineError::InvalidRequest(e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(PipelineError::Io { path: PathBuf::new(), message: e.to_string() }))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_model(State(app): State<Arc<AppState>>) -> Response {
    ([(header::CONTENT_TYPE, "model/obj")], app.snapshot().mesh_bytes.clone()).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeList {
    /// `model` once the map is aligned, `slam` before.
    pub frame: String,
    pub intrinsics: CameraIntrinsics,
    pub keyframes: Vec<KeyframeRecord>,
}

async fn get_keyframes(State(app): State<Arc<AppState>>) -> Json<KeyframeList> {
    let snap = app.snapshot();
    let p = &snap.project;
    let (frame, kfs) = match &p.aligned {
        Some((k, _)) => ("model", k),
        None => ("slam", &p.keyframes),
    };
    Json(KeyframeList {
        frame: frame.into(),
        intrinsics: p.intrinsics,
        keyframes: kfs.iter().map(KeyframeRecord::from_keyframe).collect(),
    })
}

async fn get_keyframe_image(State(app): State<Arc<AppState>>, Path(id): Path<KeyframeId>) -> Result<Response> {
    let snap = app.snapshot();
    let path = snap.project.path(&snap.project.keyframe(id)?.image);
    let bytes = tokio::fs::read(&path).await.map_err(|e| PipelineError::io(path, e))?;
    Ok(png(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PickRequest {
    pub origin: Vec3,
    pub direction: Vec3,
}

async fn post_pick(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response> {
    let req: PickRequest = parse_body(&body)?;
    let snap = app.snapshot();
    snap.project.require(Stage::Query)?;
    let db = snap.database.as_ref().expect("database exists once planes are fitted");
    Ok(Json(commands::query(db, req.origin, req.direction)?).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub clicks: RegistrationClicks,
}

async fn post_register(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response> {
    let req: RegisterRequest = parse_body(&body)?;
    let _guard = app.writer.lock().await;
    let worker = app.clone();
    let (record, snapshot) = blocking(move || {
        let mut project = Project::load(&worker.root, &worker.overrides)?;
        let record = commands::register(&mut project, &req.clicks)?;
        commands::align(&mut project)?;
        commands::fit_planes(&mut project)?;
        Ok((record, Snapshot::load(&worker.root, &worker.overrides)?))
    })
    .await?;
    *app.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
    Ok(Json(record).into_response())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureRequest {
    pub keyframe_id: KeyframeId,
    pub p1: PixelPoint,
    pub p2: PixelPoint,
}

async fn post_measure(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response> {
    let req: MeasureRequest = parse_body(&body)?;
    let snap = app.snapshot();
    snap.project.require(Stage::Measure)?;
    let response = blocking(move || {
        let scales = snap.scales(req.keyframe_id)?;
        commands::measure_with_scales(req.keyframe_id, req.p1, req.p2, &scales)
    })
    .await?;
    Ok(Json(response).into_response())
}

async fn get_texture(State(app): State<Arc<AppState>>, Path(boundary): Path<String>) -> Result<Response> {
    let snap = app.snapshot();
    let rel = snap
        .project
        .textures
        .iter()
        .flat_map(|r| &r.textures)
        .find(|(id, _)| *id == boundary)
        .map(|(_, f)| f.clone())
        .ok_or(PipelineError::UnknownBoundary(boundary))?;
    let path = snap.project.path(&rel);
    let bytes = tokio::fs::read(&path).await.map_err(|e| PipelineError::io(path, e))?;
    Ok(png(bytes))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/model", get(get_model))
        .route("/keyframes", get(get_keyframes))
        .route("/keyframes/{id}/image", get(get_keyframe_image))
        .route("/pick", post(post_pick))
        .route("/register", post(post_register))
        .route("/measure", post(post_measure))
        .route("/textures/{boundary}", get(get_texture))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
