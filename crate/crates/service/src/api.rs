use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use valtree_core::suggest::{filter_candidates, suggestion_request, DEFAULT_SUGGESTION_COUNT};
use valtree_core::{
    build_report, export_table_csv, new_decision, save, CellUpdate, DecisionDocument, Edit,
    EditOutcome, NodeId, Redaction, SuggestionProvider, SyncReport,
};

use crate::error::ApiError;
use crate::store::{IndexEntry, Store};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub provider: Arc<dyn SuggestionProvider>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/decisions", post(create).get(index))
        .route("/decisions/{id}", get(document))
        .route("/decisions/{id}/edits", post(edit))
        .route("/decisions/{id}/sync", post(sync))
        .route("/decisions/{id}/cells", put(cells))
        .route("/decisions/{id}/scores", get(scores))
        .route("/decisions/{id}/suggestions", get(suggestions))
        .route("/decisions/{id}/export.csv", get(export_csv))
        .route("/decisions/{id}/file", get(file))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub goal: String,
    pub alternatives: Vec<String>,
    pub attributes: Vec<String>,
    pub scoring_goal: String,
}

#[derive(Debug, Serialize)]
pub struct Created {
    pub id: String,
    pub version: u64,
}

async fn create(
    State(app): State<AppState>,
    Json(req): Json<CreateRequest>,
) -> Result<Response, ApiError> {
    let doc = new_decision(
        &req.goal,
        &req.alternatives,
        &req.attributes,
        &req.scoring_goal,
    )?;
    let doc = app.store.insert(doc).await?;
    tracing::info!(id = %doc.id, "decision created");
    let body = Created {
        id: doc.id.clone(),
        version: doc.version,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn index(State(app): State<AppState>) -> Json<Vec<IndexEntry>> {
    Json(app.store.index())
}

async fn document(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<DecisionDocument>, ApiError> {
    Ok(Json((*app.store.snapshot(&id)?).clone()))
}

async fn file(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let bytes = save(app.store.snapshot(&id)?.as_ref());
    Ok((
        [(header::CONTENT_TYPE, "application/json; charset=utf-8")],
        bytes,
    )
        .into_response())
}

/// Runs a mutation to completion even if the client goes away, so the
/// stored file and the in-memory snapshot never diverge.
async fn mutate(
    app: &AppState,
    id: String,
    base_version: u64,
    edit: Edit,
) -> Result<EditOutcome, ApiError> {
    let store = app.store.clone();
    tokio::spawn(async move { store.mutate(&id, base_version, &edit).await })
        .await
        .expect("mutation task panicked")
}

#[derive(Debug, Deserialize)]
pub struct EditRequest {
    pub base_version: u64,
    #[serde(flatten)]
    pub edit: Edit,
}

async fn edit(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<EditRequest>,
) -> Result<Json<EditOutcome>, ApiError> {
    Ok(Json(mutate(&app, id, req.base_version, req.edit).await?))
}

#[derive(Debug, Deserialize)]
pub struct SyncRequest {
    pub base_version: u64,
}

#[derive(Debug, Serialize)]
pub struct Synced {
    pub version: u64,
    pub sync_report: SyncReport,
}

async fn sync(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SyncRequest>,
) -> Result<Json<Synced>, ApiError> {
    let outcome = mutate(&app, id, req.base_version, Edit::Sync).await?;
    Ok(Json(Synced {
        version: outcome.version,
        sync_report: outcome.sync_report.unwrap_or_default(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct CellsRequest {
    pub base_version: u64,
    pub cells: Vec<CellUpdate>,
}

#[derive(Debug, Serialize)]
pub struct Versioned {
    pub version: u64,
}

async fn cells(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<CellsRequest>,
) -> Result<Json<Versioned>, ApiError> {
    let outcome = mutate(
        &app,
        id,
        req.base_version,
        Edit::SetCells { cells: req.cells },
    )
    .await?;
    Ok(Json(Versioned {
        version: outcome.version,
    }))
}

#[derive(Debug, Deserialize)]
pub struct ScoresQuery {
    pub redaction: Option<String>,
}

async fn scores(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ScoresQuery>,
) -> Result<Response, ApiError> {
    let redaction: Redaction = match q.redaction.as_deref() {
        None => Redaction::default(),
        Some(r) => r
            .parse()
            .map_err(|e: valtree_core::Error| ApiError::BadRequest(e.to_string()))?,
    };
    let doc = app.store.snapshot(&id)?;
    let report = build_report(&doc, redaction)?;
    Ok(Json(report).into_response())
}

fn parse_node(raw: &str) -> Result<NodeId, ApiError> {
    raw.parse()
        .map_err(|e: valtree_core::Error| ApiError::BadRequest(e.to_string()))
}

#[derive(Debug, Deserialize)]
pub struct SuggestionsQuery {
    pub node: String,
    pub k: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct Suggestions {
    pub node: NodeId,
    pub candidates: Vec<String>,
}

async fn suggestions(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SuggestionsQuery>,
) -> Result<Json<Suggestions>, ApiError> {
    let node = parse_node(&q.node)?;
    let k = q.k.unwrap_or(DEFAULT_SUGGESTION_COUNT);
    if k == 0 {
        return Err(ApiError::BadRequest("k must be at least 1".into()));
    }
    let doc = app.store.snapshot(&id)?;
    let request = suggestion_request(&doc, node, k)?;
    let provider = app.provider.clone();
    let raw = tokio::task::spawn_blocking(move || provider.candidates(&request))
        .await
        .expect("provider task panicked")
        .map_err(valtree_core::Error::from)?;
    Ok(Json(Suggestions {
        node,
        candidates: filter_candidates(&doc.tree, node, raw, k),
    }))
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    pub node: Option<String>,
}

async fn export_csv(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let doc = app.store.snapshot(&id)?;
    let node = match q.node.as_deref() {
        Some(raw) => parse_node(raw)?,
        None => doc.tree.root_id,
    };
    let csv = export_table_csv(&doc, node)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}
