//! HTTP surface of the platform. Handlers are thin: they parse, hand off to
//! [`Platform`] on the blocking pool and map errors to `{code, message}`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use feedlab_core::experiment::{ExperimentDraft, ExperimentStatus};
use feedlab_core::export::{
    write_dwell_by_position, write_interactions, write_rows, write_surveys, ExportFormat,
    DIVERSITY_COLUMNS,
};
use feedlab_core::telemetry::ClientEvent;
use feedlab_core::{Platform, PlatformError, SessionBootstrap};

pub const DWELL_CONFIG_HEADER: &str = "x-feedlab-dwell-config";

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    /// Researcher endpoints require this key when set.
    pub api_key: Option<String>,
}

#[derive(Debug)]
pub enum ApiError {
    Platform(PlatformError),
    BadRequest(String),
    Unauthorized,
    Internal(String),
}

#[derive(Serialize, Deserialize, Debug, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn status(&self) -> StatusCode {
        use PlatformError::*;
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::Platform(e) => match e {
                UnknownSlug(_) | UnknownExperiment(_) | UnknownSession(_) => StatusCode::NOT_FOUND,
                ExperimentClosed => StatusCode::GONE,
                ExperimentNotLive | DuplicateEntitySet(_) | Telemetry(_) => StatusCode::CONFLICT,
                InvalidParticipant => StatusCode::BAD_REQUEST,
                Config(_) | EntityCsv(_) | Survey(_) => StatusCode::UNPROCESSABLE_ENTITY,
                Export(feedlab_core::export::ExportError::NoData) => StatusCode::NOT_FOUND,
                Feed(_) | Export(_) | Metric(_) | Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }

    fn body(&self) -> ErrorBody {
        let (code, message) = match self {
            ApiError::Platform(e) => (e.code(), e.to_string()),
            ApiError::BadRequest(m) => ("bad_request", m.clone()),
            ApiError::Unauthorized => ("unauthorized", "missing or invalid API key".to_owned()),
            ApiError::Internal(m) => ("internal", m.clone()),
        };
        ErrorBody {
            code: code.to_owned(),
            message,
        }
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        ApiError::Platform(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = ?self, "request failed");
        }
        (status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs a platform call on the blocking pool; the journal does file I/O and
/// external rankers are called synchronously.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    F: FnOnce(&Platform) -> Result<T, PlatformError> + Send + 'static,
    T: Send + 'static,
{
    let platform = state.platform.clone();
    tokio::task::spawn_blocking(move || f(&platform))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::BadRequest(format!("invalid JSON body: {e}")))
}

fn authorize(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let Some(expected) = state.api_key.as_deref() else {
        return Ok(());
    };
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let direct = headers.get("x-api-key").and_then(|v| v.to_str().ok());
    match bearer.or(direct) {
        Some(given) if given == expected => Ok(()),
        _ => Err(ApiError::Unauthorized),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/experiments", post(create_experiment))
        .route("/api/experiments/{id}", get(get_experiment))
        .route("/api/experiments/{id}/status", post(set_status))
        .route("/api/experiments/{id}/export", get(export))
        .route(
            "/api/experiments/{id}/dwell-by-position",
            get(dwell_by_position),
        )
        .route("/api/experiments/{id}/worlds", get(worlds))
        .route("/api/experiments/{id}/diversity", get(diversity))
        .route(
            "/api/entity-sets",
            post(upload_entity_set).get(list_entity_sets),
        )
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/events", post(post_events))
        .route("/api/sessions/{id}/survey", post(post_survey))
        .route("/f/{slug}", get(participant_entry))
        .layer(DefaultBodyLimit::max(32 * 1024 * 1024))
        .with_state(state)
}

async fn create_experiment(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let draft: ExperimentDraft = parse_json(&body)?;
    let created = blocking(&state, move |p| p.create_experiment(draft)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_experiment(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let experiment = blocking(&state, move |p| p.experiment(&id)).await?;
    Ok(Json(&*experiment).into_response())
}

#[derive(Deserialize)]
struct StatusBody {
    status: ExperimentStatus,
}

async fn set_status(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<StatusCode> {
    authorize(&state, &headers)?;
    let StatusBody { status } = parse_json(&body)?;
    blocking(&state, move |p| p.set_status(&id, status)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct UploadQuery {
    set_id: String,
    name: Option<String>,
}

async fn upload_entity_set(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let name = q.name.unwrap_or_else(|| q.set_id.clone());
    let summary = blocking(&state, move |p| {
        p.upload_entity_set(&body, &q.set_id, &name)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn list_entity_sets(
    State(state): State<AppState>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let sets = blocking(&state, |p| Ok(p.entity_sets())).await?;
    Ok(Json(sets).into_response())
}

#[derive(Deserialize)]
struct EntryQuery {
    pid: Option<String>,
}

fn wants_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("application/json"))
}

async fn participant_entry(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(slug): Path<String>,
    Query(q): Query<EntryQuery>,
) -> ApiResult<Response> {
    let pid = q
        .pid
        .filter(|p| !p.is_empty())
        .ok_or_else(|| ApiError::BadRequest("query parameter `pid` is required".into()))?;
    let bootstrap = blocking(&state, move |p| {
        p.handle_participant_entry(&slug, &pid, Utc::now())
    })
    .await?;
    if wants_json(&headers) {
        Ok(Json(bootstrap).into_response())
    } else {
        Ok(Html(shell_page(&bootstrap)).into_response())
    }
}

/// Minimal page the participant client mounts into; the bootstrap is inlined
/// so the first render needs no further requests.
pub fn shell_page(bootstrap: &SessionBootstrap) -> String {
    let json = serde_json::to_string(bootstrap)
        .expect("bootstrap serializes")
        .replace("</", "<\\/");
    format!(
        "<!doctype html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <meta name=\"viewport\" content=\"width=device-width, initial-scale=1\">\n\
         <title>Feed</title>\n<link rel=\"stylesheet\" href=\"/static/feed.css\">\n</head>\n\
         <body>\n<div id=\"feed-root\"></div>\n\
         <script id=\"feedlab-bootstrap\" type=\"application/json\">{json}</script>\n\
         <script type=\"module\" src=\"/static/feed.js\"></script>\n</body>\n</html>\n"
    )
}

#[derive(Deserialize)]
struct EventBatch {
    #[serde(default)]
    session_id: Option<String>,
    events: Vec<ClientEvent>,
}

async fn post_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let batch: EventBatch = parse_json(&body)?;
    if batch.session_id.as_deref().is_some_and(|s| s != id) {
        return Err(ApiError::BadRequest(
            "body session_id does not match the URL".into(),
        ));
    }
    let summary = blocking(&state, move |p| {
        p.handle_event_batch(&id, &batch.events, Utc::now())
    })
    .await?;
    Ok(Json(summary).into_response())
}

#[derive(Deserialize)]
struct SurveyBody {
    responses: BTreeMap<String, serde_json::Value>,
}

async fn post_survey(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let SurveyBody { responses } = parse_json(&body)?;
    let receipt = blocking(&state, move |p| {
        p.handle_survey_submit(&id, &responses, Utc::now())
    })
    .await?;
    Ok(Json(receipt).into_response())
}

async fn get_session(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let session = blocking(&state, move |p| p.session(&id)).await?;
    Ok(Json(session).into_response())
}

async fn worlds(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let worlds = blocking(&state, move |p| p.worlds(&id)).await?;
    let plain: Vec<_> = worlds.iter().map(|w| &**w).collect();
    Ok(Json(plain).into_response())
}

async fn diversity(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let reports = blocking(&state, move |p| p.diversity(&id)).await?;
    Ok(Json(reports).into_response())
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum ExportKind {
    Interactions,
    Surveys,
    Diversity,
}

#[derive(Deserialize)]
struct ExportQuery {
    kind: ExportKind,
    #[serde(default = "default_format")]
    format: ExportFormat,
}

fn default_format() -> ExportFormat {
    ExportFormat::Csv
}

fn content_type(format: ExportFormat) -> HeaderValue {
    HeaderValue::from_static(match format {
        ExportFormat::Csv => "text/csv; charset=utf-8",
        ExportFormat::Jsonl => "application/x-ndjson",
    })
}

async fn export(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let format = q.format;
    let kind = q.kind;
    let (bytes, dwell) = blocking(&state, move |p| {
        let dwell = p.experiment(&id)?.dwell;
        let bytes = match kind {
            ExportKind::Interactions => write_interactions(&p.interaction_records(&id)?, format),
            ExportKind::Surveys => write_surveys(&p.survey_records(&id)?, format),
            ExportKind::Diversity => {
                write_rows(&p.diversity_rows(&id)?, &DIVERSITY_COLUMNS, format)
            }
        };
        Ok((bytes, dwell))
    })
    .await?;
    let mut response = bytes.into_response();
    response
        .headers_mut()
        .insert(header::CONTENT_TYPE, content_type(format));
    if kind == ExportKind::Interactions {
        let config = serde_json::to_string(&dwell).expect("dwell config serializes");
        if let Ok(value) = HeaderValue::from_str(&config) {
            response.headers_mut().insert(DWELL_CONFIG_HEADER, value);
        }
    }
    Ok(response)
}

#[derive(Deserialize)]
struct DwellQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn dwell_by_position(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<DwellQuery>,
) -> ApiResult<Response> {
    authorize(&state, &headers)?;
    let series = blocking(&state, move |p| p.dwell_by_position(&id)).await?;
    match q.format.as_deref() {
        Some("json") => Ok(Json(series).into_response()),
        None | Some("csv") => {
            let mut response = write_dwell_by_position(&series).into_response();
            response
                .headers_mut()
                .insert(header::CONTENT_TYPE, content_type(ExportFormat::Csv));
            Ok(response)
        }
        Some(other) => Err(ApiError::BadRequest(format!("unknown format `{other}`"))),
    }
}

/// Periodically abandons idle in-feed sessions.
pub fn spawn_sweeper(platform: Arc<Platform>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let p = platform.clone();
            match tokio::task::spawn_blocking(move || p.sweep_abandoned(Utc::now())).await {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => tracing::error!(error = %e, "abandonment sweep failed"),
                Err(e) => tracing::error!(error = %e, "abandonment sweep panicked"),
            }
        }
    })
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    serve_until(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

/// Serves until `shutdown` resolves, running the abandonment sweeper alongside.
pub async fn serve_until(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if state.api_key.is_none() {
        tracing::warn!("FEEDLAB_API_KEY is not set; researcher endpoints are open");
    }
    let sweeper = spawn_sweeper(state.platform.clone(), Duration::from_secs(60));
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await;
    sweeper.abort();
    result
}
