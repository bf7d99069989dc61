//! HTTP + JSON front end for sketch sessions.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | `{caption, parts: [..]}` |
//! | GET | `/sessions` | |
//! | GET | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/step` | `{backend}` |
//! | POST | `/sessions/{id}/turns/{k}/regenerate` | `{backend}` |
//! | DELETE | `/sessions/{id}/parts/{label}` | |
//! | POST | `/sessions/{id}/parts/{label}/replace` | `{description, backend}` |
//! | GET | `/sessions/{id}/canvas.svg` | |
//! | GET | `/sessions/{id}/canvas.png` | |
//!
//! `backend` is `"random"`, `"replay:<record-id>"` or `"vlm"`, and defaults
//! to `"random"`. Errors come back as `{"error", "kind"}`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use partsketch::annopipe::HttpVlmClient;
use partsketch::partdata::{AnnotatedSketch, PartLabel};
use partsketch::raster::Palette;
use partsketch::session::{
    Backend, BackendError, BackendSpec, RandomBackend, ReplayBackend, Session, SessionError, SessionStore, StoreError,
    VlmBackend,
};

pub struct AppState {
    pub store: SessionStore,
    pub records: HashMap<String, AnnotatedSketch>,
    pub palette: Palette,
    /// Used for `"vlm"` when set; otherwise a client is built from the
    /// `VLM_*` environment variables on each call.
    pub vlm: Option<Arc<dyn Backend>>,
}

impl AppState {
    pub fn new(store: SessionStore, records: impl IntoIterator<Item = AnnotatedSketch>) -> Self {
        Self {
            store,
            records: records.into_iter().map(|r| (r.id.clone(), r)).collect(),
            palette: Palette::default(),
            vlm: None,
        }
    }

    fn backend(&self, spec: &str, session: &str) -> Result<Arc<dyn Backend>, ApiError> {
        match spec.parse::<BackendSpec>()? {
            BackendSpec::Random => Ok(Arc::new(RandomBackend::for_session(session))),
            BackendSpec::Replay(id) => match self.records.get(&id) {
                Some(r) => Ok(Arc::new(ReplayBackend::new(r.clone()))),
                None => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown-record", format!("no record {id}"))),
            },
            BackendSpec::Vlm => match &self.vlm {
                Some(b) => Ok(b.clone()),
                None => {
                    let client = HttpVlmClient::from_env().map_err(|e| {
                        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "vlm-unavailable", e.to_string())
                    })?;
                    Ok(Arc::new(VlmBackend::new(client)))
                }
            },
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "kind": self.kind}))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, kind) = match &e {
            SessionError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            SessionError::Exhausted => (StatusCode::CONFLICT, "exhausted"),
            SessionError::Index { .. } => (StatusCode::NOT_FOUND, "index"),
            SessionError::UnknownPart(_) => (StatusCode::NOT_FOUND, "unknown-part"),
            SessionError::Backend(b) => return b.clone().into(),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        let (status, kind) = match &e {
            BackendError::Invalid { .. } => (StatusCode::BAD_GATEWAY, "backend-invalid"),
            BackendError::NoSuchPart { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "no-such-part"),
            BackendError::Client(_) => (StatusCode::BAD_GATEWAY, "backend-unreachable"),
            BackendError::Unknown(_) => (StatusCode::BAD_REQUEST, "unknown-backend"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, kind) = match &e {
            StoreError::NotFound(_) | StoreError::InvalidId(_) => (StatusCode::NOT_FOUND, "not-found"),
            StoreError::Corrupt { .. } | StoreError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        Self::new(status, kind, e.to_string())
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking session work (file I/O, backend calls) off the runtime.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn parse_label(s: &str) -> ApiResult<PartLabel> {
    s.parse()
        .or_else(|_| s.parse::<u32>().ok().and_then(PartLabel::new).ok_or(()))
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "unknown-part", format!("no drawn part {s}")))
}

#[derive(Debug, Deserialize)]
pub struct CreateBody {
    pub caption: String,
    pub parts: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
pub struct BackendBody {
    #[serde(default)]
    pub backend: Option<String>,
}

impl BackendBody {
    fn spec(&self) -> &str {
        self.backend.as_deref().unwrap_or("random")
    }
}

#[derive(Debug, Deserialize)]
pub struct ReplaceBody {
    pub description: String,
    #[serde(default)]
    pub backend: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub caption: String,
    pub parts: usize,
    pub turns: usize,
    pub complete: bool,
    pub parent: Option<partsketch::session::BranchPoint>,
}

fn view(state: &AppState, s: &Session) -> Json<serde_json::Value> {
    Json(serde_json::to_value(s.view(&state.palette)).unwrap_or_default())
}

async fn create(State(st): State<Shared>, body: Option<Json<CreateBody>>) -> ApiResult<Response> {
    let Some(Json(body)) = body else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad-request", "expected {caption, parts}"));
    };
    blocking(move || {
        let s = Session::new(st.store.fresh_id(), body.caption, &body.parts)?;
        st.store.save(&s)?;
        Ok((StatusCode::CREATED, view(&st, &s)).into_response())
    })
    .await
}

async fn list(State(st): State<Shared>) -> ApiResult<Json<Vec<SessionSummary>>> {
    blocking(move || {
        let mut out = Vec::new();
        for id in st.store.list()? {
            let s = st.store.load(&id)?;
            out.push(SessionSummary {
                complete: s.is_complete(),
                parts: s.parts.len(),
                turns: s.turns.len(),
                id: s.id,
                caption: s.caption,
                parent: s.parent,
            });
        }
        Ok(Json(out))
    })
    .await
}

async fn get_session(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    blocking(move || Ok(view(&st, &st.store.load(&id)?))).await
}

async fn step(
    State(st): State<Shared>,
    Path(id): Path<String>,
    body: Option<Json<BackendBody>>,
) -> ApiResult<Json<serde_json::Value>> {
    let body = body.map(|b| b.0).unwrap_or_default();
    blocking(move || {
        let backend = st.backend(body.spec(), &id)?;
        let s = st.store.update(&id, |s| {
            s.step(backend.as_ref())?;
            Ok::<_, SessionError>(s.clone())
        })??;
        Ok(view(&st, &s))
    })
    .await
}

async fn regenerate(
    State(st): State<Shared>,
    Path((id, k)): Path<(String, usize)>,
    body: Option<Json<BackendBody>>,
) -> ApiResult<Response> {
    let body = body.map(|b| b.0).unwrap_or_default();
    blocking(move || {
        let parent = st.store.load(&id)?;
        let branch_id = st.store.fresh_id();
        let backend = st.backend(body.spec(), &branch_id)?;
        let branch = parent.regenerate(branch_id, k, backend.as_ref())?;
        st.store.save(&branch)?;
        Ok((StatusCode::CREATED, view(&st, &branch)).into_response())
    })
    .await
}

async fn remove_part(
    State(st): State<Shared>,
    Path((id, label)): Path<(String, String)>,
) -> ApiResult<Json<serde_json::Value>> {
    blocking(move || {
        let label = parse_label(&label)?;
        let s = st.store.update(&id, |s| {
            s.remove_part(label)?;
            Ok::<_, SessionError>(s.clone())
        })??;
        Ok(view(&st, &s))
    })
    .await
}

async fn replace_part(
    State(st): State<Shared>,
    Path((id, label)): Path<(String, String)>,
    body: Option<Json<ReplaceBody>>,
) -> ApiResult<Json<serde_json::Value>> {
    let Some(Json(body)) = body else {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad-request", "expected {description}"));
    };
    blocking(move || {
        let label = parse_label(&label)?;
        let backend = st.backend(body.backend.as_deref().unwrap_or("random"), &id)?;
        let s = st.store.update(&id, |s| {
            s.replace_part(label, &body.description, backend.as_ref())?;
            Ok::<_, SessionError>(s.clone())
        })??;
        Ok(view(&st, &s))
    })
    .await
}

async fn canvas_svg(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let s = st.store.load(&id)?;
        Ok(([(header::CONTENT_TYPE, "image/svg+xml")], s.to_svg(&st.palette)).into_response())
    })
    .await
}

async fn canvas_png(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let s = st.store.load(&id)?;
        let png = s
            .render(&st.palette)
            .to_png()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "render", e.to_string()))?;
        Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
    })
    .await
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/turns/{k}/regenerate", post(regenerate))
        .route("/sessions/{id}/parts/{label}", delete(remove_part))
        .route("/sessions/{id}/parts/{label}/replace", post(replace_part))
        .route("/sessions/{id}/canvas.svg", get(canvas_svg))
        .route("/sessions/{id}/canvas.png", get(canvas_png))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(state))).await
}
