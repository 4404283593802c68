//! HTTP front end for [`dorag_core::Engine`].
//!
//! | method | path                     | body / result                          |
//! |--------|--------------------------|----------------------------------------|
//! | POST   | `/documents`             | JSON, multipart or raw text; receipt   |
//! | GET    | `/documents/{id}/status` | document record                        |
//! | POST   | `/chat`                  | [`ChatRequest`]; envelope + session id |
//! | GET    | `/trace/{id}`            | ordered trace events                   |
//! | GET    | `/graph/stats`           | node, edge and synopsis counts         |
//! | POST   | `/eval/run`              | JSONL dataset; suite report            |
//!
//! `/chat` streams server-sent events (`condensed`, then `envelope`) when the
//! request accepts `text/event-stream`.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dorag_core::config::ExtractionMode;
use dorag_core::ingest::Format;
use dorag_core::pipeline::{ChatRequest, IngestReceipt};
use dorag_core::{Engine, EngineError};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// JSON error body. `doc_id` is set for duplicate uploads.
#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
}

pub struct ApiError(pub StatusCode, pub ErrorBody);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self(status, ErrorBody { error: msg.into(), doc_id: None })
    }
}

pub fn status_for(e: &EngineError) -> StatusCode {
    match e {
        EngineError::Ingest(_) | EngineError::Dataset(_) => StatusCode::BAD_REQUEST,
        EngineError::Duplicate { .. } => StatusCode::CONFLICT,
        EngineError::EmptyQuery | EngineError::InvalidRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
        EngineError::Unanswerable => StatusCode::SERVICE_UNAVAILABLE,
        EngineError::UnknownSession(_) | EngineError::UnknownDocument(_) => StatusCode::NOT_FOUND,
        EngineError::Provider(_) => StatusCode::BAD_GATEWAY,
        EngineError::Config(_) | EngineError::Io(_) | EngineError::Kg(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let doc_id = match &e {
            EngineError::Duplicate { doc_id } => Some(doc_id.clone()),
            _ => None,
        };
        Self(status_for(&e), ErrorBody { error: e.to_string(), doc_id })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, EngineError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/documents", post(post_document))
        .route("/documents/{id}/status", get(document_status))
        .route("/chat", post(chat))
        .route("/trace/{id}", get(trace))
        .route("/graph/stats", get(graph_stats))
        .route("/eval/run", post(eval_run))
        .layer(middleware::from_fn(log_request))
        .with_state(engine)
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        %method,
        %path,
        status = resp.status().as_u16(),
        duration_ms = started.elapsed().as_secs_f64() * 1000.0,
        "request"
    );
    resp
}

/// JSON upload body.
#[derive(Debug, Deserialize)]
pub struct DocumentUpload {
    pub content: String,
    #[serde(default)]
    pub format: Option<Format>,
    /// File name or URI; its extension picks the format when `format` is absent.
    #[serde(default)]
    pub origin_uri: Option<String>,
}

fn format_for(explicit: Option<Format>, origin: &str) -> Format {
    explicit.unwrap_or_else(|| match origin.rsplit_once('.') {
        Some((_, ext)) => Format::from_extension(ext),
        None => Format::default(),
    })
}

struct Upload {
    raw: Vec<u8>,
    format: Format,
    origin: String,
}

async fn read_upload(req: Request) -> ApiResult<Upload> {
    let content_type =
        req.headers().get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or_default().to_ascii_lowercase();
    let bad = |msg: String| ApiError::new(StatusCode::BAD_REQUEST, msg);
    if content_type.starts_with("multipart/form-data") {
        let mut mp = Multipart::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?;
        let mut file: Option<(Vec<u8>, String)> = None;
        let mut format = None;
        while let Some(field) = mp.next_field().await.map_err(|e| bad(e.body_text()))? {
            match field.name() {
                Some("format") => {
                    let text = field.text().await.map_err(|e| bad(e.body_text()))?;
                    format = Some(text.parse::<Format>().map_err(bad)?);
                }
                _ if file.is_none() => {
                    let name = field.file_name().unwrap_or_default().to_string();
                    let bytes = field.bytes().await.map_err(|e| bad(e.body_text()))?;
                    file = Some((bytes.to_vec(), name));
                }
                _ => {}
            }
        }
        let (raw, origin) = file.ok_or_else(|| bad("multipart body has no file field".into()))?;
        return Ok(Upload { format: format_for(format, &origin), raw, origin });
    }
    if content_type.starts_with("application/json") {
        let Json(up) = Json::<DocumentUpload>::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?;
        let origin = up.origin_uri.unwrap_or_default();
        return Ok(Upload { format: format_for(up.format, &origin), raw: up.content.into_bytes(), origin });
    }
    let format = if content_type.starts_with("text/html") {
        Format::Html
    } else if content_type.starts_with("text/plain") {
        Format::Plain
    } else {
        Format::Markdown
    };
    let raw = Bytes::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?;
    Ok(Upload { raw: raw.to_vec(), format, origin: String::new() })
}

async fn post_document(
    State(engine): State<Arc<Engine>>,
    req: Request,
) -> ApiResult<(StatusCode, Json<IngestReceipt>)> {
    let up = read_upload(req).await?;
    let e = engine.clone();
    let receipt = blocking(move || e.ingest(&up.raw, up.format, &up.origin)).await?;
    if engine.config().extraction == ExtractionMode::Async {
        let doc_id = receipt.doc_id.clone();
        tokio::task::spawn_blocking(move || {
            if let Err(err) = engine.build_kg() {
                tracing::error!(%doc_id, "extraction failed: {err}");
            }
        });
    }
    Ok((StatusCode::CREATED, Json(receipt)))
}

async fn document_status(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<Response> {
    let rec = engine.document(&id).ok_or_else(|| ApiError::from(EngineError::UnknownDocument(id)))?;
    Ok(Json(rec).into_response())
}

fn wants_stream(headers: &HeaderMap) -> bool {
    headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).is_some_and(|v| v.contains("text/event-stream"))
}

async fn chat(State(engine): State<Arc<Engine>>, headers: HeaderMap, req: Request) -> ApiResult<Response> {
    let Json(body) = Json::<ChatRequest>::from_request(req, &())
        .await
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let resp = blocking(move || engine.chat(&body)).await?;
    if !wants_stream(&headers) {
        return Ok(Json(resp).into_response());
    }
    let envelope = serde_json::to_string(&resp).expect("response serializes");
    let events = vec![
        Ok::<_, Infallible>(Event::default().event("condensed").data(resp.envelope.condensed.clone())),
        Ok(Event::default().event("envelope").data(envelope)),
    ];
    Ok(Sse::new(futures_util::stream::iter(events)).into_response())
}

async fn trace(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> ApiResult<Response> {
    let events =
        engine.trace(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown trace `{id}`")))?;
    Ok(Json(events).into_response())
}

async fn graph_stats(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.graph_stats()).into_response()
}

#[derive(Debug, Deserialize)]
struct EvalUpload {
    dataset: String,
}

/// Accepts `{"dataset": "<jsonl>"}` or the JSONL text itself.
async fn eval_run(State(engine): State<Arc<Engine>>, req: Request) -> ApiResult<Response> {
    let is_json = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let bad = |msg: String| ApiError::new(StatusCode::BAD_REQUEST, msg);
    let dataset = if is_json {
        Json::<EvalUpload>::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?.0.dataset
    } else {
        let raw = Bytes::from_request(req, &()).await.map_err(|e| bad(e.body_text()))?;
        String::from_utf8(raw.to_vec()).map_err(|e| bad(e.to_string()))?
    };
    let report = blocking(move || engine.eval(&dataset)).await?;
    let table = report.to_table();
    Ok(Json(json!({"report": report, "table": table})).into_response())
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(engine: Arc<Engine>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine)).await
}
