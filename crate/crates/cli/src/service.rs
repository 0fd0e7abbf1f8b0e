//! Stateless HTTP front end. The atlas is shared read-only; every request
//! owns its parameters.
//!
//! - `GET /api/health`
//! - `GET /api/fonts`: font names in atlas order
//! - `POST /api/render?scale=S`: document JSON in, PNG out
//! - `POST /api/edit`: `{document, set: [{path, value}]}` in, document out
//! - `POST /api/derender`: newline-delimited JSON progress events, ending
//!   with a `done` (document and report) or `error` event

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use derender_core::atlas::GlyphAtlas;
use derender_core::compositor::Document;
use derender_core::export::{document_from_json, document_from_value, document_value_inline};
use derender_core::imaging::{RasterImage, Rect};
use derender_core::Error;
use futures::channel::mpsc;
use futures::StreamExt;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::derender::{derender, validate_request, DerenderRequest, WordSpec};
use crate::error::StageError;
use crate::ops::{edit_value, render_png};

#[derive(Clone)]
pub struct AppState {
    pub atlas: Arc<GlyphAtlas>,
}

pub fn router(atlas: Arc<GlyphAtlas>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/fonts", get(fonts))
        .route("/api/render", post(render))
        .route("/api/edit", post(edit))
        .route("/api/derender", post(derender_stream))
        .with_state(AppState { atlas })
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, atlas: Arc<GlyphAtlas>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(atlas))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// JSON error body: `{error, module, field?}`; 400 for bad input, 500 otherwise.
pub struct ApiError(pub StageError);

impl ApiError {
    fn body(&self) -> Value {
        let e = &self.0;
        let mut v = json!({ "error": e.source.to_string(), "module": e.module });
        if let Some(f) = e.field() {
            v["field"] = json!(f);
        }
        v
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = if self.0.is_client_error() {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        (status, Json(self.body())).into_response()
    }
}

impl From<StageError> for ApiError {
    fn from(e: StageError) -> Self {
        Self(e)
    }
}

fn bad_field(field: &str, reason: impl Into<String>) -> ApiError {
    ApiError(StageError::input(
        "cli",
        Error::Schema {
            field: field.into(),
            reason: reason.into(),
        },
    ))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        bad_field(&path, e.inner().to_string())
    })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, StageError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError),
        Err(e) => Err(ApiError(StageError::stage("cli", Error::Invariant(format!("worker failed: {e}"))))),
    }
}

async fn health(State(s): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "fonts": s.atlas.num_fonts(),
        "glyphs": s.atlas.glyphs().len(),
    }))
}

async fn fonts(State(s): State<AppState>) -> Json<Value> {
    Json(json!({ "fonts": s.atlas.font_names() }))
}

#[derive(Deserialize)]
struct RenderQuery {
    scale: Option<f64>,
}

async fn render(
    State(s): State<AppState>,
    Query(q): Query<RenderQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| bad_field(".", "body is not UTF-8"))?.to_string();
    let scale = q.scale.unwrap_or(1.0);
    let png = blocking(move || {
        let doc = document_from_json(&text, None).map_err(|e| StageError::input("export", e))?;
        render_png(&doc, &s.atlas, scale)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Assignment {
    path: String,
    /// Raw value text, or any JSON value.
    value: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EditBody {
    document: Value,
    set: Vec<Assignment>,
}

async fn edit(State(s): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: EditBody = parse_body(&body)?;
    let sets: Vec<(String, String)> = req
        .set
        .into_iter()
        .map(|a| {
            let raw = match a.value {
                Value::String(s) => s,
                v => v.to_string(),
            };
            (a.path, raw)
        })
        .collect();
    let out = blocking(move || edit_value(req.document, &sets, None, &s.atlas)).await?;
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WordBody {
    /// `[x, y, width, height]`.
    #[serde(rename = "box")]
    bbox: [f64; 4],
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DerenderBody {
    image_png_base64: String,
    words: Vec<WordBody>,
    #[serde(default = "default_iterations")]
    iterations: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    perturb: Option<Value>,
}

fn default_iterations() -> usize {
    derender_core::refine::RefineConfig::default().iterations
}

fn decode_request(body: &[u8]) -> Result<DerenderRequest, ApiError> {
    let b: DerenderBody = parse_body(body)?;
    let png = BASE64
        .decode(b.image_png_base64.as_bytes())
        .map_err(|e| bad_field("image_png_base64", e.to_string()))?;
    let image = RasterImage::from_png_bytes(&png).map_err(|e| bad_field("image_png_base64", e.to_string()))?;
    let perturb: Option<Document> = b
        .perturb
        .map(|v| {
            document_from_value(v, None).map_err(|e| match e {
                Error::Schema { field, reason } => bad_field(&format!("perturb.{field}"), reason),
                other => ApiError(StageError::input("export", other)),
            })
        })
        .transpose()?;
    let words = b
        .words
        .into_iter()
        .map(|w| WordSpec {
            word_box: Rect::from_xywh(w.bbox[0], w.bbox[1], w.bbox[2], w.bbox[3]),
            text: w.text,
        })
        .collect();
    Ok(DerenderRequest {
        image,
        words,
        iterations: b.iterations,
        seed: b.seed,
        perturb,
    })
}

fn line(v: &impl serde::Serialize) -> Bytes {
    let mut s = serde_json::to_string(v).expect("event serializes");
    s.push('\n');
    Bytes::from(s)
}

async fn derender_stream(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req = decode_request(&body)?;
    validate_request(&req, &s.atlas)?;

    let (tx, rx) = mpsc::unbounded::<Bytes>();
    tokio::task::spawn_blocking(move || {
        let send = |b: Bytes| {
            // A closed channel means the client left; the work finishes unobserved.
            let _ = tx.unbounded_send(b);
        };
        let result = derender(&req, &s.atlas, &|p| send(line(&p)));
        let last = match result.and_then(|out| {
            let doc = document_value_inline(&out.document).map_err(|e| StageError::stage("export", e))?;
            Ok(json!({ "event": "done", "document": doc, "report": out.report }))
        }) {
            Ok(v) => v,
            Err(e) => {
                let mut v = ApiError(e).body();
                v["event"] = json!("error");
                v
            }
        };
        send(line(&last));
    });
    let stream = rx.map(Ok::<_, Infallible>);
    Ok(Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(stream))
        .expect("static response parts"))
}
