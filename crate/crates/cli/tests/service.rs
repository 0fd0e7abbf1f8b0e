use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::response::IntoResponse;
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use derender_cli::ops::render_png;
use derender_cli::service::{router, ApiError};
use derender_cli::StageError;
use derender_core::atlas::{build_bundled_atlas, GlyphAtlas};
use derender_core::datagen::{generate_one, GenConfig};
use derender_core::export::{document_from_json, document_to_json};
use serde_json::{json, Value};
use tower::ServiceExt;

fn atlas() -> Arc<GlyphAtlas> {
    static A: OnceLock<Arc<GlyphAtlas>> = OnceLock::new();
    A.get_or_init(|| Arc::new(build_bundled_atlas().unwrap())).clone()
}

fn app() -> Router {
    router(atlas())
}

fn sample(index: usize) -> derender_core::datagen::Sample {
    let cfg = GenConfig {
        seed: 11,
        count: 4,
        ..GenConfig::default()
    };
    generate_one(&cfg, &atlas(), index).unwrap()
}

async fn send(app: Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(body.into()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn parse(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_and_fonts() {
    let (st, body) = send(app(), "GET", "/api/health", Body::empty()).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(parse(&body)["status"], "ok");
    let (st, body) = send(app(), "GET", "/api/fonts", Body::empty()).await;
    assert_eq!(st, StatusCode::OK);
    let names: Vec<String> = serde_json::from_value(parse(&body)["fonts"].clone()).unwrap();
    assert_eq!(names, atlas().font_names());
}

#[tokio::test]
async fn render_matches_the_shared_code_path() {
    let s = sample(0);
    let text = document_to_json(&s.truth).unwrap();
    let (st, png) = send(app(), "POST", "/api/render", text.clone()).await;
    assert_eq!(st, StatusCode::OK);
    let doc = document_from_json(&text, None).unwrap();
    assert_eq!(png, render_png(&doc, &atlas(), 1.0).unwrap());

    let (st, png2) = send(app(), "POST", "/api/render?scale=2", text).await;
    assert_eq!(st, StatusCode::OK);
    let img = derender_core::imaging::RasterImage::from_png_bytes(&png2).unwrap();
    assert_eq!(img.dims(), (s.image.width() * 2, s.image.height() * 2));
}

#[tokio::test]
async fn concurrent_renders_are_deterministic() {
    let texts: Vec<String> = (0..4).map(|i| document_to_json(&sample(i).truth).unwrap()).collect();
    let handles: Vec<_> = (0..8)
        .map(|k| {
            let body = texts[k % 4].clone();
            tokio::spawn(async move { send(app(), "POST", "/api/render", body).await })
        })
        .collect();
    let mut out = Vec::new();
    for h in handles {
        let (st, png) = h.await.unwrap();
        assert_eq!(st, StatusCode::OK);
        out.push(png);
    }
    for k in 0..4 {
        assert_eq!(out[k], out[k + 4]);
        let doc = document_from_json(&texts[k], None).unwrap();
        assert_eq!(out[k], render_png(&doc, &atlas(), 1.0).unwrap());
    }
}

#[tokio::test]
async fn malformed_documents_get_field_diagnostics() {
    let s = sample(1);
    let mut v: Value = serde_json::from_str(&document_to_json(&s.truth).unwrap()).unwrap();
    v["elements"][0]["font_size"] = json!(-3.0);
    let (st, body) = send(app(), "POST", "/api/render", v.to_string()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(parse(&body)["field"], "elements[0].font_size");

    v["elements"][0]["font_size"] = json!(20.0);
    v["elements"][0]["colour"] = json!(1);
    let (st, body) = send(app(), "POST", "/api/render", v.to_string()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(parse(&body)["field"], "elements[0].colour");

    v["elements"][0].as_object_mut().unwrap().remove("colour");
    v["background"] = json!({ "path": "bg.png" });
    let (st, body) = send(app(), "POST", "/api/render", v.to_string()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(parse(&body)["field"], "background.path");

    let (st, _) = send(app(), "POST", "/api/render", "{not json").await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = send(app(), "POST", "/api/render?scale=0", document_to_json(&s.truth).unwrap()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn internal_errors_name_the_module() {
    let err = StageError::stage("refine", derender_core::Error::NonFinite("loss".into()));
    let resp = ApiError(err).into_response();
    assert_eq!(resp.status(), StatusCode::INTERNAL_SERVER_ERROR);
    let body = parse(&to_bytes(resp.into_body(), usize::MAX).await.unwrap());
    assert_eq!(body["module"], "refine");
}

#[tokio::test]
async fn edit_endpoint_patches_and_validates() {
    let s = sample(2);
    let doc: Value = serde_json::from_str(&document_to_json(&s.truth).unwrap()).unwrap();
    let req = json!({ "document": doc, "set": [{ "path": "elements[0].text", "value": "BACON" }] });
    let (st, body) = send(app(), "POST", "/api/edit", req.to_string()).await;
    assert_eq!(st, StatusCode::OK);
    let out = parse(&body);
    assert_eq!(out["elements"][0]["text"], "BACON");
    assert_eq!(out["elements"][0]["effects"], doc["elements"][0]["effects"]);

    let req = json!({ "document": doc, "set": [{ "path": "elements[0].font_size", "value": -3 }] });
    let (st, body) = send(app(), "POST", "/api/edit", req.to_string()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(parse(&body)["field"], "elements[0].font_size");
}

fn derender_body(s: &derender_core::datagen::Sample, iterations: usize, perturb: bool) -> Value {
    let b = s.word_boxes[0];
    let mut v = json!({
        "image_png_base64": BASE64.encode(s.image.to_png_bytes().unwrap()),
        "words": [{ "box": [b.x0, b.y0, b.width(), b.height()], "text": s.truth.elements[0].text }],
        "iterations": iterations,
        "seed": 1,
    });
    if perturb {
        let doc: Value = serde_json::from_str(&document_to_json(&s.truth).unwrap()).unwrap();
        v["perturb"] = doc;
    }
    v
}

#[tokio::test]
async fn derender_streams_progress_then_the_document() {
    let s = sample(3);
    let (st, body) = send(app(), "POST", "/api/derender", derender_body(&s, 30, true).to_string()).await;
    assert_eq!(st, StatusCode::OK);
    let events: Vec<Value> = std::str::from_utf8(&body)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(events[0]["event"], "started");
    let iters: Vec<u64> = events
        .iter()
        .filter(|e| e["event"] == "iteration")
        .map(|e| e["iteration"].as_u64().unwrap())
        .collect();
    assert_eq!(iters, [0, 10, 20, 30]);
    let done = events.last().unwrap();
    assert_eq!(done["event"], "done", "{done}");
    let report = &done["report"][0];
    assert!(report["final_psnr"].as_f64().unwrap() > report["initial_psnr"].as_f64().unwrap());
    let doc = document_from_json(&done["document"].to_string(), None).unwrap();
    assert_eq!(doc.elements[0].text, s.truth.elements[0].text);
}

#[tokio::test]
async fn derender_rejects_bad_requests_up_front() {
    let s = sample(3);
    let mut v = derender_body(&s, 5, false);
    v["iterations"] = json!(0);
    let (st, _) = send(app(), "POST", "/api/derender", v.to_string()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let mut v = derender_body(&s, 5, false);
    v["words"][0].as_object_mut().unwrap().remove("text");
    let (st, body) = send(app(), "POST", "/api/derender", v.to_string()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(parse(&body)["field"].as_str().unwrap().starts_with("words[0]"));

    let mut v = derender_body(&s, 5, false);
    v["image_png_base64"] = json!("!!!");
    let (st, body) = send(app(), "POST", "/api/derender", v.to_string()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(parse(&body)["field"], "image_png_base64");

    let mut v = derender_body(&s, 5, false);
    v["words"][0]["box"] = json!([-50.0, 0.0, 10.0, 10.0]);
    let (st, _) = send(app(), "POST", "/api/derender", v.to_string()).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[test]
fn serves_over_a_real_socket() {
    use std::io::{Read, Write};
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move { axum::serve(listener, app()).await.unwrap() });
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    stream
        .write_all(b"GET /api/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"status\":\"ok\""));
}

#[tokio::test]
async fn api_and_cli_render_identical_bytes() {
    let s = sample(0);
    let dir = tempfile::TempDir::new().unwrap();
    let doc = dir.path().join("d.json");
    let png = dir.path().join("d.png");
    let text = document_to_json(&s.truth).unwrap();
    std::fs::write(&doc, &text).unwrap();
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_derender"))
        .args(["render", "--doc", doc.to_str().unwrap(), "--out", png.to_str().unwrap(), "--scale", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    let (st, body) = send(app(), "POST", "/api/render?scale=2", text).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body, std::fs::read(&png).unwrap());
}
