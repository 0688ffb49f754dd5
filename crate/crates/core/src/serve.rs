//! HTTP inference over a frozen checkpoint.
//!
//! | method | path                | body                                   |
//! |--------|---------------------|----------------------------------------|
//! | GET    | `/api/meta`         |                                        |
//! | GET    | `/api/layout/{id}`  |                                        |
//! | POST   | `/api/synthesize`   | `{"layout_id": .., "noise": [..]}`     |
//! | POST   | `/api/sweep`        | `{"layout_id": .., "class": c, "steps": [..]}` |
//!
//! Images are returned as PNG. Out-of-range noise is clamped to [-1,1]; the
//! response then carries `X-Noise-Clamped: true` and the applied noise in
//! `X-Noise`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{quantize, read_layout, ImageRgb, NoiseVector, Rgb, SemanticLayout};
use crate::error::{Error, Result};
use crate::evaluation::sweep_images;
use crate::models::{Checkpoint, Generator};
use crate::training::load_generator;

pub const DEFAULT_PORT: u16 = 7878;
pub const CLAMP_HEADER: &str = "x-noise-clamped";
pub const NOISE_HEADER: &str = "x-noise";

/// Immutable state shared by every request handler.
#[derive(Debug)]
pub struct ServeState {
    pub generator: Generator<f32>,
    pub layouts: BTreeMap<String, SemanticLayout>,
    pub class_names: Vec<String>,
    pub palette: Vec<Rgb>,
    pub default_steps: Vec<f64>,
}

fn layout_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = |d: &Path| -> Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> = std::fs::read_dir(d)
            .map_err(|e| Error::io(d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        v.sort();
        Ok(v)
    };
    let direct = read(dir)?;
    if direct.is_empty() && dir.join("layouts").is_dir() {
        return read(&dir.join("layouts"));
    }
    Ok(direct)
}

impl ServeState {
    pub fn new(generator: Generator<f32>, layouts: BTreeMap<String, SemanticLayout>, class_names: Vec<String>, palette: Vec<Rgb>) -> Result<Self> {
        if layouts.is_empty() {
            return Err(Error::Invalid("no layouts to serve".into()));
        }
        if let Some((id, _)) = layouts.iter().find(|(_, l)| l.class_count() != generator.class_count()) {
            return Err(Error::Invalid(format!("layout {id} has a different class count than the model")));
        }
        Ok(Self {
            generator,
            layouts,
            class_names,
            palette,
            default_steps: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        })
    }

    /// Loads a checkpoint and every `*.pgm` in `layouts_dir` (or its
    /// `layouts/` subdirectory); ids are file stems.
    pub fn load(checkpoint: &Path, layouts_dir: &Path) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint)?;
        let (run, generator) = load_generator(&ck)?;
        let classes = generator.class_count();
        let mut layouts = BTreeMap::new();
        for p in layout_files(layouts_dir)? {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            layouts.insert(id, read_layout(&p, classes)?);
        }
        let mut s = Self::new(generator, layouts, run.world.class_names, run.world.palette)?;
        s.default_steps = run.eval.linkage_steps;
        Ok(s)
    }

    fn layout(&self, id: &str) -> std::result::Result<&SemanticLayout, ApiError> {
        self.layouts
            .get(id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown layout {id:?}")))
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// PNG bytes of an RGB image, quantised like the PPM writer.
pub fn encode_png(image: &ImageRgb) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let err = |e: png::EncodingError| Error::Invalid(format!("png encoding failed: {e}"));
    let mut w = enc.write_header().map_err(err)?;
    let px: Vec<u8> = image.values().iter().map(|&v| quantize(v)).collect();
    w.write_image_data(&px).map_err(err)?;
    w.finish().map_err(err)?;
    Ok(out)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

#[derive(Serialize)]
struct Meta<'a> {
    class_count: usize,
    class_names: &'a [String],
    layout_ids: Vec<&'a str>,
    image_size: [usize; 2],
}

async fn meta(State(s): State<Arc<ServeState>>) -> impl IntoResponse {
    let first = s.layouts.values().next().expect("non-empty catalog");
    Json(Meta {
        class_count: s.generator.class_count(),
        class_names: &s.class_names,
        layout_ids: s.layouts.keys().map(String::as_str).collect(),
        image_size: [first.width(), first.height()],
    })
    .into_response()
}

async fn layout(State(s): State<Arc<ServeState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let l = s.layout(&id)?;
    Ok(Json(json!({
        "width": l.width(),
        "height": l.height(),
        "pixels": l.pixels(),
        "palette": s.palette,
    }))
    .into_response())
}

#[derive(Deserialize)]
struct SynthRequest {
    layout_id: String,
    noise: Vec<f64>,
}

fn noise_header(n: &NoiseVector) -> String {
    n.values().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
}

async fn synthesize(State(s): State<Arc<ServeState>>, body: Bytes) -> ApiResult<Response> {
    let req: SynthRequest = parse_body(&body)?;
    let l = s.layout(&req.layout_id)?.clone();
    let classes = s.generator.class_count();
    if req.noise.len() != classes {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("noise has {} entries; expected {classes}", req.noise.len()),
        ));
    }
    if req.noise.iter().any(|v| !v.is_finite()) {
        return Err(ApiError(StatusCode::BAD_REQUEST, "noise entries must be finite".into()));
    }
    let (noise, clamped) = NoiseVector::clamped(&req.noise);
    let state = s.clone();
    let n2 = noise.clone();
    let png = tokio::task::spawn_blocking(move || encode_png(&state.generator.synthesize_one(&l, &n2)?))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let mut resp = (StatusCode::OK, [(header::CONTENT_TYPE, "image/png")], png).into_response();
    let h = resp.headers_mut();
    h.insert(CLAMP_HEADER, HeaderValue::from_static(if clamped { "true" } else { "false" }));
    h.insert(
        NOISE_HEADER,
        HeaderValue::from_str(&noise_header(&noise)).expect("ascii header"),
    );
    Ok(resp)
}

#[derive(Deserialize)]
struct SweepRequest {
    layout_id: String,
    class: usize,
    steps: Option<Vec<f64>>,
}

async fn sweep(State(s): State<Arc<ServeState>>, body: Bytes) -> ApiResult<Response> {
    let req: SweepRequest = parse_body(&body)?;
    let l = s.layout(&req.layout_id)?.clone();
    let classes = s.generator.class_count();
    if req.class >= classes {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            format!("class {} out of range; expected 0..{classes}", req.class),
        ));
    }
    let steps = req.steps.unwrap_or_else(|| s.default_steps.clone());
    if steps.len() < 2 || steps.iter().any(|v| !v.is_finite()) {
        return Err(ApiError(StatusCode::BAD_REQUEST, "sweep needs at least 2 finite steps".into()));
    }
    let state = s.clone();
    let images = tokio::task::spawn_blocking(move || -> Result<Vec<String>> {
        let b64 = base64::engine::general_purpose::STANDARD;
        sweep_images(&state.generator, &l, req.class, &steps)?
            .iter()
            .map(|img| Ok(b64.encode(encode_png(img)?)))
            .collect()
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(images).into_response())
}

async fn allow_any_origin(mut resp: Response) -> Response {
    resp.headers_mut()
        .insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    resp.headers_mut().insert(
        header::ACCESS_CONTROL_EXPOSE_HEADERS,
        HeaderValue::from_static("x-noise-clamped, x-noise"),
    );
    resp
}

pub fn router(state: Arc<ServeState>) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/layout/{id}", get(layout))
        .route("/api/synthesize", post(synthesize))
        .route("/api/sweep", post(sweep))
        .layer(axum::middleware::map_response(allow_any_origin))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn run(listener: tokio::net::TcpListener, state: Arc<ServeState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves on a fresh multi-threaded runtime.
pub fn serve_blocking(addr: SocketAddr, state: ServeState) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Invalid(format!("runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Invalid(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| Error::Invalid(e.to_string()))?);
        run(listener, Arc::new(state))
            .await
            .map_err(|e| Error::Invalid(format!("server failed: {e}")))
    })
}
