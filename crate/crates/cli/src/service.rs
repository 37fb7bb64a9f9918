//! HTTP inference service.
//!
//! Routes:
//! - `POST /inpaint`: multipart form with `image` (PNG), `mask` (PNG, 255 =
//!   known, 0 = hole; optional for blind models), and optional `composite`
//!   (default true) and `return_pyramid` (default false) text fields.
//! - `GET /healthz`: `ok`.
//! - `GET /model`: parameter count and cost of one 256×256 pass.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use texgan_core::imageio::{decode_mask, decode_rgb, encode_png};
use texgan_core::{EfficiencyReport, InpaintOptions, Inpainter, MaskBin};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

pub struct AppState {
    pub model: Inpainter,
    pub efficiency: EfficiencyReport,
}

impl AppState {
    pub fn new(model: Inpainter) -> texgan_core::Result<Self> {
        let efficiency = model.efficiency()?;
        Ok(Self { model, efficiency })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InpaintResponse {
    pub width: u32,
    pub height: u32,
    /// Base64 PNG.
    pub result: String,
    /// Base64 PNGs keyed by stage resolution, when requested.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pyramid: BTreeMap<String, String>,
    pub hole_ratio: f64,
    pub bin: MaskBin,
    pub latency_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub params: u64,
    pub params_millions: f64,
    pub gflops: f64,
    pub gmacs: f64,
    pub input_size: usize,
    pub blind: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    /// Machine-readable reason, e.g. `size_mismatch`.
    pub error: String,
    pub message: String,
}

pub struct Rejection {
    status: StatusCode,
    body: ApiError,
}

impl Rejection {
    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ApiError {
                error: code.into(),
                message: message.into(),
            },
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ApiError {
                error: "internal".into(),
                message: message.into(),
            },
        }
    }
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/model", get(model_info))
        .route("/inpaint", post(inpaint))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<ModelInfo> {
    let e = &state.efficiency;
    Json(ModelInfo {
        params: e.total_params,
        params_millions: e.params_millions(),
        gflops: e.gflops(),
        gmacs: e.gmacs(),
        input_size: e.input_size,
        blind: state.model.blind(),
    })
}

fn parse_flag(name: &str, text: &str) -> Result<bool, Rejection> {
    match text.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(Rejection::bad_request(
            "bad_field",
            format!("field {name:?} must be a boolean, got {other:?}"),
        )),
    }
}

async fn inpaint(State(state): State<Arc<AppState>>, mut form: Multipart) -> Result<Json<InpaintResponse>, Rejection> {
    let mut image_bytes = None;
    let mut mask_bytes = None;
    let mut opts = InpaintOptions {
        composite: true,
        return_pyramid: false,
    };
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| Rejection::bad_request("multipart", e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| Rejection::bad_request("multipart", e.to_string()))?;
        match name.as_str() {
            "image" => image_bytes = Some(data),
            "mask" => mask_bytes = Some(data),
            "composite" => opts.composite = parse_flag(&name, &String::from_utf8_lossy(&data))?,
            "return_pyramid" => opts.return_pyramid = parse_flag(&name, &String::from_utf8_lossy(&data))?,
            other => return Err(Rejection::bad_request("unknown_field", format!("unexpected field {other:?}"))),
        }
    }
    let image_bytes = image_bytes.ok_or_else(|| Rejection::bad_request("missing_image", "no image field"))?;
    let image = decode_rgb(&image_bytes).map_err(|e| Rejection::bad_request("bad_image", e.to_string()))?;
    let mask = match mask_bytes {
        Some(b) => Some(decode_mask(&b).map_err(|e| Rejection::bad_request("bad_mask", e.to_string()))?),
        None if state.model.blind() => None,
        None => return Err(Rejection::bad_request("missing_mask", "this model needs a mask")),
    };
    if let Some(m) = &mask {
        if (m.width() as u32, m.height() as u32) != image.dimensions() {
            return Err(Rejection::bad_request(
                "size_mismatch",
                format!(
                    "image is {}x{} but mask is {}x{}",
                    image.width(),
                    image.height(),
                    m.width(),
                    m.height()
                ),
            ));
        }
    }
    let (width, height) = image.dimensions();
    let worker = Arc::clone(&state);
    let started = Instant::now();
    let output = tokio::task::spawn_blocking(move || worker.model.inpaint(&image, mask.as_ref(), opts))
        .await
        .map_err(|e| Rejection::internal(e.to_string()))?
        .map_err(|e| Rejection::bad_request("inpaint_failed", e.to_string()))?;
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    let png = |img: image::RgbImage| -> Result<String, Rejection> {
        let bytes = encode_png(&image::DynamicImage::ImageRgb8(img)).map_err(|e| Rejection::internal(e.to_string()))?;
        Ok(B64.encode(bytes))
    };
    let mut pyramid = BTreeMap::new();
    for (stage, img) in output.pyramid {
        pyramid.insert(stage.resolution().to_string(), png(img)?);
    }
    Ok(Json(InpaintResponse {
        width,
        height,
        result: png(output.result)?,
        pyramid,
        hole_ratio: output.hole_ratio,
        bin: output.bin,
        latency_ms,
    }))
}

/// Binds and serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, host: &str, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
