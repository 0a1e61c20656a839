//! HTTP render service.
//!
//! `GET /model/info` describes the loaded model and `POST /render` returns a
//! PNG rendered through the blocked evaluator. Requests are stateless: every
//! render carries its full camera and optional transfer function.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fvsrn_core::camera::Camera;
use fvsrn_core::fused::{FusedEvaluator, FusedPlan};
use fvsrn_core::model::{FvsrnModel, GridPrecision, Head, ModelConfig, WeightPrecision};
use fvsrn_core::render::{render_image, ModelSource, RenderSettings, Source};
use fvsrn_core::tf::{ControlPoint, TransferFunction};
use fvsrn_core::Vec3;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Header;
use crate::imageio::encode_png;

pub const RENDER_MS_HEADER: &str = "x-render-ms";
/// Largest accepted `width · height`.
pub const MAX_PIXELS: usize = 4096 * 4096;
/// Voxels per axis assumed when the checkpoint does not record its volume.
pub const DEFAULT_VOLUME_RESOLUTION: usize = 64;

pub fn tf_presets() -> BTreeMap<&'static str, TransferFunction> {
    BTreeMap::from([
        ("ramp", TransferFunction::ramp(20.0)),
        ("two_peaks", TransferFunction::two_peaks(40.0)),
    ])
}

/// A loaded model; never mutated after construction.
pub struct Session {
    model: FvsrnModel,
    fused: FusedEvaluator,
    weight_precision: WeightPrecision,
    grid_precision: GridPrecision,
    volume_dims: Option<[usize; 3]>,
    default_tf: TransferFunction,
}

impl Session {
    pub fn new(model: FvsrnModel, header: Option<&Header>) -> crate::Result<Self> {
        let plan = FusedPlan::for_model(&model)?;
        let fused = FusedEvaluator::new(&plan, model.mlp())?;
        Ok(Self {
            fused,
            weight_precision: header.map_or(WeightPrecision::F32, |h| h.weight_precision),
            grid_precision: header.map_or(GridPrecision::F32, |h| h.grid_precision),
            volume_dims: header.and_then(|h| h.volume_dims),
            default_tf: TransferFunction::ramp(20.0),
            model,
        })
    }

    pub fn model(&self) -> &FvsrnModel {
        &self.model
    }

    pub fn info(&self) -> ModelInfo {
        let m = self
            .model
            .memory_footprint(self.weight_precision, self.grid_precision);
        ModelInfo {
            config: self.model.config().clone(),
            memory: MemoryInfo {
                network_bytes: m.network,
                grid_bytes: m.grid,
                total_bytes: m.total,
                weight_precision: self.weight_precision,
                grid_precision: self.grid_precision,
            },
            temporal_span: self.model.temporal_span(),
            volume_dims: self.volume_dims,
            tf_presets: tf_presets()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.points().to_vec()))
                .collect(),
        }
    }

    fn resolution(&self) -> usize {
        self.volume_dims.map_or(DEFAULT_VOLUME_RESOLUTION, |d| {
            d.into_iter().max().unwrap_or(1)
        })
    }

    /// Renders one request to PNG bytes.
    pub fn render(&self, req: &RenderRequest) -> Result<Vec<u8>, ApiError> {
        let camera = req.camera()?;
        if !(req.stepsize_voxels > 0.0 && req.stepsize_voxels.is_finite()) {
            return Err(ApiError::invalid("stepsize_voxels must be positive"));
        }
        let tf = match (&req.tf, self.model.head()) {
            (Some(_), Head::Color) => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "transfer functions only apply to density models",
                ))
            }
            (Some(points), Head::Density) => Some(
                TransferFunction::new(points.clone())
                    .map_err(|e| ApiError::invalid(e.to_string()))?,
            ),
            (None, Head::Density) => Some(self.default_tf.clone()),
            (None, Head::Color) => None,
        };
        let source = ModelSource {
            model: &self.model,
            tf: tf.as_ref(),
            time: req.t,
            fused: Some(&self.fused),
        };
        source
            .validate()
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        let settings =
            RenderSettings::default().with_voxel_stepsize(req.stepsize_voxels, self.resolution());
        let image = render_image(&Source::Model(source), &camera, &settings)
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        encode_png(&image)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryInfo {
    pub network_bytes: usize,
    pub grid_bytes: usize,
    pub total_bytes: usize,
    pub weight_precision: WeightPrecision,
    pub grid_precision: GridPrecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub config: ModelConfig,
    pub memory: MemoryInfo,
    pub temporal_span: Option<[u32; 2]>,
    pub volume_dims: Option<[usize; 3]>,
    pub tf_presets: BTreeMap<String, Vec<ControlPoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub eye: Vec3,
    pub target: Vec3,
    #[serde(default = "default_up")]
    pub up: Vec3,
    #[serde(default = "default_fov")]
    pub fov_y_deg: f32,
}

fn default_up() -> Vec3 {
    [0.0, 1.0, 0.0]
}

fn default_fov() -> f32 {
    40.0
}

fn default_stepsize() -> f32 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub camera: CameraSpec,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_stepsize")]
    pub stepsize_voxels: f32,
    #[serde(default)]
    pub tf: Option<Vec<ControlPoint>>,
    #[serde(default)]
    pub t: Option<f32>,
}

impl RenderRequest {
    pub fn camera(&self) -> Result<Camera, ApiError> {
        if self.width.saturating_mul(self.height) > MAX_PIXELS {
            return Err(ApiError::invalid(format!(
                "image larger than {MAX_PIXELS} pixels"
            )));
        }
        let camera = Camera {
            eye: self.camera.eye,
            target: self.camera.target,
            up: self.camera.up,
            fov_y: self.camera.fov_y_deg.to_radians(),
            width: self.width,
            height: self.height,
        };
        camera
            .validate()
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        Ok(camera)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

/// Shared server state. The session slot starts empty until a model is
/// loaded.
#[derive(Clone, Default)]
pub struct AppState {
    session: Arc<RwLock<Option<Arc<Session>>>>,
}

impl AppState {
    pub fn new(session: Session) -> Self {
        let state = Self::default();
        state.load(session);
        state
    }

    pub fn load(&self, session: Session) {
        *self.session.write().unwrap() = Some(Arc::new(session));
    }

    fn current(&self) -> Result<Arc<Session>, ApiError> {
        self.session
            .read()
            .unwrap()
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded"))
    }
}

async fn model_info(State(state): State<AppState>) -> Result<Json<ModelInfo>, ApiError> {
    Ok(Json(state.current()?.info()))
}

async fn render(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let session = state.current()?;
    let req: RenderRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::invalid(format!("bad request body: {e}")))?;
    let (png, ms) = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        session
            .render(&req)
            .map(|png| (png, start.elapsed().as_secs_f64() * 1e3))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let mut response = png.into_response();
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(
        RENDER_MS_HEADER,
        HeaderValue::from_str(&format!("{ms:.3}")).unwrap(),
    );
    Ok(response)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/model/info", get(model_info))
        .route("/render", post(render))
        .with_state(state)
}

pub async fn serve(state: AppState, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
