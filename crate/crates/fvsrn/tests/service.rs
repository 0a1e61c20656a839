use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fvsrn::core::model::{FvsrnModel, GridConfig, Head, ModelConfig, TemporalConfig, TimeEncoding};
use fvsrn::service::{router, AppState, ModelInfo, Session, RENDER_MS_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn density_app() -> Router {
    let model = FvsrnModel::new(ModelConfig::default()).unwrap();
    router(AppState::new(Session::new(model, None).unwrap()))
}

fn color_app() -> Router {
    let model = FvsrnModel::new(ModelConfig {
        head: Head::Color,
        grid: Some(GridConfig {
            resolution: 4,
            channels: 4,
        }),
        ..ModelConfig::default()
    })
    .unwrap();
    router(AppState::new(Session::new(model, None).unwrap()))
}

fn temporal_app() -> Router {
    let model = FvsrnModel::new(ModelConfig {
        grid: Some(GridConfig {
            resolution: 4,
            channels: 4,
        }),
        temporal: Some(TemporalConfig {
            encoding: TimeEncoding::Direct,
            keyframes: vec![0, 10],
            span: [0, 10],
            ..TemporalConfig::default()
        }),
        ..ModelConfig::default()
    })
    .unwrap();
    router(AppState::new(Session::new(model, None).unwrap()))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let ms = res
        .headers()
        .get(RENDER_MS_HEADER)
        .map(|v| v.to_str().unwrap().to_owned());
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ms)
}

async fn info(app: &Router) -> (StatusCode, Vec<u8>) {
    let (s, b, _) = call(
        app,
        Request::get("/model/info").body(Body::empty()).unwrap(),
    )
    .await;
    (s, b)
}

async fn render(app: &Router, body: Value) -> (StatusCode, Vec<u8>, Option<String>) {
    let req = Request::post("/render")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

fn request(width: usize, height: usize) -> Value {
    json!({
        "camera": { "eye": [0.5, 0.5, 2.5], "target": [0.5, 0.5, 0.5] },
        "width": width,
        "height": height,
        "stepsize_voxels": 2.0
    })
}

#[tokio::test]
async fn empty_server_is_unavailable() {
    let app = router(AppState::default());
    assert_eq!(info(&app).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(
        render(&app, request(8, 8)).await.0,
        StatusCode::SERVICE_UNAVAILABLE
    );
}

#[tokio::test]
async fn info_reports_memory_and_is_stable() {
    let app = density_app();
    let (status, first) = info(&app).await;
    assert_eq!(status, StatusCode::OK);
    let parsed: ModelInfo = serde_json::from_slice(&first).unwrap();
    assert_eq!(parsed.memory.grid_bytes, 32 * 32 * 32 * 16 * 4);
    assert_eq!(
        parsed.memory.total_bytes,
        parsed.memory.grid_bytes + parsed.memory.network_bytes
    );
    assert_eq!(parsed.temporal_span, None);
    assert!(parsed.tf_presets.len() >= 2);
    assert_eq!(info(&app).await.1, first);
}

#[tokio::test]
async fn temporal_info_exposes_span() {
    let (_, body) = info(&temporal_app()).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["temporal_span"], json!([0, 10]));
}

#[tokio::test]
async fn render_returns_deterministic_png() {
    let app = density_app();
    let (status, a, ms) = render(&app, request(24, 16)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(&a[..8], b"\x89PNG\r\n\x1a\n");
    assert!(ms.unwrap().parse::<f64>().unwrap() >= 0.0);
    let img = fvsrn::imageio::decode_png(&a).unwrap();
    assert_eq!((img.width(), img.height()), (24, 16));
    assert_eq!(render(&app, request(24, 16)).await.1, a);
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let app = density_app();
    assert_eq!(
        render(&app, request(0, 8)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let mut unknown = request(8, 8);
    unknown["zoom"] = json!(2);
    assert_eq!(
        render(&app, unknown).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let mut bad_step = request(8, 8);
    bad_step["stepsize_voxels"] = json!(0.0);
    assert_eq!(
        render(&app, bad_step).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let req = Request::post("/render")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn tf_on_color_model_conflicts() {
    let app = color_app();
    let mut req = request(8, 8);
    assert_eq!(render(&app, req.clone()).await.0, StatusCode::OK);
    req["tf"] = json!([{ "x": 0.0, "rgb": [0, 0, 0], "sigma": 0 }, { "x": 1.0, "rgb": [1, 1, 1], "sigma": 5 }]);
    assert_eq!(render(&app, req).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn time_must_lie_in_span() {
    let app = temporal_app();
    let mut req = request(8, 8);
    req["t"] = json!(5.0);
    assert_eq!(render(&app, req.clone()).await.0, StatusCode::OK);
    req["t"] = json!(11.0);
    assert_eq!(
        render(&app, req.clone()).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    req.as_object_mut().unwrap().remove("t");
    assert_eq!(render(&app, req).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn tf_changes_the_frame() {
    let app = density_app();
    let mut dense = request(16, 16);
    dense["tf"] = json!([{ "x": 0.0, "rgb": [1, 0, 0], "sigma": 200 }, { "x": 1.0, "rgb": [1, 0, 0], "sigma": 200 }]);
    let mut empty = request(16, 16);
    empty["tf"] = json!([{ "x": 0.0, "rgb": [0, 0, 1], "sigma": 0 }, { "x": 1.0, "rgb": [0, 0, 1], "sigma": 0 }]);
    let (sa, a, _) = render(&app, dense).await;
    let (sb, b, _) = render(&app, empty).await;
    assert_eq!((sa, sb), (StatusCode::OK, StatusCode::OK));
    assert_ne!(a, b);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_renders_match_serial() {
    let app = density_app();
    let bodies: Vec<Value> = (0..4)
        .map(|i| {
            let mut r = request(12, 12);
            r["camera"]["eye"] = json!([0.5 + i as f32 * 0.3, 0.5, 2.5]);
            r
        })
        .collect();
    let mut serial = Vec::new();
    for b in &bodies {
        serial.push(render(&app, b.clone()).await.1);
    }
    let handles: Vec<_> = bodies
        .iter()
        .map(|b| {
            let (app, b) = (app.clone(), b.clone());
            tokio::spawn(async move { render(&app, b).await.1 })
        })
        .collect();
    for (h, expected) in handles.into_iter().zip(&serial) {
        assert_eq!(&h.await.unwrap(), expected);
    }
}
