//! Local HTTP service: render a head bundle at a requested pose.
//!
//! Poses travel as `{yaw, pitch, roll}` in degrees and `{tx, ty, tz}` in mm,
//! composed intrinsically Z-Y-X (`R = Rz(roll) · Ry(yaw) · Rx(pitch)`), and
//! are applied as a delta about the head origin of the source photo.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use headforge::config;
use headforge::manipulate::{fill_holes, manipulate_pose, Manipulation};
use headforge::{HeadAssets, Pose, PoseTarget};

use crate::cli::ServeArgs;
use crate::commands::{CliError, CliResult};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_HOST: &str = "127.0.0.1";

/// Pose request body; omitted fields are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseRequest {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    /// Fill vacated pixels before encoding.
    pub fill: bool,
}

impl PoseRequest {
    pub fn parse(bytes: &[u8]) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| format!("malformed pose JSON: {e}"))?;
        if !value.is_object() {
            return Err("pose JSON must be an object".into());
        }
        let req: Self = serde_json::from_value(value).map_err(|e| format!("malformed pose JSON: {e}"))?;
        let values = [req.yaw, req.pitch, req.roll, req.tx, req.ty, req.tz];
        if !values.iter().all(|v| v.is_finite()) {
            return Err("pose values must be finite".into());
        }
        Ok(req)
    }

    pub fn pose(&self) -> Pose {
        Pose::from_euler_deg(self.yaw, self.pitch, self.roll, Vector3::new(self.tx, self.ty, self.tz))
    }

    pub fn from_pose(p: &Pose) -> Self {
        let (yaw, pitch, roll) = p.to_euler_deg();
        let t = p.translation;
        Self { yaw, pitch, roll, tx: t.x, ty: t.y, tz: t.z, fill: false }
    }
}

/// Resolved service settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub assets: Option<PathBuf>,
    pub ui: Option<PathBuf>,
    pub host: String,
    pub port: u16,
}

impl ServiceConfig {
    /// Flags win over `PORT`, which wins over the config file.
    pub fn resolve(args: &ServeArgs, config_path: Option<PathBuf>, env_port: Option<String>) -> CliResult<Self> {
        let mut c = Self { assets: None, ui: None, host: DEFAULT_HOST.into(), port: DEFAULT_PORT };
        if let Some(path) = config_path {
            for e in config::load(&path)? {
                match e.key.as_str() {
                    "assets" => c.assets = Some(e.value.clone().into()),
                    "ui" => c.ui = Some(e.value.clone().into()),
                    "host" => c.host = e.value.clone(),
                    "port" => c.port = parse_port(&e.value)?,
                    _ => return Err(e.unknown().into()),
                }
            }
        }
        if let Some(p) = env_port {
            c.port = parse_port(&p)?;
        }
        if let Some(a) = &args.assets {
            c.assets = Some(a.clone());
        }
        if let Some(u) = &args.ui {
            c.ui = Some(u.clone());
        }
        if let Some(h) = &args.host {
            c.host = h.clone();
        }
        if let Some(p) = args.port {
            c.port = p;
        }
        Ok(c)
    }
}

fn parse_port(s: &str) -> CliResult<u16> {
    s.trim().parse().map_err(|_| CliError::new("config", format!("invalid port {s:?}")))
}

/// Read-only state shared by all requests.
#[derive(Clone)]
pub struct AppState {
    assets: Result<Arc<HeadAssets>, String>,
}

impl AppState {
    pub fn new(assets: HeadAssets) -> Self {
        Self { assets: Ok(Arc::new(assets)) }
    }

    /// Loads the bundle; a failure is kept and served as 404.
    pub fn load(path: Option<&std::path::Path>) -> Self {
        let assets = match path {
            None => Err("no assets bundle configured".to_string()),
            Some(p) => HeadAssets::load(p).map(Arc::new).map_err(|e| format!("assets bundle {}: {e}", p.display())),
        };
        Self { assets }
    }
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": kind, "message": message.into() }))).into_response()
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

type Rejection = Box<Response>;

fn assets(state: &AppState) -> Result<Arc<HeadAssets>, Rejection> {
    state.assets.clone().map_err(|m| Box::new(error(StatusCode::NOT_FOUND, "not_found", m)))
}

pub fn router(state: AppState, ui: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/head", get(head))
        .route("/render", post(render))
        .route("/mask", get(mask))
        .with_state(state);
    if let Some(dir) = ui {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app
}

async fn head(State(state): State<AppState>) -> Response {
    let a = match assets(&state) {
        Ok(a) => a,
        Err(r) => return *r,
    };
    let c = &a.camera;
    Json(serde_json::json!({
        "width": c.width,
        "height": c.height,
        "focal": c.focal,
        "cx": c.cx,
        "cy": c.cy,
        "pose": PoseRequest::from_pose(&a.pose),
        "quaternion": a.pose.quaternion(),
        "gamma": a.lighting.gamma,
        "face_vertices": a.face.vertices.len(),
        "hair_vertices": a.hair.vertices.len(),
        "head_pixels": a.masks.s.count(),
        "face_pixels": a.masks.s_f.count(),
        "hair_pixels": a.masks.h.count(),
    }))
    .into_response()
}

async fn manipulate(state: &AppState, req: PoseRequest) -> Result<Manipulation, Rejection> {
    let a = assets(state)?;
    let result = tokio::task::spawn_blocking(move || manipulate_pose(&a, PoseTarget::Delta(req.pose()))).await;
    match result {
        Ok(Ok(m)) => Ok(m),
        Ok(Err(e)) => Err(Box::new(error(StatusCode::UNPROCESSABLE_ENTITY, "manipulation", e.to_string()))),
        Err(e) => Err(Box::new(error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))),
    }
}

async fn render(State(state): State<AppState>, body: Bytes) -> Response {
    let req = match PoseRequest::parse(&body) {
        Ok(r) => r,
        Err(m) => return error(StatusCode::BAD_REQUEST, "bad_request", m),
    };
    let m = match manipulate(&state, req).await {
        Ok(m) => m,
        Err(r) => return *r,
    };
    let image = if req.fill && !m.holes.is_empty() {
        match fill_holes(&m.image, &m.holes) {
            Ok(i) => i,
            Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "fill", e.to_string()),
        }
    } else {
        m.image
    };
    match image.encode_png() {
        Ok(b) => png(b),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn mask(State(state): State<AppState>, Query(query): Query<HashMap<String, String>>) -> Response {
    let req = match query.get("pose") {
        None => PoseRequest::default(),
        Some(text) => match PoseRequest::parse(text.as_bytes()) {
            Ok(r) => r,
            Err(m) => return error(StatusCode::BAD_REQUEST, "bad_request", m),
        },
    };
    let m = match manipulate(&state, req).await {
        Ok(m) => m,
        Err(r) => return *r,
    };
    match m.holes.encode_png() {
        Ok(b) => png(b),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

pub fn serve_cmd(args: ServeArgs) -> CliResult<()> {
    let config_path = std::env::var_os("HEADFORGE_CONFIG").map(PathBuf::from);
    let config = ServiceConfig::resolve(&args, config_path, std::env::var("PORT").ok())?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let state = AppState::load(config.assets.as_deref());
        if let Err(m) = &state.assets {
            eprintln!("{}", CliError::new("assets", m.clone()).to_line());
        }
        let addr: SocketAddr = format!("{}:{}", config.host, config.port)
            .parse()
            .map_err(|_| CliError::new("config", format!("invalid address {}:{}", config.host, config.port)))?;
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state, config.ui))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
