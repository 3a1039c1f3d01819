//! HTTP service: predict temperature for edited volume grids and keep
//! named what-if scenarios on disk.

pub mod grid_json;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use voxtherm_core::model::{predict_grid, Model};
use voxtherm_core::volume::{gaussian_kernel, DEFAULT_RADIUS, DEFAULT_SIGMA};

pub use grid_json::GridJson;
pub use store::{Scenario, ScenarioStore, ScenarioSummary, StoreError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub model_path: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub max_grid_cells: usize,
    /// `*` allows any origin.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            model_path: None,
            data_dir: PathBuf::from("data"),
            max_grid_cells: 250_000,
            cors_origin: None,
        }
    }
}

pub struct LoadedModel {
    pub id: String,
    pub model: Model,
    /// The file's top-level JSON, minus the trees.
    pub header: serde_json::Value,
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let model = Model::from_json(bytes).map_err(|e| e.to_string())?;
        let mut header: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        if let Some(obj) = header.as_object_mut() {
            obj.remove("trees");
        }
        let id = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { id, model, header })
    }
}

#[derive(Clone)]
pub struct AppState {
    pub model: Option<Arc<LoadedModel>>,
    pub store: ScenarioStore,
    pub max_grid_cells: usize,
}

impl AppState {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, String> {
        let model = match &cfg.model_path {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Some(Arc::new(LoadedModel::from_bytes(&bytes).map_err(|e| format!("{}: {e}", p.display()))?))
            }
            None => None,
        };
        let store = ScenarioStore::open(&cfg.data_dir).map_err(|e| format!("{}: {e}", cfg.data_dir.display()))?;
        Ok(Self {
            model,
            store,
            max_grid_cells: cfg.max_grid_cells,
        })
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound => ApiError(StatusCode::NOT_FOUND, "scenario not found".into()),
            StoreError::Duplicate => ApiError(StatusCode::CONFLICT, "scenario id already exists".into()),
            StoreError::Storage(m) => ApiError(StatusCode::INSUFFICIENT_STORAGE, m),
            StoreError::Corrupt(m) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, m),
        }
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("body: {e}")))
}

fn loaded(state: &AppState) -> Result<&LoadedModel, ApiError> {
    state
        .model
        .as_deref()
        .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "no model loaded".into()))
}

fn check_grid(state: &AppState, g: &GridJson, field: &str) -> Result<(), ApiError> {
    if g.cells() > state.max_grid_cells {
        return Err(ApiError(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("{field}: {} cells exceeds the limit of {}", g.cells(), state.max_grid_cells),
        ));
    }
    g.validate_volume(field).map_err(bad_request)?;
    if let Some(m) = &state.model {
        if let Some(cs) = m.model.meta.coarse_cell_size_m {
            if g.cellsize_m != cs {
                return Err(bad_request(format!(
                    "{field}.cellsize_m: model was trained on {cs} m cells, got {}",
                    g.cellsize_m
                )));
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct PredictRequest {
    grid: GridJson,
    #[serde(default)]
    base: Option<GridJson>,
    #[serde(default)]
    sigma: Option<f64>,
    #[serde(default)]
    radius: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RangeSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

fn summarize(g: &GridJson) -> Option<RangeSummary> {
    let vals: Vec<f64> = g.values.iter().copied().filter(|v| *v != g.nodata).collect();
    if vals.is_empty() {
        return None;
    }
    Some(RangeSummary {
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
    })
}

fn run_prediction(lm: &LoadedModel, g: &GridJson, sigma: f64, radius: usize) -> Result<GridJson, ApiError> {
    let kernel = gaussian_kernel(sigma, radius).map_err(|e| bad_request(format!("sigma: {e}")))?;
    let grid = g.to_grid().map_err(|e| bad_request(format!("grid: {e}")))?;
    let out = predict_grid(&lm.model, &grid, &kernel).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut j = GridJson::from_grid(&out);
    j.xllcorner = g.xllcorner;
    j.yllcorner = g.yllcorner;
    Ok(j)
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let lm = loaded(&state)?;
    let req: PredictRequest = parse_body(&body)?;
    check_grid(&state, &req.grid, "grid")?;
    if let Some(b) = &req.base {
        check_grid(&state, b, "base")?;
        if (b.ncols, b.nrows) != (req.grid.ncols, req.grid.nrows) {
            return Err(bad_request("base: dimensions differ from grid"));
        }
    }
    let sigma = req.sigma.or(lm.model.meta.blur_sigma).unwrap_or(DEFAULT_SIGMA);
    let radius = req.radius.or(lm.model.meta.blur_radius).unwrap_or(DEFAULT_RADIUS);
    let pred = run_prediction(lm, &req.grid, sigma, radius)?;
    let diff = match &req.base {
        Some(b) => {
            let base_pred = run_prediction(lm, b, sigma, radius)?;
            let values = pred
                .values
                .iter()
                .zip(&base_pred.values)
                .map(|(p, q)| if *p == pred.nodata || *q == base_pred.nodata { pred.nodata } else { p - q })
                .collect();
            Some(GridJson { values, ..pred.clone() })
        }
        None => None,
    };
    Ok(Json(json!({
        "model_id": lm.id,
        "sigma": sigma,
        "radius": radius,
        "range": summarize(&pred),
        "grid": pred,
        "diff": diff,
    }))
    .into_response())
}

async fn model_info(State(state): State<AppState>) -> Result<Response, ApiError> {
    let lm = loaded(&state)?;
    let mut info = lm.header.clone();
    if let Some(obj) = info.as_object_mut() {
        obj.insert("id".into(), json!(lm.id));
        obj.insert("type".into(), json!(lm.model.kind().to_string()));
        obj.insert("n_trees".into(), json!(lm.model.n_trees()));
    }
    Ok(Json(info).into_response())
}

#[derive(Deserialize)]
struct ScenarioRequest {
    #[serde(default)]
    id: Option<String>,
    name: String,
    base: GridJson,
    edited: GridJson,
}

fn scenario_from_request(state: &AppState, req: ScenarioRequest, id: String) -> Result<Scenario, ApiError> {
    if !store::valid_id(&id) {
        return Err(bad_request("id: 1-64 characters from [A-Za-z0-9_-]"));
    }
    check_grid(state, &req.base, "base")?;
    check_grid(state, &req.edited, "edited")?;
    if (req.base.ncols, req.base.nrows) != (req.edited.ncols, req.edited.nrows) {
        return Err(bad_request("edited: dimensions differ from base"));
    }
    Ok(Scenario {
        id,
        name: req.name,
        base: req.base,
        edited: req.edited,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Nanos, true),
        model_id: state.model.as_ref().map(|m| m.id.clone()),
    })
}

async fn create_scenario(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: ScenarioRequest = parse_body(&body)?;
    let id = req.id.clone().unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
    let s = scenario_from_request(&state, req, id)?;
    let st = state.store.clone();
    let saved = s.clone();
    tokio::task::spawn_blocking(move || st.create(&saved))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(ScenarioSummary::from(&s))).into_response())
}

async fn replace_scenario(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: ScenarioRequest = parse_body(&body)?;
    if req.id.as_deref().is_some_and(|b| b != id) {
        return Err(bad_request("id: does not match the path"));
    }
    let mut s = scenario_from_request(&state, req, id.clone())?;
    let st = state.store.clone();
    let res = tokio::task::spawn_blocking(move || {
        s.created_at = st.get(&id)?.created_at;
        st.replace(&s).map(|_| s)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(ScenarioSummary::from(&res)).into_response())
}

async fn list_scenarios(State(state): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(state.store.list()?).into_response())
}

async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    if !store::valid_id(&id) {
        return Err(StoreError::NotFound.into());
    }
    Ok(Json(state.store.get(&id)?).into_response())
}

async fn delete_scenario(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    if !store::valid_id(&id) {
        return Err(StoreError::NotFound.into());
    }
    state.store.delete(&id)?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    // ~24 bytes per JSON number, two grids per request, plus slack.
    let body_limit = state.max_grid_cells.saturating_mul(48).saturating_add(1 << 20);
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/model", get(model_info))
        .route("/predict", axum::routing::post(predict))
        .route("/scenarios", get(list_scenarios).post(create_scenario))
        .route(
            "/scenarios/:id",
            get(get_scenario).put(replace_scenario).delete(delete_scenario),
        )
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state);
    if let Some(origin) = cors_origin {
        let allow = if origin == "*" {
            AllowOrigin::any()
        } else {
            match HeaderValue::from_str(origin) {
                Ok(v) => AllowOrigin::exact(v),
                Err(_) => {
                    log::warn!("ignoring invalid CORS origin {origin:?}");
                    return app;
                }
            }
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([Method::GET, Method::POST, Method::PUT, Method::DELETE])
                .allow_headers(Any),
        );
    }
    app
}

pub async fn serve(cfg: ServiceConfig, addr: SocketAddr) -> Result<(), String> {
    let state = AppState::from_config(&cfg)?;
    match &state.model {
        Some(m) => log::info!("model {} ({}, {} trees)", m.id, m.model.kind(), m.model.n_trees()),
        None => log::warn!("no model loaded; /predict and /model will return 503"),
    }
    let app = router(state, cfg.cors_origin.as_deref());
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| format!("bind {addr}: {e}"))?;
    log::info!("listening on {addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}
