//! HTTP/JSON service over the RUL pipeline.
//!
//! One session at a time: a dataset upload replaces the dataset and drops
//! the trained model; training replaces the model. Readers clone an `Arc`
//! to the current snapshot, so a request that is already running finishes
//! against the model it started with while a new one is swapped in.

mod error;
mod store;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

use swphm_core::ingest::{parse_backlog_json, parse_releases_json};
use swphm_core::model::{BacklogItem, Dataset};
use swphm_core::pipeline::{
    adjust, best_plan_file, evaluate_plan_file, predict, rul_for_plan_file, summarize, train,
    AdjustRequest, AdjustResult, DatasetSummary, PlanFile, Prediction, TrainOptions, TrainedModel,
};
use swphm_core::plan::PlanResult;
use swphm_core::prognosis::{EnvAdjustment, RtThreshold, RulEstimate};
use swphm_core::weighting::{Estimators, ImpactTable};

pub use error::ApiError;
pub use store::Store;

/// Threshold used when a request does not name one, in seconds.
pub const DEFAULT_THRESHOLD_S: f64 = 10.0;

#[derive(Debug, Clone, Default)]
pub struct Session {
    pub dataset: Option<Arc<Dataset>>,
    pub backlog: Arc<BTreeMap<String, BacklogItem>>,
    pub model: Option<Arc<TrainedModel>>,
}

impl Session {
    fn with_dataset(dataset: Dataset, model: Option<TrainedModel>) -> Self {
        let backlog = dataset
            .items()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Session {
            dataset: Some(Arc::new(dataset)),
            backlog: Arc::new(backlog),
            model: model.map(Arc::new),
        }
    }

    fn model(&self) -> Result<&Arc<TrainedModel>, ApiError> {
        self.model.as_ref().ok_or(ApiError::NotTrained)
    }
}

pub struct AppState {
    snapshot: RwLock<Arc<Session>>,
    writes: tokio::sync::Mutex<()>,
    store: Option<Store>,
    /// Options used by `/train` for anything the request leaves out.
    train_defaults: TrainOptions,
}

impl AppState {
    /// In-memory state with nothing loaded.
    pub fn new(train_defaults: TrainOptions) -> Self {
        AppState {
            snapshot: RwLock::new(Arc::new(Session::default())),
            writes: tokio::sync::Mutex::new(()),
            store: None,
            train_defaults,
        }
    }

    /// State persisted under `dir`, restoring whatever a previous run left
    /// there.
    pub fn open(dir: impl Into<PathBuf>, train_defaults: TrainOptions) -> swphm_core::Result<Self> {
        let store = Store::open(dir.into())?;
        let (dataset, model) = store.load()?;
        let session = match dataset {
            Some(ds) => Session::with_dataset(ds, model),
            None => Session::default(),
        };
        Ok(AppState {
            snapshot: RwLock::new(Arc::new(session)),
            writes: tokio::sync::Mutex::new(()),
            store: Some(store),
            train_defaults,
        })
    }

    pub fn snapshot(&self) -> Arc<Session> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn swap(&self, session: Session) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(session);
    }
}

/// Router with CORS for `cors_origin`, or for any origin when `None`.
pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Result<Router, ApiError> {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).map_err(|_| {
            ApiError::bad_request("INVALID_VALUE", format!("bad CORS origin `{o}`"))
        })?),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/datasets", post(upload_dataset))
        .route("/train", post(train_model))
        .route("/model", get(get_model))
        .route("/predict", post(predict_rt))
        .route("/rul", post(rul))
        .route("/plan/evaluate", post(plan_evaluate))
        .route("/plan/best", post(plan_best))
        .route("/adjust", post(adjust_rt))
        .layer(cors)
        .with_state(state))
}

/// Serves until ctrl-c.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    cors_origin: Option<&str>,
) -> std::io::Result<()> {
    let app = router(state, cors_origin).map_err(std::io::Error::other)?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| swphm_core::Error::from(e).into())
}

fn threshold(seconds: Option<f64>) -> Result<RtThreshold, ApiError> {
    Ok(RtThreshold::from_seconds(
        seconds.unwrap_or(DEFAULT_THRESHOLD_S),
    )?)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

#[derive(Deserialize)]
struct DatasetUpload {
    backlog: serde_json::Value,
    releases: serde_json::Value,
}

async fn upload_dataset(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<DatasetSummary>, ApiError> {
    let upload: DatasetUpload = parse(&body)?;
    let items = parse_backlog_json(&upload.backlog.to_string())?;
    let releases = parse_releases_json(&upload.releases.to_string())?;
    let dataset = Dataset::new(items, releases)?;
    let summary = summarize(&dataset);

    let _guard = state.writes.lock().await;
    if let Some(store) = &state.store {
        store.save_dataset(&dataset)?;
        store.clear_model()?;
    }
    state.swap(Session::with_dataset(dataset, None));
    Ok(Json(summary))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    seed: Option<u64>,
    os_factor: Option<f64>,
    clock_coefficient: Option<f64>,
    train_fraction: Option<f64>,
    k_max: Option<usize>,
    cluster: Option<bool>,
    impact_table: Option<ImpactTable>,
    estimators: Option<Estimators>,
}

impl TrainRequest {
    fn options(self, defaults: &TrainOptions) -> TrainOptions {
        TrainOptions {
            impact_table: self
                .impact_table
                .unwrap_or_else(|| defaults.impact_table.clone()),
            adjustment: EnvAdjustment {
                clock_coefficient: self
                    .clock_coefficient
                    .unwrap_or(defaults.adjustment.clock_coefficient),
                os_factor_32_over_64: self
                    .os_factor
                    .unwrap_or(defaults.adjustment.os_factor_32_over_64),
            },
            seed: self.seed.unwrap_or(defaults.seed),
            train_fraction: self.train_fraction.unwrap_or(defaults.train_fraction),
            k_max: self.k_max.unwrap_or(defaults.k_max),
            cluster: self.cluster.unwrap_or(defaults.cluster),
        }
    }
}

async fn train_model(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<TrainedModel>, ApiError> {
    let req: TrainRequest = if body.iter().all(u8::is_ascii_whitespace) {
        TrainRequest::default()
    } else {
        parse(&body)?
    };
    let estimators = req.estimators.clone().unwrap_or_default();
    let opts = req.options(&state.train_defaults);

    let _guard = state.writes.lock().await;
    let session = state.snapshot();
    let dataset = session.dataset.clone().ok_or(ApiError::NoDataset)?;
    let model = blocking(move || Ok(train(&dataset, estimators, &opts)?)).await?;
    if let Some(store) = &state.store {
        store.save_model(&model)?;
    }
    state.swap(Session {
        model: Some(Arc::new(model.clone())),
        ..(*session).clone()
    });
    Ok(Json(model))
}

async fn get_model(State(state): State<Arc<AppState>>) -> Result<Json<TrainedModel>, ApiError> {
    let session = state.snapshot();
    Ok(Json(session.model()?.as_ref().clone()))
}

#[derive(Deserialize)]
struct PredictRequest {
    cpv: f64,
}

async fn predict_rt(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<Prediction>, ApiError> {
    let req: PredictRequest = parse(&body)?;
    let session = state.snapshot();
    Ok(Json(predict(session.model()?, req.cpv)?))
}

#[derive(Deserialize)]
struct PlanRequest {
    #[serde(alias = "spec")]
    plan: PlanFile,
    #[serde(default)]
    allocation: Option<BTreeMap<String, usize>>,
    #[serde(default)]
    threshold_s: Option<f64>,
}

impl PlanRequest {
    fn into_parts(self) -> Result<(PlanFile, RtThreshold), ApiError> {
        let mut plan = self.plan;
        if self.allocation.is_some() {
            plan.allocation = self.allocation;
        }
        Ok((plan, threshold(self.threshold_s)?))
    }
}

async fn rul(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<RulEstimate>, ApiError> {
    let (plan, thr) = parse::<PlanRequest>(&body)?.into_parts()?;
    let session = state.snapshot();
    let model = session.model()?;
    Ok(Json(rul_for_plan_file(
        model,
        &session.backlog,
        &plan,
        thr,
    )?))
}

async fn plan_evaluate(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<PlanResult>, ApiError> {
    let (plan, thr) = parse::<PlanRequest>(&body)?.into_parts()?;
    let session = state.snapshot();
    let model = session.model()?;
    Ok(Json(evaluate_plan_file(
        model,
        &session.backlog,
        &plan,
        thr,
    )?))
}

async fn plan_best(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<PlanResult>, ApiError> {
    let (plan, thr) = parse::<PlanRequest>(&body)?.into_parts()?;
    let session = state.snapshot();
    session.model()?;
    let result = blocking(move || {
        let model = session.model()?;
        Ok(best_plan_file(model, &session.backlog, &plan, thr)?)
    })
    .await?;
    Ok(Json(result))
}

async fn adjust_rt(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<AdjustResult>, ApiError> {
    let req: AdjustRequest = parse(&body)?;
    let session = state.snapshot();
    let defaults = session
        .model
        .as_ref()
        .map(|m| m.adjustment)
        .unwrap_or_default();
    Ok(Json(adjust(&req, &defaults)?))
}

impl Default for AppState {
    fn default() -> Self {
        AppState::new(TrainOptions::default())
    }
}
