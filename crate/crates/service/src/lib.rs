//! Session API around the expert-correction loop.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | open a session on a dataset directory |
//! | GET | `/sessions/{id}` | session state |
//! | GET | `/sessions/{id}/deviation` | base-model deviation and suggested pivots |
//! | PUT | `/sessions/{id}/pivots` | replace pivots, optimistic on `expected_revision` |
//! | POST | `/sessions/{id}/refit` | run the pipeline, body is [`RunSettings`] |
//! | GET | `/sessions/{id}/posterior` | summaries and VaR of the last refit |
//!
//! The refit response body is the same JSON document `pivotfit report` writes;
//! the new revision travels in the `x-revision` header.

mod error;
mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::NaiveDate;
use pivotfit_core::correction::{suggest_pivots, PivotPoint, PivotSet};
use pivotfit_core::eval::{
    run_experiment, run_experiment_full, ExperimentReport, PosteriorReport, RunSettings, Window,
};
use pivotfit_core::ingest::TimeSeries;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use uuid::Uuid;

pub use error::ApiError;
pub use session::{check_dataset_name, load_dataset, Session, Snapshot, Store};

pub const REVISION_HEADER: &str = "x-revision";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory whose subdirectories are datasets.
    pub data_root: PathBuf,
    pub time_budget: Duration,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
    pub snapshot: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            time_budget: Duration::from_secs(600),
            cors_origin: None,
            snapshot: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            store: Arc::new(Store::new(config.data_root.clone())),
            config: Arc::new(config),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }
}

pub fn router(state: AppState) -> Router {
    let origin = match &state.config.cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).unwrap_or(HeaderValue::from_static("null"))),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods(Any)
        .allow_headers(Any)
        .expose_headers([HeaderName::from_static(REVISION_HEADER)]);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/deviation", get(get_deviation))
        .route("/sessions/{id}/pivots", put(put_pivots))
        .route("/sessions/{id}/refit", post(refit))
        .route("/sessions/{id}/posterior", get(get_posterior))
        .layer(cors)
        .with_state(state)
}

/// Serves until Ctrl-C, then writes the snapshot if one is configured.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::new(config);
    if let Some(path) = &state.config.snapshot {
        if path.exists() {
            let snapshot: Snapshot = serde_json::from_slice(&std::fs::read(path)?)?;
            state.store.restore(snapshot).map_err(std::io::Error::other)?;
        }
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(path) = &state.config.snapshot {
        std::fs::write(path, serde_json::to_vec_pretty(&state.store.snapshot())?)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: String,
    pub target: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: Uuid,
    pub dataset: String,
    pub target: String,
    pub revision: u64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub n: usize,
    pub pivots: Option<PivotSet>,
}

fn info(session: &Session, data: &pivotfit_core::ingest::Dataset) -> SessionInfo {
    SessionInfo {
        id: session.id,
        dataset: session.dataset.clone(),
        target: session.target.clone(),
        revision: session.revision,
        start: data.dates()[0],
        end: *data.dates().last().unwrap(),
        n: data.len(),
        pivots: session.pivots.clone(),
    }
}

async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<impl IntoResponse, ApiError> {
    let target = body.target.unwrap_or_else(|| pivotfit_core::DEFAULT_TARGET.to_string());
    let store = state.store.clone();
    let (session, data) = blocking(move || store.create(&body.dataset, &target)).await?;
    Ok((StatusCode::CREATED, Json(info(&session, &data))))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
) -> Result<Json<SessionInfo>, ApiError> {
    let (session, data) = state.store.get(id)?;
    Ok(Json(info(&session, &data)))
}

#[derive(Debug, Deserialize)]
pub struct DeviationQuery {
    pub window: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub date: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeviationResponse {
    pub revision: u64,
    pub lambda: f64,
    /// Log-space `actual − predicted` of the base model on the training window.
    pub deviation: Vec<DeviationPoint>,
    pub suggested: PivotSet,
    pub pivots: Option<PivotSet>,
}

async fn get_deviation(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
    Query(query): Query<DeviationQuery>,
) -> Result<Json<DeviationResponse>, ApiError> {
    let (session, data) = state.store.get(id)?;
    let window = query.window.unwrap_or(30);
    if window == 0 {
        return Err(ApiError::BadRequest("window must be positive".into()));
    }
    let settings = RunSettings {
        fast: true,
        ..session.settings.clone().unwrap_or_default()
    };
    let options = settings.to_options()?;
    let dataset = if settings.features.is_some() {
        let root = state.store.root().to_path_buf();
        let features = options.features.clone();
        let (name, target) = (session.dataset.clone(), session.target.clone());
        Arc::new(blocking(move || load_dataset(&root, &name, &target, &features)).await?)
    } else {
        data
    };
    let outcome = blocking(move || Ok(run_experiment_full(&dataset, None, &options)?)).await?;
    let deviation: Vec<DeviationPoint> = outcome
        .series
        .iter()
        .filter(|r| r.window == Window::Train)
        .map(|r| DeviationPoint { date: r.date, value: r.deviation })
        .collect();
    let series = TimeSeries::new(
        "deviation",
        deviation.iter().map(|p| p.date).collect(),
        deviation.iter().map(|p| p.value).collect(),
    )?;
    let window = window.min(series.len().saturating_sub(1) / 2).max(1);
    Ok(Json(DeviationResponse {
        revision: session.revision,
        lambda: outcome.report.lambda,
        suggested: suggest_pivots(&series, window)?,
        deviation,
        pivots: session.pivots.clone(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutPivots {
    /// `null` clears the pivots.
    pub pivots: Option<Vec<PivotPoint>>,
    pub expected_revision: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PivotsResponse {
    pub revision: u64,
    pub pivots: Option<PivotSet>,
}

async fn put_pivots(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
    Json(body): Json<PutPivots>,
) -> Result<Json<PivotsResponse>, ApiError> {
    let (_, data) = state.store.get(id)?;
    let pivots = match body.pivots {
        None => None,
        Some(points) => {
            let set = PivotSet::validate(points).map_err(|fields| ApiError::Invalid {
                message: "pivots violate the pivot rules".into(),
                fields,
            })?;
            let outside = set.check_within(data.dates()[0], *data.dates().last().unwrap());
            if !outside.is_empty() {
                return Err(ApiError::Invalid {
                    message: "pivots fall outside the dataset".into(),
                    fields: outside,
                });
            }
            Some(set)
        }
    };
    let updated = state.store.update(id, body.expected_revision, |s| s.pivots = pivots)?;
    Ok(Json(PivotsResponse {
        revision: updated.revision,
        pivots: updated.pivots.clone(),
    }))
}

#[derive(Debug, Deserialize)]
pub struct RefitQuery {
    pub expected_revision: Option<u64>,
}

async fn refit(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
    Query(query): Query<RefitQuery>,
    body: Option<Json<RunSettings>>,
) -> Result<impl IntoResponse, ApiError> {
    let settings = body.map(|Json(s)| s).unwrap_or_default();
    let (session, _) = state.store.get(id)?;
    if let Some(expected) = query.expected_revision {
        if expected != session.revision {
            return Err(ApiError::Conflict { expected, current: session.revision });
        }
    }
    let options = settings.to_options()?;
    let root = state.store.root().to_path_buf();
    let (name, target, pivots) =
        (session.dataset.clone(), session.target.clone(), session.pivots.clone());
    let job = tokio::task::spawn_blocking(move || -> Result<ExperimentReport, ApiError> {
        let dataset = load_dataset(&root, &name, &target, &options.features)?;
        Ok(run_experiment(&dataset, pivots.as_ref(), &options)?)
    });
    let budget = state.config.time_budget;
    let report = match tokio::time::timeout(budget, job).await {
        Err(_) => return Err(ApiError::Timeout(budget.as_secs())),
        Ok(joined) => joined.map_err(|e| ApiError::Internal(e.to_string()))??,
    };
    // pivots edited while the refit ran make this report stale
    let stored = report.clone();
    let updated = state.store.update(id, session.revision, move |s| {
        s.report = Some(stored);
        s.settings = Some(settings);
    })?;
    Ok((
        [(REVISION_HEADER, updated.revision.to_string())],
        Json(report),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PosteriorResponse {
    pub revision: u64,
    pub base: PosteriorReport,
    pub corrected: Option<PosteriorReport>,
    pub value_at_risk: Vec<pivotfit_core::bayes::VarEstimate>,
}

async fn get_posterior(
    State(state): State<AppState>,
    Path(id): Path<Uuid>,
) -> Result<Json<PosteriorResponse>, ApiError> {
    let (session, _) = state.store.get(id)?;
    let report = session
        .report
        .as_ref()
        .ok_or_else(|| ApiError::NotFound("no refit has run in this session".into()))?;
    let base = report.base.posterior.clone().ok_or_else(|| {
        ApiError::NotFound("last refit skipped the Bayesian stage".into())
    })?;
    Ok(Json(PosteriorResponse {
        revision: session.revision,
        base,
        corrected: report.corrected.as_ref().and_then(|c| c.posterior.clone()),
        value_at_risk: report.value_at_risk.clone(),
    }))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}
