//! JSON endpoints.

use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use nonwoven::explore::{self, Candidate, Evaluated, ExploreRequest, ObjectiveSpec, ValidationRecord, Verdict};
use nonwoven::params::{Param, ProcessParams, SampleWindow};
use nonwoven::surrogates::TrainedSurrogate;
use nonwoven::{Error, ErrorKind};

use crate::AppState;

type Shared = Arc<AppState>;

pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": kind, "message": message.into() }),
        }
    }

    fn violations(errors: Vec<Error>) -> Self {
        let list: Vec<serde_json::Value> = errors
            .iter()
            .map(|e| match e {
                Error::OutOfRange { name, value, min, max } => {
                    json!({ "field": name, "value": value, "min": min, "max": max, "message": e.to_string() })
                }
                other => json!({ "message": other.to_string() }),
            })
            .collect();
        let message = errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": "validation", "message": message, "violations": list }),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::IllegalTransition { .. } => StatusCode::CONFLICT,
            _ => match e.kind() {
                ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
                ErrorKind::Runtime | ErrorKind::Io => StatusCode::INTERNAL_SERVER_ERROR,
            },
        };
        if let Error::OutOfRange { .. } = e {
            return ApiError::violations(vec![e]);
        }
        let kind = match status {
            StatusCode::NOT_FOUND => "not_found",
            StatusCode::CONFLICT => "illegal_transition",
            StatusCode::UNPROCESSABLE_ENTITY => "validation",
            _ => "internal",
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn model(s: &AppState) -> Result<&TrainedSurrogate, ApiError> {
    s.model
        .as_deref()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no_model", "no surrogate model is loaded"))
}

/// Rejects out-of-range settings unless extrapolation was requested;
/// returns whether the point lies outside the ranges.
fn check_range(s: &AppState, p: &ProcessParams, extrapolate: bool) -> Result<bool, ApiError> {
    p.validate_physical()?;
    let v = s.ranges.violations(p);
    if v.is_empty() {
        Ok(false)
    } else if extrapolate {
        Ok(true)
    } else {
        Err(ApiError::violations(v))
    }
}

fn objective_or(s: &AppState, o: Option<ObjectiveSpec>) -> Result<ObjectiveSpec, ApiError> {
    let o = o.unwrap_or(s.objective);
    o.validate()?;
    Ok(o)
}

#[derive(Debug, Deserialize)]
pub struct PredictRequest {
    #[serde(flatten)]
    pub params: ProcessParams,
    #[serde(default)]
    pub extrapolate: bool,
    #[serde(default)]
    pub objective: Option<ObjectiveSpec>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Prediction {
    pub cv: [f64; 7],
    pub objective: f64,
    pub extrapolated: bool,
}

async fn predict(State(s): State<Shared>, Json(req): Json<PredictRequest>) -> ApiResult<Prediction> {
    let m = model(&s)?;
    let extrapolated = check_range(&s, &req.params, req.extrapolate)?;
    let obj = objective_or(&s, req.objective)?;
    let cv = m.predict(&req.params)?;
    Ok(Json(Prediction {
        cv,
        objective: obj.value(&cv),
        extrapolated,
    }))
}

#[derive(Debug, Deserialize)]
pub struct BatchRequest {
    pub points: Vec<ProcessParams>,
    #[serde(default)]
    pub extrapolate: bool,
    #[serde(default)]
    pub objective: Option<ObjectiveSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchResponse {
    pub results: Vec<Prediction>,
}

async fn predict_batch(State(s): State<Shared>, Json(req): Json<BatchRequest>) -> ApiResult<BatchResponse> {
    let m = model(&s)?;
    let obj = objective_or(&s, req.objective)?;
    let mut flags = Vec::with_capacity(req.points.len());
    for p in &req.points {
        flags.push(check_range(&s, p, req.extrapolate)?);
    }
    let cvs = explore::Surrogate::predict_many(m, &req.points)?;
    Ok(Json(BatchResponse {
        results: cvs
            .into_iter()
            .zip(flags)
            .map(|(cv, extrapolated)| Prediction {
                cv,
                objective: obj.value(&cv),
                extrapolated,
            })
            .collect(),
    }))
}

async fn explore_endpoint(State(s): State<Shared>, Json(req): Json<ExploreRequest>) -> ApiResult<explore::ExploreResult> {
    let m = model(&s)?;
    Ok(Json(explore::explore(m, &s.ranges, &req)?))
}

#[derive(Debug, Deserialize)]
pub struct SensitivityQuery {
    pub sigma1_mm: f64,
    pub sigma2_mm: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub v: f64,
    pub n_per_m: f64,
    /// Index 0..5 or wire name.
    pub parameter: String,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub extrapolate: bool,
}

fn default_samples() -> usize {
    21
}

async fn sensitivity(State(s): State<Shared>, Query(q): Query<SensitivityQuery>) -> ApiResult<explore::Sensitivity> {
    let m = model(&s)?;
    let p = ProcessParams::unchecked(q.sigma1_mm, q.sigma2_mm, q.a, q.v, q.n_per_m);
    check_range(&s, &p, q.extrapolate)?;
    let index = match q.parameter.parse::<usize>() {
        Ok(i) => i,
        Err(_) => Param::ALL
            .iter()
            .find(|p| p.name() == q.parameter)
            .map(|p| p.index())
            .ok_or_else(|| ApiError::from(Error::InvalidArgument(format!("unknown parameter {:?}", q.parameter))))?,
    };
    Ok(Json(explore::sensitivity(m, &s.ranges, &p, index, q.samples, &s.objective)?))
}

#[derive(Debug, Deserialize)]
pub struct ShortlistRequest {
    pub n: usize,
    /// Results to rank; alternatively `explore` runs a search first.
    #[serde(default)]
    pub results: Option<Vec<Evaluated>>,
    #[serde(default)]
    pub explore: Option<ExploreRequest>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShortlistResponse {
    pub candidates: Vec<Candidate>,
    /// Fewer distinct settings than requested.
    pub short: bool,
}

async fn create_candidates(State(s): State<Shared>, Json(req): Json<ShortlistRequest>) -> ApiResult<ShortlistResponse> {
    let results = match (req.results, req.explore) {
        (Some(r), None) => r,
        (None, Some(e)) => explore::explore(model(&s)?, &s.ranges, &e)?.results,
        _ => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "validation",
                "give exactly one of `results` or `explore`",
            ))
        }
    };
    let list = explore::shortlist(&results, req.n)?;
    let candidates = s.store.lock().unwrap().propose(&list.items)?;
    Ok(Json(ShortlistResponse {
        candidates,
        short: list.short,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidateList {
    pub candidates: Vec<Candidate>,
    pub records: Vec<ValidationRecord>,
}

async fn list_candidates(State(s): State<Shared>) -> ApiResult<CandidateList> {
    let st = s.store.lock().unwrap();
    Ok(Json(CandidateList {
        candidates: st.candidates(),
        records: st.state().records.clone(),
    }))
}

#[derive(Debug, Default, Deserialize)]
pub struct SimulateRequest {
    /// `"<machine>x<cross>"` in mm.
    #[serde(default)]
    pub window: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

async fn simulate(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    body: Option<Json<SimulateRequest>>,
) -> Result<(StatusCode, Json<crate::JobStatus>), ApiError> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let window = match &req.window {
        Some(w) => SampleWindow::parse(w)?,
        None => s.window,
    };
    let status = s.jobs.submit(&s.store, id, window, req.seed)?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn job(State(s): State<Shared>, UrlPath(id): UrlPath<u64>) -> ApiResult<crate::JobStatus> {
    Ok(Json(s.jobs.status(id)?))
}

#[derive(Debug, Deserialize)]
pub struct ValidateRequest {
    pub verdict: Verdict,
    #[serde(default)]
    pub reason: String,
}

async fn validate(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    Json(req): Json<ValidateRequest>,
) -> ApiResult<ValidationRecord> {
    Ok(Json(s.store.lock().unwrap().record_validation(id, req.verdict, &req.reason)?))
}

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({
        "model": s.model.as_ref().map(|m| m.family().to_string()),
        "ranges": s.ranges,
        "objective": s.objective,
    }))
}

pub fn router(state: Shared, static_dir: Option<&Path>) -> Router {
    let images = ServeDir::new(&state.image_dir);
    let api = Router::new()
        .route("/health", get(health))
        .route("/predict", post(predict))
        .route("/predict/batch", post(predict_batch))
        .route("/explore", post(explore_endpoint))
        .route("/sensitivity", get(sensitivity))
        .route("/candidates", get(list_candidates).post(create_candidates))
        .route("/candidates/{id}/simulate", post(simulate))
        .route("/candidates/{id}/validate", post(validate))
        .route("/jobs/{id}", get(job))
        .nest_service("/images", images)
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
