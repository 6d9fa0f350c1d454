//! JSON REST API over the middleware.
//!
//! Every response body is an envelope:
//! `{"status":"ok","payload":...}` or
//! `{"status":"error","error":{"code":...,"message":...}}`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use fewsim_core::StudyAreaDataset;
use fewsim_middleware::query::{parse_resource, IndexMode};
use fewsim_middleware::{
    BranchQuery, CaseConfig, ErrorClass, JobRecord, Middleware, MiddlewareError, Resolution, VariableAdjustment,
};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

/// Method and path template of every route, in registration order.
pub const ENDPOINTS: &[(&str, &str)] = &[
    ("GET", "/api/branches"),
    ("GET", "/api/climate-files"),
    ("GET", "/api/cases"),
    ("POST", "/api/cases"),
    ("GET", "/api/cases/{name}"),
    ("PUT", "/api/cases/{name}"),
    ("DELETE", "/api/cases/{name}"),
    ("GET", "/api/cases/{name}/status"),
    ("GET", "/api/scenarios/{name}/timeseries"),
    ("GET", "/api/scenarios/{name}/composition"),
    ("GET", "/api/compare"),
    ("GET", "/api/compare/timeline"),
    ("GET", "/api/indices"),
];

#[derive(Clone)]
pub struct AppState {
    pub middleware: Arc<Middleware>,
    pub dataset: Arc<StudyAreaDataset>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Envelope<T> {
    Ok { payload: T },
    Error { error: ErrorBody },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<MiddlewareError> for ApiError {
    fn from(e: MiddlewareError) -> Self {
        let status = match e.class() {
            ErrorClass::Invalid => StatusCode::BAD_REQUEST,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body: Envelope<()> = Envelope::Error { error: self.body };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<Envelope<T>>, ApiError>;

fn ok<T>(payload: T) -> ApiResult<T> {
    Ok(Json(Envelope::Ok { payload }))
}

/// Runs store-touching middleware calls off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, MiddlewareError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn split_list(s: Option<&str>) -> Vec<String> {
    s.unwrap_or_default()
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn required<'a>(v: &'a Option<String>, name: &str) -> Result<&'a str, ApiError> {
    v.as_deref()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter `{name}`")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub job: JobRecord,
    pub status_url: String,
}

fn accepted(job: JobRecord) -> Response {
    let url = format!("/api/cases/{}/status", job.case_name);
    let body = Envelope::Ok {
        payload: Accepted {
            job,
            status_url: url.clone(),
        },
    };
    (StatusCode::ACCEPTED, [(header::LOCATION, url)], Json(body)).into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClimateFileInfo {
    pub name: String,
    pub start_year: i32,
    pub end_year: i32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaseSummary {
    pub config: CaseConfig,
    pub job: JobRecord,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub adjustments: Vec<VariableAdjustment>,
    #[serde(default)]
    pub climate_file: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct TimeseriesParams {
    case: Option<String>,
    branch: Option<String>,
    from: Option<i32>,
    to: Option<i32>,
    resource: Option<String>,
    resolution: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct CompositionParams {
    case: Option<String>,
    branch: Option<String>,
    year: Option<i32>,
    resource: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct CompareParams {
    case: Option<String>,
    base: Option<String>,
    scenarios: Option<String>,
    branch: Option<String>,
    variable: Option<String>,
    year: Option<i32>,
}

#[derive(Debug, Deserialize)]
pub struct IndicesParams {
    case: Option<String>,
    scenarios: Option<String>,
    year: Option<i32>,
    #[serde(rename = "as")]
    mode: Option<String>,
}

async fn branches(State(s): State<AppState>) -> ApiResult<fewsim_core::BranchTree> {
    ok(s.dataset.tree.clone())
}

async fn climate_files(State(s): State<AppState>) -> ApiResult<Vec<ClimateFileInfo>> {
    let h = s.dataset.horizon;
    ok(s.dataset
        .climate_names()
        .into_iter()
        .map(|name| ClimateFileInfo {
            name: name.to_string(),
            start_year: h.start_year,
            end_year: h.end_year,
        })
        .collect())
}

async fn list_cases(State(s): State<AppState>) -> ApiResult<Vec<CaseSummary>> {
    let mw = s.middleware.clone();
    let cases = blocking(move || Ok(mw.cases())).await?;
    ok(cases
        .into_iter()
        .map(|m| CaseSummary {
            config: m.config,
            job: m.job,
        })
        .collect())
}

async fn create_case(
    State(s): State<AppState>,
    body: Result<Json<CaseConfig>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(config) = body?;
    let mw = s.middleware.clone();
    let job = blocking(move || mw.submit_case(config)).await?;
    Ok(accepted(job))
}

async fn get_case(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult<fewsim_middleware::CaseManifest> {
    ok(s.middleware.case(&name)?)
}

async fn edit_case(
    State(s): State<AppState>,
    Path(name): Path<String>,
    body: Result<Json<EditRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let mw = s.middleware.clone();
    let job = blocking(move || mw.edit_case(&name, req.adjustments, req.climate_file)).await?;
    Ok(accepted(job))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Deleted {
    pub deleted: String,
}

async fn delete_case(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult<Deleted> {
    let mw = s.middleware.clone();
    let n = name.clone();
    blocking(move || mw.delete_case(&n)).await?;
    ok(Deleted { deleted: name })
}

async fn case_status(State(s): State<AppState>, Path(name): Path<String>) -> ApiResult<JobRecord> {
    ok(s.middleware.status(&name)?)
}

async fn timeseries(
    State(s): State<AppState>,
    Path(scenario): Path<String>,
    q: Result<Query<TimeseriesParams>, QueryRejection>,
) -> ApiResult<fewsim_middleware::query::BranchView> {
    let Query(p) = q?;
    let query = BranchQuery {
        branch: required(&p.branch, "branch")?.to_string(),
        from: p.from,
        to: p.to,
        resource: p.resource.as_deref().map(parse_resource).transpose()?,
        resolution: p.resolution.as_deref().map(str::parse::<Resolution>).transpose()?.unwrap_or_default(),
    };
    let mw = s.middleware.clone();
    ok(blocking(move || mw.branch_view(p.case.as_deref(), &scenario, &query)).await?)
}

async fn composition(
    State(s): State<AppState>,
    Path(scenario): Path<String>,
    q: Result<Query<CompositionParams>, QueryRejection>,
) -> ApiResult<fewsim_middleware::query::CompositionView> {
    let Query(p) = q?;
    let branch = required(&p.branch, "branch")?.to_string();
    let resource = p.resource.as_deref().map(parse_resource).transpose()?;
    let mw = s.middleware.clone();
    ok(blocking(move || mw.composition_view(p.case.as_deref(), &scenario, &branch, p.year, resource)).await?)
}

async fn compare(
    State(s): State<AppState>,
    q: Result<Query<CompareParams>, QueryRejection>,
) -> ApiResult<fewsim_middleware::query::CompareView> {
    let Query(p) = q?;
    let base = required(&p.base, "base")?.to_string();
    let branch = required(&p.branch, "branch")?.to_string();
    let scenarios = split_list(p.scenarios.as_deref());
    let mw = s.middleware.clone();
    ok(blocking(move || {
        mw.compare(p.case.as_deref(), &base, &scenarios, &branch, p.variable.as_deref(), p.year)
    })
    .await?)
}

async fn compare_timeline(
    State(s): State<AppState>,
    q: Result<Query<CompareParams>, QueryRejection>,
) -> ApiResult<fewsim_middleware::query::TimelineView> {
    let Query(p) = q?;
    let base = required(&p.base, "base")?.to_string();
    let branch = required(&p.branch, "branch")?.to_string();
    let scenarios = split_list(p.scenarios.as_deref());
    let mw = s.middleware.clone();
    ok(blocking(move || {
        mw.compare_timeline(p.case.as_deref(), &base, &scenarios, &branch, p.variable.as_deref())
    })
    .await?)
}

async fn indices(
    State(s): State<AppState>,
    q: Result<Query<IndicesParams>, QueryRejection>,
) -> ApiResult<fewsim_middleware::query::IndicesView> {
    let Query(p) = q?;
    let mode = match p.mode.as_deref() {
        None | Some("values") => IndexMode::Values,
        Some("deltas") => IndexMode::Deltas,
        Some(other) => {
            return Err(ApiError::bad_request(format!(
                "`as` must be `values` or `deltas`, got `{other}`"
            )))
        }
    };
    let scenarios = split_list(p.scenarios.as_deref());
    let mw = s.middleware.clone();
    ok(blocking(move || mw.indices(p.case.as_deref(), &scenarios, p.year, mode)).await?)
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

/// Builds the router. With `static_dir`, the web client bundle is served
/// from `/`.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/branches", get(branches))
        .route("/api/climate-files", get(climate_files))
        .route("/api/cases", get(list_cases).post(create_case))
        .route("/api/cases/{name}", get(get_case).put(edit_case).delete(delete_case))
        .route("/api/cases/{name}/status", get(case_status))
        .route("/api/scenarios/{name}/timeseries", get(timeseries))
        .route("/api/scenarios/{name}/composition", get(composition))
        .route("/api/compare", get(compare))
        .route("/api/compare/timeline", get(compare_timeline))
        .route("/api/indices", get(indices))
        .route("/api", get(api_not_found))
        .route("/api/{*rest}", axum::routing::any(api_not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
