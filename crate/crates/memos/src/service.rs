//! HTTP front end over a [`Kernel`].
//!
//! Every request names its caller in the `x-memos-principal` header. Bodies
//! in both directions use the canonical JSON encoding; every response that
//! reached the kernel carries the last audit seq it produced in
//! `x-memos-audit-seq`.

// Handlers bail out with a ready `Response`.
#![allow(clippy::result_large_err)]

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use memos_core::governance::AuditAction;
use memos_core::lifecycle::LifecycleError;
use memos_core::reader::{LogFilter, PipelineGraph};
use memos_core::{canon, CubeId, PrincipalId, Timestamp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::kernel::{Kernel, KernelError, NewCube, RecallQuery, Session, UpdatePatch};
use crate::pipeline::ExecOptions;
use crate::store::Visibility;

pub const PRINCIPAL_HEADER: &str = "x-memos-principal";
pub const AUDIT_SEQ_HEADER: &str = "x-memos-audit-seq";

#[derive(Clone)]
pub struct AppState {
    pub kernel: Arc<Kernel>,
    /// Known principals; empty accepts any well-formed name.
    pub principals: Arc<BTreeSet<PrincipalId>>,
}

impl AppState {
    pub fn new(kernel: Kernel) -> Self {
        AppState { kernel: Arc::new(kernel), principals: Arc::new(BTreeSet::new()) }
    }

    pub fn from_config(kernel: Kernel, config: &ServiceConfig) -> Self {
        let mut known = config.governance.principals.clone();
        if !known.is_empty() {
            known.extend(config.governance.admins.iter().cloned());
        }
        AppState { kernel: Arc::new(kernel), principals: Arc::new(known) }
    }
}

/// Error body shared by the service and the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ErrorBody {
    pub fn of(e: &KernelError) -> Self {
        ErrorBody { error: e.code().to_string(), message: e.to_string() }
    }
}

pub fn status_of(e: &KernelError) -> StatusCode {
    match e.root() {
        KernelError::AccessDenied { .. } | KernelError::RestrictedUnpublishable(_) => StatusCode::FORBIDDEN,
        KernelError::UnknownCube(_) | KernelError::Lifecycle(LifecycleError::UnknownVersion(_)) => StatusCode::NOT_FOUND,
        KernelError::AlreadyExists(_)
        | KernelError::VersionConflict(_)
        | KernelError::Lifecycle(_)
        | KernelError::Graph(_) => StatusCode::CONFLICT,
        KernelError::Mip(_) | KernelError::Transform(_) => StatusCode::UNPROCESSABLE_ENTITY,
        KernelError::KeyMissing(_) => StatusCode::PRECONDITION_FAILED,
        KernelError::Backend(_) | KernelError::AuditBroken(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn canonical(status: StatusCode, body: Vec<u8>, seq: Option<u64>) -> Response {
    let mut r = (status, [("content-type", "application/json")], body).into_response();
    if let Some(s) = seq {
        r.headers_mut().insert(AUDIT_SEQ_HEADER, HeaderValue::from(s));
    }
    r
}

fn bad_request(msg: impl Into<String>) -> Response {
    let body = ErrorBody { error: "InvalidRequest".into(), message: msg.into() };
    canonical(StatusCode::BAD_REQUEST, canon::encode(&body), None)
}

fn unauthorized(msg: impl Into<String>) -> Response {
    let body = ErrorBody { error: "Unauthenticated".into(), message: msg.into() };
    canonical(StatusCode::UNAUTHORIZED, canon::encode(&body), None)
}

fn session(st: &AppState, headers: &HeaderMap) -> Result<Session, Response> {
    let name = headers
        .get(PRINCIPAL_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| unauthorized(format!("missing {PRINCIPAL_HEADER} header")))?;
    let p = PrincipalId::new(name).map_err(|e| unauthorized(e.to_string()))?;
    if !st.principals.is_empty() && !st.principals.contains(&p) {
        return Err(unauthorized(format!("unknown principal {p}")));
    }
    Ok(Session::new(p))
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("body: {e}")))
}

fn cube_id(s: &str) -> Result<CubeId, Response> {
    s.parse().map_err(|e: memos_core::ids::IdError| bad_request(e.to_string()))
}

/// Runs `f` off the async executor and renders its result.
async fn call<T, F>(st: AppState, s: Session, ok: StatusCode, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Kernel, &Session) -> Result<T, KernelError> + Send + 'static,
{
    let k = st.kernel.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let r = f(&k, &s);
        (r, s.last_seq())
    })
    .await;
    match joined {
        Ok((Ok(v), seq)) => canonical(ok, canon::encode(&v), seq),
        Ok((Err(e), seq)) => canonical(status_of(&e), canon::encode(&ErrorBody::of(&e)), seq),
        Err(e) => canonical(
            StatusCode::INTERNAL_SERVER_ERROR,
            canon::encode(&ErrorBody { error: "Internal".into(), message: e.to_string() }),
            None,
        ),
    }
}

macro_rules! try_resp {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(r) => return r,
        }
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestBody {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineBody {
    pub graph: PipelineGraph,
    #[serde(default)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpBody {
    pub ids: Vec<CubeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archive {
    #[serde(with = "canon::b64")]
    pub archive: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadBody {
    #[serde(with = "canon::b64")]
    pub archive: Vec<u8>,
    #[serde(default)]
    pub partition: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishBody {
    pub cube_id: CubeId,
    pub topic: String,
    #[serde(default)]
    pub visibility: Visibility,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubscribeQuery {
    pub topic: String,
    #[serde(default)]
    pub since: Timestamp,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AuditQuery {
    pub principal: Option<String>,
    pub action: Option<String>,
    pub since: Option<Timestamp>,
    pub until: Option<Timestamp>,
}

impl AuditQuery {
    pub fn filter(&self) -> Result<LogFilter, String> {
        Ok(LogFilter {
            principal: self.principal.as_deref().map(PrincipalId::new).transpose().map_err(|e| e.to_string())?,
            action: self
                .action
                .as_deref()
                .map(str::parse::<AuditAction>)
                .transpose()
                .map_err(|_| "unknown audit action".to_string())?,
            since: self.since,
            until: self.until,
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VersionQuery {
    pub version: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeBody {
    #[serde(default)]
    pub unfreeze: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollbackBody {
    pub to: u64,
}

async fn request(State(st): State<AppState>, h: HeaderMap, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let b: RequestBody = try_resp!(parse(&body));
    call(st, s, StatusCode::OK, move |k, s| k.request(s, &b.text)).await
}

async fn create(State(st): State<AppState>, h: HeaderMap, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let b: NewCube = try_resp!(parse(&body));
    call(st, s, StatusCode::CREATED, move |k, s| k.create(s, &b)).await
}

async fn get_cube(
    State(st): State<AppState>,
    h: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> Response {
    let s = try_resp!(session(&st, &h));
    let id = try_resp!(cube_id(&id));
    call(st, s, StatusCode::OK, move |k, s| k.get(s, id, q.version)).await
}

async fn update(State(st): State<AppState>, h: HeaderMap, Path(id): Path<String>, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let id = try_resp!(cube_id(&id));
    let p: UpdatePatch = try_resp!(parse(&body));
    call(st, s, StatusCode::OK, move |k, s| k.update(s, id, &p)).await
}

async fn freeze(State(st): State<AppState>, h: HeaderMap, Path(id): Path<String>, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let id = try_resp!(cube_id(&id));
    let b: FreezeBody = if body.is_empty() { FreezeBody::default() } else { try_resp!(parse(&body)) };
    call(st, s, StatusCode::OK, move |k, s| k.freeze(s, id, b.unfreeze)).await
}

async fn rollback(State(st): State<AppState>, h: HeaderMap, Path(id): Path<String>, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let id = try_resp!(cube_id(&id));
    let b: RollbackBody = try_resp!(parse(&body));
    call(st, s, StatusCode::OK, move |k, s| k.rollback(s, id, b.to)).await
}

async fn archive(State(st): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> Response {
    let s = try_resp!(session(&st, &h));
    let id = try_resp!(cube_id(&id));
    call(st, s, StatusCode::OK, move |k, s| k.archive(s, id)).await
}

async fn activate(State(st): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> Response {
    let s = try_resp!(session(&st, &h));
    let id = try_resp!(cube_id(&id));
    call(st, s, StatusCode::OK, move |k, s| k.activate(s, id)).await
}

async fn transform(State(st): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> Response {
    let s = try_resp!(session(&st, &h));
    let id = try_resp!(cube_id(&id));
    call(st, s, StatusCode::OK, move |k, s| k.transform(s, id)).await
}

async fn provenance(State(st): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> Response {
    let s = try_resp!(session(&st, &h));
    let id = try_resp!(cube_id(&id));
    call(st, s, StatusCode::OK, move |k, s| k.provenance(s, id)).await
}

async fn recall(State(st): State<AppState>, h: HeaderMap, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let q: RecallQuery = try_resp!(parse(&body));
    call(st, s, StatusCode::OK, move |k, s| k.recall(s, &q)).await
}

async fn audit(State(st): State<AppState>, h: HeaderMap, Query(q): Query<AuditQuery>) -> Response {
    let s = try_resp!(session(&st, &h));
    let f = try_resp!(q.filter().map_err(bad_request));
    call(st, s, StatusCode::OK, move |k, s| k.logquery(s, &f)).await
}

async fn audit_verify(State(st): State<AppState>, h: HeaderMap) -> Response {
    let s = try_resp!(session(&st, &h));
    call(st, s, StatusCode::OK, move |k, _| Ok(k.verify_audit())).await
}

async fn pipelines(State(st): State<AppState>, h: HeaderMap, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let b: PipelineBody = try_resp!(parse(&body));
    let opts = ExecOptions { parallel: b.parallel, ..ExecOptions::default() };
    call(st, s, StatusCode::OK, move |k, s| k.execute_pipeline(s, &b.graph, &opts)).await
}

async fn mip_dump(State(st): State<AppState>, h: HeaderMap, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let b: DumpBody = try_resp!(parse(&body));
    call(st, s, StatusCode::OK, move |k, s| k.dump(s, &b.ids).map(|archive| Archive { archive })).await
}

async fn mip_load(State(st): State<AppState>, h: HeaderMap, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let b: LoadBody = try_resp!(parse(&body));
    call(st, s, StatusCode::OK, move |k, s| k.load_archive(s, &b.archive, b.partition.as_deref())).await
}

async fn publish(State(st): State<AppState>, h: HeaderMap, body: Bytes) -> Response {
    let s = try_resp!(session(&st, &h));
    let b: PublishBody = try_resp!(parse(&body));
    call(st, s, StatusCode::OK, move |k, s| k.publish(s, b.cube_id, &b.topic, b.visibility)).await
}

async fn subscribe(State(st): State<AppState>, h: HeaderMap, Query(q): Query<SubscribeQuery>) -> Response {
    let s = try_resp!(session(&st, &h));
    call(st, s, StatusCode::OK, move |k, s| k.subscribe(s, &q.topic, q.since)).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/request", post(request))
        .route("/v1/cubes", post(create))
        .route("/v1/cubes/{id}", get(get_cube))
        .route("/v1/cubes/{id}/update", post(update))
        .route("/v1/cubes/{id}/freeze", post(freeze))
        .route("/v1/cubes/{id}/rollback", post(rollback))
        .route("/v1/cubes/{id}/archive", post(archive))
        .route("/v1/cubes/{id}/activate", post(activate))
        .route("/v1/cubes/{id}/transform", post(transform))
        .route("/v1/cubes/{id}/provenance", get(provenance))
        .route("/v1/recall", post(recall))
        .route("/v1/audit", get(audit))
        .route("/v1/audit/verify", get(audit_verify))
        .route("/v1/pipelines", post(pipelines))
        .route("/v1/mip/dump", post(mip_dump))
        .route("/v1/mip/load", post(mip_load))
        .route("/v1/store/publish", post(publish))
        .route("/v1/store/subscribe", get(subscribe))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
