// SPDX-License-Identifier: Apache-2.0

//! HTTP/JSON service over one project.
//!
//! Handlers run on the blocking pool behind one `RwLock`: mutations are
//! serialized, reads share the lock. Every JSON body is canonical.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use vt_core::{canonical, Alias, ContentHash, ExecutionStatus, LogFilter, ModuleId, Overrides, PrimitiveOp, Value, VersionId};

use crate::error::{AppError, Result};
use crate::project::Project;

pub type Shared = Arc<RwLock<Project>>;

pub fn router(project: Project) -> Router {
    router_shared(Arc::new(RwLock::new(project)))
}

pub fn router_shared(state: Shared) -> Router {
    Router::new()
        .route("/api/tree", get(tree))
        .route("/api/counters", get(counters))
        .route("/api/workflow/{v}", get(workflow))
        .route("/api/actions", post(actions))
        .route("/api/tags", post(add_tag))
        .route("/api/tags/{name}", delete(remove_tag))
        .route("/api/annotations", post(annotate))
        .route("/api/diff", get(diff))
        .route("/api/packages", get(packages).post(load_package))
        .route("/api/upgrade", post(upgrade))
        .route("/api/executions", get(list_executions).post(run_execution))
        .route("/api/executions/{id}", get(get_execution))
        .route("/api/mashups", get(list_mashups).post(create_mashup))
        .route("/api/mashups/{id}/run", post(run_mashup))
        .route("/api/data", post(put_data))
        .route("/api/data/{hash}", get(get_data))
        .with_state(state)
}

/// Binds `addr` and serves until Ctrl-C. The project lock is held throughout.
pub fn serve_blocking(project: Project, addr: SocketAddr) -> Result<()> {
    let listener = TcpListener::bind(addr).map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => AppError::new("PORT_IN_USE", format!("{addr} is already in use")),
        _ => e.into(),
    })?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        println!("listening on http://{local}");
        axum::serve(listener, router(project))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

struct ApiError(AppError);

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.kind.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = json!({"error": self.0.code, "detail": self.0.detail});
        json_response(status, &body)
    }
}

type Reply = std::result::Result<Response, ApiError>;

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match canonical::to_string(value) {
        Ok(text) => (status, [(header::CONTENT_TYPE, "application/json")], text).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Runs `f` under a shared lock on the blocking pool.
async fn read<T, F>(state: Shared, f: F) -> std::result::Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Project) -> Result<T> + Send + 'static,
{
    let joined = tokio::task::spawn_blocking(move || {
        let guard = state.read().map_err(|_| AppError::new("INTERNAL", "project lock poisoned"))?;
        f(&guard)
    })
    .await;
    Ok(joined.map_err(|e| AppError::new("INTERNAL", e.to_string()))??)
}

/// Runs `f` under the exclusive lock on the blocking pool.
async fn write<T, F>(state: Shared, f: F) -> std::result::Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Project) -> Result<T> + Send + 'static,
{
    let joined = tokio::task::spawn_blocking(move || {
        let mut guard = state.write().map_err(|_| AppError::new("INTERNAL", "project lock poisoned"))?;
        f(&mut guard)
    })
    .await;
    Ok(joined.map_err(|e| AppError::new("INTERNAL", e.to_string()))??)
}

fn ok<T: Serialize>(value: &T) -> Reply {
    Ok(json_response(StatusCode::OK, value))
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| AppError::bad_request(format!("request body: {e}")))
}

/// A version given as a number or a tag name.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum VersionArg {
    Id(u64),
    Name(String),
}

impl VersionArg {
    fn resolve(&self, p: &Project) -> Result<VersionId> {
        match self {
            VersionArg::Id(n) => {
                p.require(VersionId(*n))?;
                Ok(VersionId(*n))
            }
            VersionArg::Name(s) => p.resolve(s),
        }
    }
}

/// Accepts a tagged value (`{"type":"float","value":2.5}`) or a bare JSON
/// scalar. Bare integers stay integers; the engine widens them on use.
fn loose_value(j: Json) -> Result<Value> {
    let bad = |j: &Json| AppError::new("BAD_VALUE", format!("not a parameter value: {j}"));
    match j {
        Json::Object(_) => serde_json::from_value(j.clone()).map_err(|_| bad(&j)),
        Json::Bool(b) => Ok(Value::Boolean(b)),
        Json::String(s) => Ok(Value::String(s)),
        Json::Number(ref n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => Ok(Value::Integer(i)),
            (None, Some(f)) => Ok(Value::Float(f)),
            _ => Err(bad(&j)),
        },
        other => Err(bad(&other)),
    }
}

async fn tree(State(s): State<Shared>) -> Reply {
    ok(&read(s, |p| Ok(json!({"versions": p.vistrail().version_tree()}))).await?)
}

async fn counters(State(s): State<Shared>) -> Reply {
    ok(&read(s, |p| {
        let vt = p.vistrail();
        Ok(json!({
            "next_version": vt.next_version_id(),
            "next_module": vt.next_module_id(),
            "next_connection": vt.next_connection_id(),
        }))
    })
    .await?)
}

async fn workflow(State(s): State<Shared>, Path(v): Path<String>) -> Reply {
    ok(&read(s, move |p| {
        let v = p.resolve(&v)?;
        let w = p.workflow(v)?;
        let report = p.validate(v)?;
        Ok(json!({"version": v, "workflow": w, "violations": report.violations}))
    })
    .await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionRequest {
    parent: VersionArg,
    ops: Vec<Json>,
    user: Option<String>,
    note: Option<String>,
}

async fn actions(State(s): State<Shared>, body: Bytes) -> Reply {
    let req: ActionRequest = parse_body(&body)?;
    // Malformed ops are rejected with the same code as inapplicable ones.
    let ops = req
        .ops
        .into_iter()
        .enumerate()
        .map(|(i, op)| {
            serde_json::from_value::<PrimitiveOp>(op)
                .map_err(|e| AppError::new("INVALID_OPS", format!("INVALID_OPS({i}, {e})")))
        })
        .collect::<Result<Vec<_>>>()?;
    let v = write(s, move |p| {
        let parent = req.parent.resolve(p)?;
        p.append(parent, ops, req.user.as_deref(), req.note.as_deref())
    })
    .await?;
    ok(&json!({"version": v}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TagRequest {
    version: VersionArg,
    name: String,
}

async fn add_tag(State(s): State<Shared>, body: Bytes) -> Reply {
    let req: TagRequest = parse_body(&body)?;
    ok(&write(s, move |p| {
        let v = req.version.resolve(p)?;
        p.tag(v, &req.name)?;
        Ok(json!({"version": v, "name": req.name}))
    })
    .await?)
}

async fn remove_tag(State(s): State<Shared>, Path(name): Path<String>) -> Reply {
    ok(&write(s, move |p| {
        let v = p.untag(&name)?;
        Ok(json!({"version": v, "name": name, "removed": true}))
    })
    .await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRequest {
    version: VersionArg,
    key: String,
    value: String,
}

async fn annotate(State(s): State<Shared>, body: Bytes) -> Reply {
    let req: AnnotationRequest = parse_body(&body)?;
    ok(&write(s, move |p| {
        let v = req.version.resolve(p)?;
        p.annotate(v, &req.key, &req.value)?;
        Ok(json!({"version": v, "key": req.key, "value": req.value}))
    })
    .await?)
}

async fn diff(State(s): State<Shared>, Query(q): Query<BTreeMap<String, String>>) -> Reply {
    ok(&read(s, move |p| {
        let arg = |k: &str| {
            q.get(k)
                .ok_or_else(|| AppError::bad_request(format!("missing query parameter {k:?}")))
                .and_then(|t| p.resolve(t))
        };
        let (from, to) = (arg("from")?, arg("to")?);
        Ok(p.vistrail().diff(from, to)?)
    })
    .await?)
}

async fn packages(State(s): State<Shared>) -> Reply {
    ok(&read(s, |p| Ok(json!({"packages": p.registry().packages().collect::<Vec<_>>()}))).await?)
}

/// Body is a package manifest.
async fn load_package(State(s): State<Shared>, body: Bytes) -> Reply {
    let text = String::from_utf8(body.to_vec()).map_err(|_| AppError::bad_request("manifest is not UTF-8"))?;
    ok(&write(s, move |p| {
        let pkg = p.load_package(&text)?;
        Ok(json!({"package_id": pkg.package_id, "package_version": pkg.package_version}))
    })
    .await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UpgradeRequest {
    version: VersionArg,
    #[serde(default)]
    apply: bool,
    #[serde(default)]
    allow_partial: bool,
}

async fn upgrade(State(s): State<Shared>, body: Bytes) -> Reply {
    let req: UpgradeRequest = parse_body(&body)?;
    ok(&write(s, move |p| {
        let v = req.version.resolve(p)?;
        let (plan, new) = p.upgrade(v, req.apply, req.allow_partial)?;
        Ok(json!({"plan": plan, "version": new}))
    })
    .await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExecutionRequest {
    version: VersionArg,
    /// Keyed `"<module>.<param>"`.
    #[serde(default)]
    overrides: BTreeMap<String, Json>,
}

async fn run_execution(State(s): State<Shared>, body: Bytes) -> Reply {
    let req: ExecutionRequest = parse_body(&body)?;
    let mut overrides = Overrides::new();
    for (key, value) in req.overrides {
        let (module, param) = key
            .split_once('.')
            .and_then(|(m, p)| Some((m.parse::<u64>().ok()?, p)))
            .ok_or_else(|| AppError::new("BAD_OVERRIDE", format!("override key {key:?} is not MODULE.PARAM")))?;
        overrides.insert((ModuleId(module), param.to_owned()), loose_value(value)?);
    }
    let log = write(s, move |p| {
        let v = req.version.resolve(p)?;
        p.run(v, &overrides)
    })
    .await?;
    ok(&json!({"exec_id": log.exec_id, "status": log.status}))
}

async fn get_execution(State(s): State<Shared>, Path(id): Path<String>) -> Reply {
    ok(&read(s, move |p| {
        p.runs()
            .get(&id)
            .cloned()
            .ok_or_else(|| AppError::new("UNKNOWN_EXECUTION", format!("unknown execution {id}")))
    })
    .await?)
}

async fn list_executions(State(s): State<Shared>, Query(q): Query<BTreeMap<String, String>>) -> Reply {
    ok(&read(s, move |p| {
        let time = |k: &str| {
            q.get(k)
                .map(|t| {
                    chrono::DateTime::parse_from_rfc3339(t)
                        .map(|d| d.with_timezone(&chrono::Utc))
                        .map_err(|e| AppError::bad_request(format!("{k}: {e}")))
                })
                .transpose()
        };
        let filter = LogFilter {
            version: q.get("version").map(|v| p.resolve(v)).transpose()?,
            status: q
                .get("status")
                .map(|t| t.parse::<ExecutionStatus>().map_err(AppError::bad_request))
                .transpose()?,
            since: time("since")?,
            until: time("until")?,
        };
        Ok(json!({"executions": p.runs().query(&filter)}))
    })
    .await?)
}

async fn list_mashups(State(s): State<Shared>) -> Reply {
    ok(&read(s, |p| Ok(json!({"mashups": p.vistrail().mashups().values().collect::<Vec<_>>()}))).await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MashupRequest {
    version: VersionArg,
    title: String,
    aliases: Vec<Alias>,
}

async fn create_mashup(State(s): State<Shared>, body: Bytes) -> Reply {
    let req: MashupRequest = parse_body(&body)?;
    ok(&write(s, move |p| {
        let v = req.version.resolve(p)?;
        let id = p.create_mashup(v, &req.title, req.aliases)?;
        Ok(json!({"mashup_id": id}))
    })
    .await?)
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BindRequest {
    #[serde(default)]
    bindings: BTreeMap<String, Json>,
}

async fn run_mashup(State(s): State<Shared>, Path(id): Path<String>, body: Bytes) -> Reply {
    let req: BindRequest = if body.is_empty() { BindRequest::default() } else { parse_body(&body)? };
    let bindings = req
        .bindings
        .into_iter()
        .map(|(k, v)| Ok((k, loose_value(v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let log = write(s, move |p| p.run_mashup(&id, &bindings)).await?;
    ok(&json!({"exec_id": log.exec_id, "status": log.status}))
}

/// Raw body; `?name=` and `?version_of=` are optional.
async fn put_data(State(s): State<Shared>, Query(q): Query<BTreeMap<String, String>>, body: Bytes) -> Reply {
    let pred = q.get("version_of").map(|h| ContentHash::parse(h)).transpose().map_err(AppError::from)?;
    ok(&write(s, move |p| p.put_data(&body, q.get("name").map(String::as_str), pred.as_ref())).await?)
}

async fn get_data(State(s): State<Shared>, Path(hash): Path<String>) -> Reply {
    let bytes = read(s, move |p| Ok(p.data().get(&ContentHash::parse(&hash)?)?)).await?;
    Ok((StatusCode::OK, [(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}
