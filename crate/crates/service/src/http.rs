//! HTTP surfaces: the RM southbound API, the orchestrator northbound API and
//! a northbound client.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE, ETAG, IF_MODIFIED_SINCE, IF_NONE_MATCH, LAST_MODIFIED};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::Router;
use fabric_core::model::ModelDelta;
use fabric_core::protocol::{
    decode, encode, ErrorCode, ErrorEnvelope, IntentDocument, Notification, ServiceResponse, ServiceStatusDocument,
    SubscriptionRequest, SubscriptionResponse,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::compression::CompressionLayer;

use crate::api::{ModelFetch, NotifySink};
use crate::harness::batch::Nbi;
use crate::orchestrator::Orchestrator;
use crate::rm::ResourceManager;

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, [(CONTENT_TYPE, HeaderValue::from_static("application/json"))], encode(value)).into_response()
}

fn error_response(e: &ErrorEnvelope) -> Response {
    let status = StatusCode::from_u16(e.code.http_status()).unwrap_or(StatusCode::UNPROCESSABLE_ENTITY);
    json_response(status, e)
}

fn reply<T: Serialize>(status: StatusCode, r: Result<T, ErrorEnvelope>) -> Response {
    match r {
        Ok(v) => json_response(status, &v),
        Err(e) => error_response(&e),
    }
}

#[allow(clippy::result_large_err)]
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, Response> {
    decode(bytes).map_err(|e| error_response(&ErrorEnvelope::message(ErrorCode::MalformedIntent, e.to_string())))
}

async fn require_bearer(State(token): State<Arc<String>>, req: Request, next: Next) -> Response {
    let expected = format!("Bearer {token}");
    let ok = req.headers().get(AUTHORIZATION).and_then(|v| v.to_str().ok()) == Some(expected.as_str());
    if !ok {
        let e = ErrorEnvelope::new(ErrorCode::BadState, json!({ "reason": "unauthorized" }));
        return json_response(StatusCode::UNAUTHORIZED, &e);
    }
    next.run(req).await
}

fn etag(version: u64) -> String {
    format!("\"{version}\"")
}

fn http_date(epoch: i64) -> String {
    httpdate::fmt_http_date(UNIX_EPOCH + Duration::from_secs(epoch.max(0) as u64))
}

/// Version the client claims to hold. An entity tag wins over a date; a
/// date only vouches for the current version if nothing was generated
/// after it.
fn known_version(headers: &HeaderMap, current: u64, generated_at: i64) -> Option<u64> {
    if let Some(tag) = headers.get(IF_NONE_MATCH).and_then(|v| v.to_str().ok()) {
        return tag.trim().trim_start_matches("W/").trim_matches('"').parse().ok();
    }
    let since = headers.get(IF_MODIFIED_SINCE)?.to_str().ok()?;
    let since: SystemTime = httpdate::parse_http_date(since).ok()?;
    let since = since.duration_since(UNIX_EPOCH).ok()?.as_secs() as i64;
    (since >= generated_at).then_some(current)
}

async fn rm_models(State(rm): State<Arc<ResourceManager>>, headers: HeaderMap) -> Response {
    let (current, generated_at) = {
        let v = rm.version();
        (v, rm.snapshot_generated_at())
    };
    match rm.get_model(known_version(&headers, current, generated_at)).await {
        ModelFetch::NotModified => {
            let mut h = HeaderMap::new();
            h.insert(ETAG, HeaderValue::from_str(&etag(current)).expect("ascii"));
            (StatusCode::NOT_MODIFIED, h).into_response()
        }
        ModelFetch::Modified(m) => {
            let mut r = json_response(StatusCode::OK, &*m);
            let h = r.headers_mut();
            h.insert(ETAG, HeaderValue::from_str(&etag(m.version)).expect("ascii"));
            h.insert(LAST_MODIFIED, HeaderValue::from_str(&http_date(m.generated_at)).expect("ascii"));
            r
        }
    }
}

async fn rm_propagate(State(rm): State<Arc<ResourceManager>>, bytes: Bytes) -> Response {
    let delta: ModelDelta = match body(&bytes) {
        Ok(d) => d,
        Err(r) => return r,
    };
    reply(StatusCode::OK, rm.propagate(delta).await)
}

async fn rm_commit(State(rm): State<Arc<ResourceManager>>, Path(id): Path<String>) -> Response {
    reply(StatusCode::OK, rm.commit(&id).await)
}

async fn rm_delta(State(rm): State<Arc<ResourceManager>>, Path(id): Path<String>) -> Response {
    reply(StatusCode::OK, rm.delta_status(&id))
}

async fn rm_subscribe(State(rm): State<Arc<ResourceManager>>, bytes: Bytes) -> Response {
    let req: SubscriptionRequest = match body(&bytes) {
        Ok(r) => r,
        Err(r) => return r,
    };
    reply(
        StatusCode::CREATED,
        rm.subscribe(NotifySink::Url(req.endpoint)).map(|subscription_id| SubscriptionResponse { subscription_id }),
    )
}

async fn rm_unsubscribe(State(rm): State<Arc<ResourceManager>>, Path(id): Path<String>) -> Response {
    if rm.unsubscribe(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        error_response(&ErrorEnvelope::new(ErrorCode::UnknownUrn, json!({ "subscription_id": id })))
    }
}

async fn rm_audit(State(rm): State<Arc<ResourceManager>>) -> Response {
    json_response(StatusCode::OK, &rm.audit_document().await)
}

/// `/sense-rm/v1` for one RM, behind a static bearer token, gzip-capable.
pub fn rm_router(rm: Arc<ResourceManager>, token: &str) -> Router {
    Router::new()
        .route("/sense-rm/v1/models", get(rm_models))
        .route("/sense-rm/v1/deltas", post(rm_propagate))
        .route("/sense-rm/v1/deltas/{id}", get(rm_delta))
        .route("/sense-rm/v1/deltas/{id}/actions/commit", put(rm_commit))
        .route("/sense-rm/v1/subscriptions", post(rm_subscribe))
        .route("/sense-rm/v1/subscriptions/{id}", delete(rm_unsubscribe))
        .route("/sense-rm/v1/audit", get(rm_audit))
        .with_state(rm)
        .layer(middleware::from_fn_with_state(Arc::new(token.to_owned()), require_bearer))
        .layer(CompressionLayer::new())
}

type Orch = Arc<Orchestrator>;

async fn nbi_create(State(o): State<Orch>, bytes: Bytes) -> Response {
    let doc: IntentDocument = match body(&bytes) {
        Ok(d) => d,
        Err(r) => return r,
    };
    reply(StatusCode::CREATED, Orchestrator::create(&o, doc).await)
}

async fn nbi_negotiate(State(o): State<Orch>, Path(id): Path<String>, bytes: Bytes) -> Response {
    let doc: IntentDocument = match body(&bytes) {
        Ok(d) => d,
        Err(r) => return r,
    };
    reply(StatusCode::OK, o.negotiate(&id, doc).await)
}

async fn nbi_reserve(State(o): State<Orch>, Path(id): Path<String>) -> Response {
    reply(StatusCode::OK, Orchestrator::reserve(&o, &id).await)
}

#[derive(Debug, Default, Deserialize)]
struct CommitParams {
    #[serde(rename = "async", default)]
    asynchronous: bool,
}

async fn nbi_commit(State(o): State<Orch>, Path(id): Path<String>, Query(p): Query<CommitParams>) -> Response {
    let status = if p.asynchronous { StatusCode::ACCEPTED } else { StatusCode::OK };
    reply(status, Orchestrator::commit(&o, &id, p.asynchronous).await)
}

async fn nbi_cancel(State(o): State<Orch>, Path(id): Path<String>) -> Response {
    reply(StatusCode::OK, Orchestrator::cancel(&o, &id).await)
}

async fn nbi_status(State(o): State<Orch>, Path(id): Path<String>) -> Response {
    reply(StatusCode::OK, Orchestrator::status(&o, &id))
}

async fn nbi_union(State(o): State<Orch>) -> Response {
    json_response(StatusCode::OK, &o.union_graph())
}

async fn nbi_callback(State(o): State<Orch>, Path(rm): Path<String>, bytes: Bytes) -> Response {
    let note: Notification = match body(&bytes) {
        Ok(n) => n,
        Err(r) => return r,
    };
    if note.domain != rm {
        return error_response(&ErrorEnvelope::new(
            ErrorCode::UnknownUrn,
            json!({ "message": "callback path and notification domain differ", "path": rm, "domain": note.domain }),
        ));
    }
    o.on_notification(note);
    StatusCode::NO_CONTENT.into_response()
}

/// `/sense-o/v1` northbound API plus the RM callback receiver.
pub fn nbi_router(orch: Orch) -> Router {
    Router::new()
        .route("/sense-o/v1/services", post(nbi_create))
        .route("/sense-o/v1/services/{id}", delete(nbi_cancel))
        .route("/sense-o/v1/services/{id}/negotiate", post(nbi_negotiate))
        .route("/sense-o/v1/services/{id}/reserve", post(nbi_reserve))
        .route("/sense-o/v1/services/{id}/commit", post(nbi_commit))
        .route("/sense-o/v1/services/{id}/status", get(nbi_status))
        .route("/sense-o/v1/models/union", get(nbi_union))
        .route("/sense-o/v1/callbacks/{rm}", post(nbi_callback))
        .with_state(orch)
        .layer(CompressionLayer::new())
}

/// Binds `addr` and serves `router` in the background.
pub async fn serve(router: Router, addr: SocketAddr) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(error = %e, "http server stopped");
        }
    });
    Ok((local, handle))
}

/// Northbound client.
pub struct HttpNbi {
    base: String,
    client: reqwest::Client,
}

impl HttpNbi {
    pub fn new(base: impl Into<String>) -> HttpNbi {
        HttpNbi { base: base.into().trim_end_matches('/').to_owned(), client: reqwest::Client::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/sense-o/v1{path}", self.base)
    }

    async fn read<T: DeserializeOwned>(r: Result<reqwest::Response, reqwest::Error>) -> Result<T, ErrorEnvelope> {
        let unreachable = |m: String| ErrorEnvelope::new(ErrorCode::BadState, json!({ "reason": "orchestrator-unreachable", "message": m }));
        let resp = r.map_err(|e| unreachable(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| unreachable(e.to_string()))?;
        if status.is_success() {
            decode(&bytes).map_err(|e| unreachable(e.to_string()))
        } else {
            Err(decode::<ErrorEnvelope>(&bytes).unwrap_or_else(|_| unreachable(format!("status {status}"))))
        }
    }

    pub async fn negotiate(&self, id: &str, doc: &IntentDocument) -> Result<ServiceResponse, ErrorEnvelope> {
        Self::read(self.client.post(self.url(&format!("/services/{id}/negotiate"))).json(doc).send().await).await
    }

    pub async fn commit_with(&self, id: &str, asynchronous: bool) -> Result<ServiceResponse, ErrorEnvelope> {
        Self::read(
            self.client
                .post(self.url(&format!("/services/{id}/commit?async={asynchronous}")))
                .send()
                .await,
        )
        .await
    }

    pub async fn union_graph(&self) -> Result<fabric_core::topology::GraphDocument, ErrorEnvelope> {
        Self::read(self.client.get(self.url("/models/union")).send().await).await
    }
}

#[async_trait]
impl Nbi for HttpNbi {
    async fn create(&self, doc: &IntentDocument) -> Result<ServiceResponse, ErrorEnvelope> {
        Self::read(self.client.post(self.url("/services")).json(doc).send().await).await
    }

    async fn reserve(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope> {
        Self::read(self.client.post(self.url(&format!("/services/{id}/reserve"))).send().await).await
    }

    async fn commit(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope> {
        self.commit_with(id, false).await
    }

    async fn cancel(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope> {
        Self::read(self.client.delete(self.url(&format!("/services/{id}"))).send().await).await
    }

    async fn status(&self, id: &str) -> Result<ServiceStatusDocument, ErrorEnvelope> {
        Self::read(self.client.get(self.url(&format!("/services/{id}/status"))).send().await).await
    }
}
