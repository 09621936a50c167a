//! The resource-manager contract as seen by its callers, with an in-process
//! binding and an HTTP binding.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use fabric_core::calendar::{Allocation, CalendarViolation};
use fabric_core::model::{DomainModel, ModelDelta};
use fabric_core::protocol::{
    decode, CommitAck, DeltaRecord, ErrorCode, ErrorEnvelope, Notification, PropagateResponse, SubscriptionRequest,
    SubscriptionResponse,
};
use reqwest::header::{HeaderValue, AUTHORIZATION, ETAG, IF_MODIFIED_SINCE, IF_NONE_MATCH, LAST_MODIFIED};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;

use crate::rm::ResourceManager;

#[derive(Debug, Clone, Error)]
pub enum RmError {
    #[error("{0}")]
    Rejected(ErrorEnvelope),
    #[error("transport error: {0}")]
    Transport(String),
}

impl RmError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            RmError::Rejected(e) => Some(e.code),
            RmError::Transport(_) => None,
        }
    }

    pub fn envelope(&self) -> ErrorEnvelope {
        match self {
            RmError::Rejected(e) => e.clone(),
            RmError::Transport(m) => ErrorEnvelope::new(
                ErrorCode::BadState,
                serde_json::json!({ "message": m, "reason": "rm-unreachable" }),
            ),
        }
    }
}

impl From<ErrorEnvelope> for RmError {
    fn from(e: ErrorEnvelope) -> Self {
        RmError::Rejected(e)
    }
}

#[derive(Debug, Clone)]
pub enum ModelFetch {
    Modified(Arc<DomainModel>),
    NotModified,
}

/// Where an RM delivers notifications.
#[derive(Debug, Clone)]
pub enum NotifySink {
    Url(String),
    Channel(mpsc::UnboundedSender<Notification>),
}

/// Full allocation state of one RM, for audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditDocument {
    pub domain: String,
    pub version: u64,
    pub allocations: Vec<Allocation>,
    pub violations: Vec<CalendarViolation>,
}

#[async_trait]
pub trait RmApi: Send + Sync {
    fn domain(&self) -> &str;

    /// Current model, or `NotModified` when `known_version` is still current.
    async fn get_model(&self, known_version: Option<u64>) -> Result<ModelFetch, RmError>;

    async fn propagate(&self, delta: &ModelDelta) -> Result<PropagateResponse, RmError>;

    async fn commit(&self, delta_id: &str) -> Result<CommitAck, RmError>;

    async fn delta_status(&self, delta_id: &str) -> Result<DeltaRecord, RmError>;

    async fn subscribe(&self, sink: NotifySink) -> Result<String, RmError>;

    async fn audit(&self) -> Result<AuditDocument, RmError>;
}

/// In-process binding.
#[derive(Clone)]
pub struct LocalRm(pub Arc<ResourceManager>);

#[async_trait]
impl RmApi for LocalRm {
    fn domain(&self) -> &str {
        self.0.domain()
    }

    async fn get_model(&self, known_version: Option<u64>) -> Result<ModelFetch, RmError> {
        Ok(self.0.get_model(known_version).await)
    }

    async fn propagate(&self, delta: &ModelDelta) -> Result<PropagateResponse, RmError> {
        Ok(self.0.propagate(delta.clone()).await?)
    }

    async fn commit(&self, delta_id: &str) -> Result<CommitAck, RmError> {
        Ok(self.0.commit(delta_id).await?)
    }

    async fn delta_status(&self, delta_id: &str) -> Result<DeltaRecord, RmError> {
        Ok(self.0.delta_status(delta_id)?)
    }

    async fn subscribe(&self, sink: NotifySink) -> Result<String, RmError> {
        Ok(self.0.subscribe(sink)?)
    }

    async fn audit(&self) -> Result<AuditDocument, RmError> {
        Ok(self.0.audit_document().await)
    }
}

/// ETag and Last-Modified seen with a model version.
type Validators = (Option<HeaderValue>, Option<HeaderValue>);

/// HTTP binding against `/sense-rm/v1`.
pub struct HttpRm {
    domain: String,
    base: String,
    token: String,
    client: reqwest::Client,
    validators: Mutex<BTreeMap<u64, Validators>>,
}

impl HttpRm {
    pub fn new(domain: impl Into<String>, base: impl Into<String>, token: impl Into<String>) -> Self {
        HttpRm {
            domain: domain.into(),
            base: base.into().trim_end_matches('/').to_owned(),
            token: token.into(),
            client: reqwest::Client::new(),
            validators: Mutex::new(BTreeMap::new()),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/sense-rm/v1{path}", self.base)
    }

    fn auth(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        req.header(AUTHORIZATION, format!("Bearer {}", self.token))
    }

    async fn read<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T, RmError> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| RmError::Transport(e.to_string()))?;
        if status.is_success() {
            return decode(&bytes).map_err(|e| RmError::Transport(e.to_string()));
        }
        match decode::<ErrorEnvelope>(&bytes) {
            Ok(e) => Err(RmError::Rejected(e)),
            Err(_) => Err(RmError::Transport(format!("status {status}: {}", String::from_utf8_lossy(&bytes)))),
        }
    }
}

fn transport(e: reqwest::Error) -> RmError {
    RmError::Transport(e.to_string())
}

#[async_trait]
impl RmApi for HttpRm {
    fn domain(&self) -> &str {
        &self.domain
    }

    async fn get_model(&self, known_version: Option<u64>) -> Result<ModelFetch, RmError> {
        let mut req = self.auth(self.client.get(self.url("/models")));
        if let Some(v) = known_version {
            let known = self.validators.lock().expect("validator lock").get(&v).cloned();
            if let Some((etag, modified)) = known {
                if let Some(e) = etag {
                    req = req.header(IF_NONE_MATCH, e);
                }
                if let Some(m) = modified {
                    req = req.header(IF_MODIFIED_SINCE, m);
                }
            }
        }
        let resp = req.send().await.map_err(transport)?;
        if resp.status() == StatusCode::NOT_MODIFIED {
            return Ok(ModelFetch::NotModified);
        }
        let etag = resp.headers().get(ETAG).cloned();
        let modified = resp.headers().get(LAST_MODIFIED).cloned();
        let model: DomainModel = Self::read(resp).await?;
        self.validators
            .lock()
            .expect("validator lock")
            .insert(model.version, (etag, modified));
        Ok(ModelFetch::Modified(Arc::new(model)))
    }

    async fn propagate(&self, delta: &ModelDelta) -> Result<PropagateResponse, RmError> {
        let resp = self
            .auth(self.client.post(self.url("/deltas")))
            .json(delta)
            .send()
            .await
            .map_err(transport)?;
        Self::read(resp).await
    }

    async fn commit(&self, delta_id: &str) -> Result<CommitAck, RmError> {
        let resp = self
            .auth(self.client.put(self.url(&format!("/deltas/{delta_id}/actions/commit"))))
            .send()
            .await
            .map_err(transport)?;
        Self::read(resp).await
    }

    async fn delta_status(&self, delta_id: &str) -> Result<DeltaRecord, RmError> {
        let resp = self
            .auth(self.client.get(self.url(&format!("/deltas/{delta_id}"))))
            .send()
            .await
            .map_err(transport)?;
        Self::read(resp).await
    }

    async fn subscribe(&self, sink: NotifySink) -> Result<String, RmError> {
        let NotifySink::Url(endpoint) = sink else {
            return Err(RmError::Rejected(ErrorEnvelope::message(
                ErrorCode::MalformedIntent,
                "an HTTP resource manager can only notify a URL",
            )));
        };
        let resp = self
            .auth(self.client.post(self.url("/subscriptions")))
            .json(&SubscriptionRequest { endpoint })
            .send()
            .await
            .map_err(transport)?;
        Self::read::<SubscriptionResponse>(resp).await.map(|r| r.subscription_id)
    }

    async fn audit(&self) -> Result<AuditDocument, RmError> {
        let resp = self
            .auth(self.client.get(self.url("/audit")))
            .send()
            .await
            .map_err(transport)?;
        Self::read(resp).await
    }
}
