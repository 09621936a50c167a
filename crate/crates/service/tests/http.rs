mod common;

use std::net::SocketAddr;
use std::sync::Arc;

use common::*;
use fabric_core::protocol::{ErrorCode, ServiceState};
use fabric_service::api::{HttpRm, ModelFetch, RmApi};
use fabric_service::clock::ManualClock;
use fabric_service::harness::audit;
use fabric_service::harness::batch::{table1_batch, Nbi};
use fabric_service::harness::Fabric;
use fabric_service::http::{nbi_router, rm_router, serve, HttpNbi};
use fabric_service::orchestrator::Orchestrator;

const TOKEN: &str = "test-token";

fn any_port() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

struct HttpEnv {
    fabric: Fabric,
    rm_bases: Vec<(String, String)>,
    orch: Arc<Orchestrator>,
    nbi_base: String,
}

async fn http_env(use_notify: bool) -> HttpEnv {
    let clock = Arc::new(ManualClock::new(T));
    let fabric = Fabric::launch(&manifest(0.0), clock.clone(), None).unwrap();
    let mut rm_bases = vec![];
    let mut apis: Vec<Arc<dyn RmApi>> = vec![];
    for rm in &fabric.rms {
        let (addr, _) = serve(rm_router(rm.clone(), TOKEN), any_port()).await.unwrap();
        let base = format!("http://{addr}");
        apis.push(Arc::new(HttpRm::new(rm.domain(), base.clone(), TOKEN)));
        rm_bases.push((rm.domain().to_owned(), base));
    }
    let cfg = fabric_service::orchestrator::OrchestratorConfig { use_notify, ..config() };
    let orch = Orchestrator::connect(cfg, apis, clock).await.unwrap();
    let (addr, _) = serve(nbi_router(orch.clone()), any_port()).await.unwrap();
    let nbi_base = format!("http://{addr}");
    if use_notify {
        orch.enable_notifications(Some(&nbi_base)).await.unwrap();
    }
    HttpEnv { fabric, rm_bases, orch, nbi_base }
}

#[tokio::test]
async fn rm_models_honour_validators() {
    let e = http_env(false).await;
    let (domain, base) = &e.rm_bases[0];
    let rm = HttpRm::new(domain, base, TOKEN);
    let m = match rm.get_model(None).await.unwrap() {
        ModelFetch::Modified(m) => m,
        ModelFetch::NotModified => panic!("first fetch must carry a model"),
    };
    assert!(matches!(rm.get_model(Some(m.version)).await.unwrap(), ModelFetch::NotModified));

    let client = reqwest::Client::builder().no_gzip().build().unwrap();
    let url = format!("{base}/sense-rm/v1/models");
    let r = client
        .get(&url)
        .bearer_auth(TOKEN)
        .header("If-None-Match", format!("\"{}\"", m.version))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 304);
    // An entity tag for an older version wins over a fresh date.
    let r = client
        .get(&url)
        .bearer_auth(TOKEN)
        .header("If-None-Match", "\"999999\"")
        .header("If-Modified-Since", "Fri, 01 Jan 2100 00:00:00 GMT")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    let r = client.get(&url).bearer_auth(TOKEN).header("Accept-Encoding", "gzip").send().await.unwrap();
    assert_eq!(r.headers()["content-encoding"], "gzip");
}

#[tokio::test]
async fn rm_rejects_missing_token() {
    let e = http_env(false).await;
    let (_, base) = &e.rm_bases[0];
    let r = reqwest::get(format!("{base}/sense-rm/v1/models")).await.unwrap();
    assert_eq!(r.status(), 401);
    let body: serde_json::Value = r.json().await.unwrap();
    assert_eq!(body["code"], "bad-state");
    assert_eq!(body["detail"]["reason"], "unauthorized");
}

#[tokio::test]
async fn rm_rejects_malformed_delta() {
    let e = http_env(false).await;
    let (_, base) = &e.rm_bases[0];
    let r = reqwest::Client::new()
        .post(format!("{base}/sense-rm/v1/deltas"))
        .bearer_auth(TOKEN)
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
}

#[tokio::test]
async fn northbound_lifecycle_over_http_with_notifications() {
    let e = http_env(true).await;
    let nbi = HttpNbi::new(&e.nbi_base);
    let r = nbi.create(&golden("intent/request.json")).await.unwrap();
    assert_eq!(r.state, ServiceState::Computed);
    let id = r.instance_id;
    assert_eq!(nbi.reserve(&id).await.unwrap().state, ServiceState::Reserved);
    assert_eq!(nbi.commit(&id).await.unwrap().state, ServiceState::Committed);
    let s = nbi.status(&id).await.unwrap();
    assert_eq!(s.state, ServiceState::Committed);
    assert_eq!(s.deltas.len(), 5);
    let ledger = e.orch.ledger();
    let apis: Vec<Arc<dyn RmApi>> =
        e.rm_bases.iter().map(|(d, b)| Arc::new(HttpRm::new(d, b, TOKEN)) as Arc<dyn RmApi>).collect();
    assert!(audit::audit(&apis, Some(&ledger)).await.passed());
    assert_eq!(nbi.cancel(&id).await.unwrap().state, ServiceState::Cancelled);
    for rm in &e.fabric.rms {
        assert!(rm.audit_document().await.allocations.is_empty());
    }
}

#[tokio::test]
async fn northbound_errors_keep_their_codes() {
    let e = http_env(false).await;
    let nbi = HttpNbi::new(&e.nbi_base);
    assert_eq!(nbi.status("missing").await.unwrap_err().code, ErrorCode::UnknownUrn);
    let r = reqwest::Client::new()
        .post(format!("{}/sense-o/v1/services", e.nbi_base))
        .body("[]")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 400);
    let q = nbi.create(&golden("query/request.json")).await.unwrap();
    let err = nbi.reserve(&q.instance_id).await.unwrap_err();
    assert_eq!(err.code, ErrorCode::BadState);
    let g = nbi.union_graph().await.unwrap();
    assert!(!g.nodes.is_empty());
}

#[tokio::test]
async fn table1_spans_over_http() {
    let e = http_env(false).await;
    let nbi = HttpNbi::new(&e.nbi_base);
    let spec = table1_batch(1);
    let reports = fabric_service::harness::batch::run_batch(&nbi, &spec).await.unwrap();
    for r in &reports {
        assert_eq!(r.state, Some(ServiceState::Committed), "{r:?}");
        assert_eq!(Some(r.span), r.expected_span, "{}", r.alias);
    }
}
