use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use facetloop::config::ServiceConfig;
use facetloop::core::catalog::{generate_catalog, CatalogConfig};
use facetloop::core::facetgen::{FacetList, FacetSelection};
use facetloop::core::lexindex::boolean_filter;
use facetloop::core::trainer::PolicyParams;
use facetloop::core::usersim::generate_trends;
use facetloop::core::SearchEnv;
use facetloop::http::router;
use facetloop::service::{FacetService, ManualClock};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn env() -> Arc<SearchEnv> {
    let (c, kg) = generate_catalog(&CatalogConfig { seed: 31, num_products: 2000, ..Default::default() });
    Arc::new(SearchEnv::new(c, kg))
}

fn params() -> PolicyParams {
    let mut p = PolicyParams::default();
    p.facet.weights = vec![1.2, 0.8, 1.0, 0.9, 0.3, 0.0];
    p.rewrite.weights = vec![0.5, 0.2, 0.1, -1.0, -0.5];
    p
}

struct Fixture {
    svc: Arc<FacetService>,
    clock: Arc<ManualClock>,
}

impl Fixture {
    fn new() -> Self {
        Self::with(env(), ServiceConfig::default())
    }

    fn with(env: Arc<SearchEnv>, config: ServiceConfig) -> Self {
        let clock = Arc::new(ManualClock::default());
        let trends = Arc::new(generate_trends(&env.kg, 31));
        let svc = Arc::new(FacetService::new(env, params(), Some(trends), config, clock.clone()));
        Self { svc, clock }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
        let req = match body {
            Some(b) => req.body(Body::from(b.to_string())).unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = router(self.svc.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn facets(&self, sid: &str, q: &str) -> (StatusCode, Value) {
        self.call("POST", "/v1/facets", Some(json!({ "session_id": sid, "query": q }))).await
    }

    async fn select(&self, sid: &str, name: &str, value: &str) -> (StatusCode, Value) {
        self.call("POST", "/v1/select", Some(json!({ "session_id": sid, "facet_name": name, "value": value }))).await
    }
}

fn first_choice(v: &Value) -> (String, String) {
    let list: FacetList = serde_json::from_value(v["facets"].clone()).unwrap();
    let f = list.facets.iter().find(|f| !f.values.is_empty()).expect("a facet with values");
    (f.name.clone(), f.values[0].clone())
}

#[tokio::test]
async fn repeated_query_hits_the_cache() {
    let fx = Fixture::new();
    let (s1, a) = fx.facets("u1", "dress").await;
    let (s2, b) = fx.facets("u1", "dress").await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a["cache"], "miss");
    assert_eq!(b["cache"], "hit");
    assert_eq!(a["facets"].to_string(), b["facets"].to_string());
    assert!(!a["facets"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn sessions_do_not_share_cache_or_history() {
    let fx = Fixture::new();
    let (_, a) = fx.facets("a", "dress").await;
    let (_, b) = fx.facets("b", "dress").await;
    assert_eq!(b["cache"], "miss");
    assert_eq!(a["facets"], b["facets"]);
    let (name, value) = first_choice(&a);
    assert_eq!(fx.select("a", &name, &value).await.0, StatusCode::OK);
    assert_eq!(fx.svc.click_history("a").unwrap().len(), 1);
    assert!(fx.svc.click_history("b").unwrap().is_empty());
    assert_eq!(fx.facets("b", "dress").await.1["cache"], "hit");
}

#[tokio::test]
async fn cache_entries_expire() {
    let fx = Fixture::new();
    let ttl = fx.svc.config().cache_ttl_secs;
    fx.facets("u", "lamp").await;
    fx.clock.advance(Duration::from_secs(ttl - 1));
    assert_eq!(fx.facets("u", "lamp").await.1["cache"], "hit");
    fx.clock.advance(Duration::from_secs(1));
    assert_eq!(fx.facets("u", "lamp").await.1["cache"], "miss");
}

#[tokio::test]
async fn select_invalidates_the_session_cache() {
    let fx = Fixture::new();
    let (_, a) = fx.facets("u", "sofa").await;
    let (name, value) = first_choice(&a);
    let (status, sel) = fx.select("u", &name, &value).await;
    assert_eq!(status, StatusCode::OK);
    assert!(!sel["rewritten_query"].as_str().unwrap().is_empty());
    assert!(sel["results"].as_array().unwrap().len() <= fx.svc.config().search_k);
    assert_eq!(fx.facets("u", "sofa").await.1["cache"], "miss");
}

#[tokio::test]
async fn error_statuses() {
    let fx = Fixture::new();
    assert_eq!(fx.facets("u", "   ").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(fx.select("ghost", "color", "red").await.0, StatusCode::NOT_FOUND);
    let (_, a) = fx.facets("u", "dress").await;
    let (status, body) = fx.select("u", "no-such-facet", "x").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["error"].is_string());
    let (name, _) = first_choice(&a);
    assert_eq!(fx.select("u", &name, "not-a-value").await.0, StatusCode::CONFLICT);
    let mode = |sid: &str, m: &str| json!({ "session_id": sid, "mode": m });
    assert_eq!(fx.call("POST", "/v1/mode", Some(mode("u", "psychic"))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(fx.call("POST", "/v1/mode", Some(mode("ghost", "boolean"))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(fx.call("GET", "/v1/search?q=dress&k=101", None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(fx.call("POST", "/v1/facets", Some(json!({ "query": "dress" }))).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let fx = Fixture::new();
    let (_, a) = fx.facets("u", "dress").await;
    let (name, value) = first_choice(&a);
    fx.clock.advance(Duration::from_secs(fx.svc.config().session_idle_secs));
    assert_eq!(fx.select("u", &name, &value).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn boolean_mode_matches_the_filter_oracle() {
    let fx = Fixture::new();
    let (_, a) = fx.facets("u", "boots").await;
    let (status, m) = fx.call("POST", "/v1/mode", Some(json!({ "session_id": "u", "mode": "boolean" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["mode"], "boolean");
    let (name, value) = first_choice(&a);
    let (_, sel) = fx.select("u", &name, &value).await;
    assert_eq!(sel["rewritten_query"], "boots");
    let env = fx.svc.env();
    let oracle: Vec<String> = boolean_filter(&env.index, &env.catalog, "boots", &FacetSelection::new(&name, &value), fx.svc.config().search_k)
        .into_iter()
        .map(|r| r.doc_id)
        .collect();
    let got: Vec<String> = sel["results"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(got, oracle);
    // subset of the unrefined search over the corpus
    let (_, all) = fx.call("GET", "/v1/search?q=boots&k=100", None).await;
    let all: Vec<&str> = all["results"].as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert!(got.iter().all(|d| all.contains(&d.as_str())));
}

#[tokio::test]
async fn default_mode_is_generative() {
    let fx = Fixture::new();
    fx.facets("u", "boots").await;
    let (_, m) = fx.call("POST", "/v1/mode", Some(json!({ "session_id": "u", "mode": "generative" }))).await;
    assert_eq!(m["mode"], "generative");
}

#[tokio::test]
async fn restart_gives_identical_responses() {
    let script = |fx: Fixture| async move {
        let mut out = Vec::new();
        let (_, a) = fx.facets("s", "chair").await;
        out.push(a["facets"].to_string());
        let (name, value) = first_choice(&a);
        let (_, b) = fx.select("s", &name, &value).await;
        out.push(b.to_string());
        let (_, c) = fx.call("GET", "/v1/search?q=chair%20oak&k=20", None).await;
        out.push(c.to_string());
        out
    };
    let e = env();
    let first = script(Fixture::with(e.clone(), ServiceConfig::default())).await;
    let second = script(Fixture::with(e, ServiceConfig::default())).await;
    assert_eq!(first, second);
}

#[tokio::test]
async fn health_and_search() {
    let fx = Fixture::new();
    let (status, h) = fx.call("GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h, json!({ "status": "ok" }));
    let (_, s) = fx.call("GET", "/v1/search?q=dress", None).await;
    let results = s["results"].as_array().unwrap();
    assert_eq!(results.len(), fx.svc.config().search_k);
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}
