//! JSON-over-HTTP routes for [`FacetService`].

use std::sync::Arc;
use std::time::Instant;

use axum::extract::{Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::service::{ApiError, FacetService, FacetsRequest, ModeRequest, SelectRequest};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = Arc<FacetService>;

/// Runs blocking service work off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn facets(State(svc): State<Shared>, Json(req): Json<FacetsRequest>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || svc.handle_facets(&req)).await?))
}

async fn select(State(svc): State<Shared>, Json(req): Json<SelectRequest>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || svc.handle_select(&req)).await?))
}

#[derive(Deserialize)]
struct SearchParams {
    q: String,
    k: Option<usize>,
}

async fn search(State(svc): State<Shared>, Query(p): Query<SearchParams>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(move || svc.handle_search(&p.q, p.k)).await?))
}

async fn mode(State(svc): State<Shared>, Json(req): Json<ModeRequest>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.handle_mode(&req)?))
}

async fn healthz() -> impl IntoResponse {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn log_latency(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let resp = next.run(req).await;
    log::info!("{method} {path} {} {:.2}ms", resp.status().as_u16(), start.elapsed().as_secs_f64() * 1e3);
    resp
}

pub fn router(svc: Shared) -> Router {
    Router::new()
        .route("/v1/facets", post(facets))
        .route("/v1/select", post(select))
        .route("/v1/search", get(search))
        .route("/v1/mode", post(mode))
        .route("/healthz", get(healthz))
        .layer(middleware::from_fn(log_latency))
        .with_state(svc)
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(svc: Shared, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
