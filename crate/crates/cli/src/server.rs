//! HTTP routes over [`ServiceState`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::{ApiError, ApiResult, ServiceState};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Parses a JSON body, naming the offending field on failure.
pub fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        ApiError::bad_request(field.as_deref(), e.into_inner().to_string())
    })
}

type Handler<Req, Resp> = fn(&ServiceState, Req) -> ApiResult<Resp>;

/// Sampling is CPU bound, so it runs on the blocking pool.
async fn run<Req, Resp>(
    state: Arc<ServiceState>,
    body: Bytes,
    handler: Handler<Req, Resp>,
) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    let req = match parse_body::<Req>(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match tokio::task::spawn_blocking(move || handler(&state, req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("worker failed: {e}"),
        )
            .into_response(),
    }
}

macro_rules! route {
    ($method:ident) => {
        |State(s): State<Arc<ServiceState>>, body: Bytes| async move {
            run(s, body, ServiceState::$method).await
        }
    };
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route(
            "/health",
            get(|State(s): State<Arc<ServiceState>>| async move { Json(s.health()) }),
        )
        .route(
            "/vocab",
            get(|State(s): State<Arc<ServiceState>>| async move { Json(s.vocab()) }),
        )
        .route("/generate", post(route!(generate)))
        .route("/complete", post(route!(complete)))
        .route("/rearrange", post(route!(rearrange)))
        .route("/coarse", post(route!(coarse)))
        .route("/sse-select", post(route!(sse_select)))
        .route("/retrieve", post(route!(retrieve)))
        .with_state(state)
}

pub async fn serve(state: Arc<ServiceState>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
