//! Plain-HTTP forward proxy that tags outgoing data-bearing requests with
//! the keystore's key and consent settings.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;

use fishnet_core::client::tag_outgoing_request;
use fishnet_core::request::HttpRequest;

use crate::error::{IoContext, Result};
use crate::keystore::Keystore;
use crate::ledger_http::direct_client;
use crate::unix_now;

const MAX_BODY: usize = 64 * 1024 * 1024;

// Connection-scoped headers are not forwarded.
const HOP_BY_HOP: [&str; 8] = [
    "connection",
    "proxy-connection",
    "keep-alive",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
];

struct ProxyState {
    keystore: Keystore,
    http: reqwest::Client,
}

fn forwarded_header(name: &str) -> bool {
    !HOP_BY_HOP.contains(&name) && name != "host" && name != "content-length"
}

fn failure(status: StatusCode, message: String) -> Response {
    tracing::warn!("{message}");
    (status, message).into_response()
}

async fn forward(State(state): State<Arc<ProxyState>>, req: Request) -> Response {
    let uri = req.uri().clone();
    if uri.scheme_str() != Some("http") {
        return failure(
            StatusCode::BAD_REQUEST,
            format!("only absolute http:// targets are proxied, got {uri}"),
        );
    }
    let method = req.method().clone();
    let headers = req.headers().clone();
    let body = match to_bytes(req.into_body(), MAX_BODY).await {
        Ok(b) => b,
        Err(e) => return failure(StatusCode::BAD_REQUEST, format!("request body: {e}")),
    };

    let mut outgoing = HttpRequest::new(method.as_str(), &uri.to_string()).body(body.to_vec());
    for (name, value) in &headers {
        if let (true, Ok(v)) = (forwarded_header(name.as_str()), value.to_str()) {
            outgoing.headers.insert(name.as_str(), v);
        }
    }
    if outgoing.carries_data() && !outgoing.body.is_empty() {
        // Keystore trouble blocks the request rather than sending it untagged.
        let settings = state.keystore.key().and_then(|k| Ok((k, state.keystore.config()?)));
        let (key, config) = match settings {
            Ok(s) => s,
            Err(e) => return failure(StatusCode::BAD_GATEWAY, format!("tagging unavailable: {e}")),
        };
        let (tagged, record) = tag_outgoing_request(outgoing, &key, &config, unix_now());
        if let Some(record) = record {
            if let Err(e) = state.keystore.append_record(&record) {
                return failure(StatusCode::BAD_GATEWAY, format!("could not record tag: {e}"));
            }
        }
        outgoing = tagged;
    }

    let mut upstream = state.http.request(method, uri.to_string());
    for (name, value) in outgoing.headers.iter() {
        upstream = upstream.header(name, value);
    }
    let resp = match upstream.body(outgoing.body).send().await {
        Ok(r) => r,
        Err(e) => return failure(StatusCode::BAD_GATEWAY, format!("upstream {uri}: {e}")),
    };
    let status = resp.status();
    let mut builder = Response::builder().status(status.as_u16());
    for (name, value) in resp.headers() {
        if forwarded_header(name.as_str()) {
            if let Ok(n) = HeaderName::from_bytes(name.as_str().as_bytes()) {
                builder = builder.header(n, value.as_bytes());
            }
        }
    }
    match resp.bytes().await {
        Ok(bytes) => builder
            .body(Body::from(bytes))
            .unwrap_or_else(|e| failure(StatusCode::BAD_GATEWAY, format!("bad upstream response: {e}"))),
        Err(e) => failure(StatusCode::BAD_GATEWAY, format!("upstream body: {e}")),
    }
}

pub fn router(keystore: Keystore) -> Router {
    let state = Arc::new(ProxyState {
        keystore,
        http: direct_client(),
    });
    Router::new().fallback(forward).with_state(state)
}

/// Binds and serves in the background; returns the bound address.
pub async fn spawn(keystore: Keystore, addr: SocketAddr) -> Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await.at(addr.to_string())?;
    let bound = listener.local_addr().at(addr.to_string())?;
    let app = router(keystore);
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("proxy stopped: {e}");
        }
    });
    Ok(bound)
}
