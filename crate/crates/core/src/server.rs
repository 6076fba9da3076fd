//! Local HTTP + websocket service around an [`Engine`].
//!
//! Routes:
//! - `GET /garments` catalog and current selection
//! - `POST /garments/select` with `{"garment_id": ...}`
//! - `GET /garments/{id}/preview` preview PNG when the catalog has one
//! - `GET /stats` fps and mean stage latencies over the last second
//! - `GET /stream` websocket; binary frame messages both ways, see
//!   [`encode_frame_message`](crate::engine::encode_frame_message)

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::engine::{
    decode_frame_message, encode_frame_message, run_session_with_ids, GarmentCatalogEntry, Service, SessionMode,
    StatsSnapshot,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogResponse {
    pub garments: Vec<GarmentCatalogEntry>,
    pub selected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub garment_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectResponse {
    pub garment_id: String,
    /// first frame id rendered with the new garment
    pub effective_from_frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    #[serde(flatten)]
    pub stats: StatsSnapshot,
    pub selected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

fn error_response(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorResponse { error: msg.into() })).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/garments", get(garments))
        .route("/garments/select", post(select))
        .route("/garments/{id}/preview", get(preview))
        .route("/stats", get(stats))
        .route("/stream", get(stream))
        .with_state(service)
}

async fn garments(State(svc): State<Arc<Service>>) -> Json<CatalogResponse> {
    Json(CatalogResponse {
        garments: svc.engine.catalog.entries(),
        selected: svc.engine.selection.current().entry.garment_id.clone(),
    })
}

async fn select(State(svc): State<Arc<Service>>, Json(req): Json<SelectRequest>) -> Response {
    match svc.engine.select(&req.garment_id) {
        Ok(from) => {
            log::info!("selected {} from frame {from}", req.garment_id);
            Json(SelectResponse {
                garment_id: req.garment_id,
                effective_from_frame: from,
            })
            .into_response()
        }
        Err(e) => error_response(StatusCode::NOT_FOUND, e.to_string()),
    }
}

async fn preview(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match svc.preview_png(&id) {
        Some(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        None => error_response(StatusCode::NOT_FOUND, format!("no preview for {id:?}")),
    }
}

async fn stats(State(svc): State<Arc<Service>>) -> Json<StatsResponse> {
    Json(StatsResponse {
        stats: svc.engine.stats.snapshot(),
        selected: svc.engine.selection.current().entry.garment_id.clone(),
    })
}

async fn stream(ws: WebSocketUpgrade, State(svc): State<Arc<Service>>) -> Response {
    ws.on_upgrade(move |socket| handle_stream(svc, socket))
}

async fn handle_stream(svc: Arc<Service>, mut socket: WebSocket) {
    let (in_tx, in_rx) = crossbeam_channel::unbounded();
    let (out_tx, mut out_rx) = mpsc::channel::<Vec<u8>>(4);
    let session_svc = Arc::clone(&svc);
    let session = std::thread::spawn(move || {
        run_session_with_ids(
            &session_svc.engine,
            move || Ok(in_rx.recv().ok()),
            SessionMode::Live,
            |r| {
                let msg = encode_frame_message(r.frame_id, &r.output)?;
                // a vanished client is noticed on the inbound side
                let _ = out_tx.blocking_send(msg);
                Ok(())
            },
        )
    });
    // dropped when the client stops sending, which ends the session once drained
    let mut in_tx = Some(in_tx);
    loop {
        tokio::select! {
            msg = socket.recv(), if in_tx.is_some() => match msg {
                Some(Ok(Message::Binary(bytes))) => match decode_frame_message(&bytes) {
                    Ok(frame) => {
                        if let Some(tx) = &in_tx {
                            let _ = tx.send(frame);
                        }
                    }
                    Err(e) => {
                        let text = serde_json::to_string(&ErrorResponse { error: e.to_string() }).unwrap_or_default();
                        if socket.send(Message::Text(text.into())).await.is_err() {
                            in_tx = None;
                        }
                    }
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => in_tx = None,
                Some(Ok(_)) => {}
            },
            out = out_rx.recv() => match out {
                Some(bytes) => {
                    if socket.send(Message::Binary(bytes.into())).await.is_err() {
                        in_tx = None;
                    }
                }
                None => break,
            },
        }
    }
    match tokio::task::spawn_blocking(move || session.join()).await {
        Ok(Ok(Ok(summary))) => log::info!(
            "stream closed: {} frames in, {} out, {} dropped",
            summary.frames_in,
            summary.frames_out,
            summary.dropped
        ),
        Ok(Ok(Err(e))) => log::warn!("stream session failed: {e}"),
        _ => log::warn!("stream session panicked"),
    }
}

/// Serve on an already bound listener until the process exits.
pub async fn serve_listener(service: Arc<Service>, listener: tokio::net::TcpListener) -> Result<()> {
    axum::serve(listener, router(service))
        .await
        .map_err(|e| Error::backend(format!("server stopped: {e}")))
}

/// Blocking entry point for the CLI.
pub fn serve(service: Arc<Service>, addr: SocketAddr) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::backend(format!("async runtime: {e}")))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::config(format!("cannot bind {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| Error::backend(e.to_string()))?;
        log::info!("listening on http://{bound}");
        println!("listening on http://{bound}");
        serve_listener(service, listener).await
    })
}
