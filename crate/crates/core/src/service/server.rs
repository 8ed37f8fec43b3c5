//! HTTP routes and the `/live` WebSocket session.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hyper_util::rt::TokioIo;
use tokio::sync::{mpsc, oneshot};

use super::ws::{self, Message};
use super::{ClientMessage, Engine, PostprocRequest, ServiceConfig, ServiceError, ThresholdRequest};
use crate::synth::ExpressionParams;

struct ApiError(StatusCode, String);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type Shared = State<Arc<Engine>>;

async fn status(State(e): Shared) -> impl IntoResponse {
    Json(e.status())
}

async fn calibrate(State(e): Shared) -> impl IntoResponse {
    Json(serde_json::json!({ "mode": e.calibrate() }))
}

async fn threshold(State(e): Shared, Json(r): Json<ThresholdRequest>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(e.set_threshold(r)?))
}

async fn params(State(e): Shared, Json(p): Json<ExpressionParams>) -> Result<impl IntoResponse, ApiError> {
    e.set_params(p)?;
    Ok(Json(p))
}

#[derive(serde::Deserialize)]
struct LandmarksRequest {
    points: Vec<super::LandmarkOverride>,
    #[serde(default)]
    replace: bool,
}

async fn landmarks(State(e): Shared, Json(r): Json<LandmarksRequest>) -> Result<impl IntoResponse, ApiError> {
    e.set_overrides(&r.points, r.replace)?;
    Ok(Json(e.status().overrides))
}

async fn postproc(State(e): Shared, Json(r): Json<PostprocRequest>) -> Result<impl IntoResponse, ApiError> {
    e.set_postproc(r.into())?;
    Ok(Json(e.status().postproc))
}

async fn live(State(engine): Shared, mut req: Request) -> Response {
    let headers = req.headers();
    let upgrade = headers
        .get(header::UPGRADE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.eq_ignore_ascii_case("websocket"));
    let key = headers.get("sec-websocket-key").and_then(|v| v.to_str().ok()).map(str::to_owned);
    let (true, Some(key)) = (upgrade, key) else {
        return ApiError(StatusCode::UPGRADE_REQUIRED, "expected a websocket upgrade".into()).into_response();
    };
    let on_upgrade = hyper::upgrade::on(&mut req);
    tokio::spawn(async move {
        match on_upgrade.await {
            Ok(io) => session(TokioIo::new(io), engine).await,
            Err(e) => log::warn!("live upgrade failed: {e}"),
        }
    });
    Response::builder()
        .status(StatusCode::SWITCHING_PROTOCOLS)
        .header(header::UPGRADE, "websocket")
        .header(header::CONNECTION, "Upgrade")
        .header("sec-websocket-accept", ws::accept_key(&key))
        .body(Body::empty())
        .expect("static response")
}

fn error_message(message: impl std::fmt::Display) -> Message {
    Message::Text(serde_json::json!({ "type": "error", "message": message.to_string() }).to_string())
}

/// Frames go out on a fixed tick; client messages are applied as they
/// arrive and answered through the same writer.
async fn session<S>(io: S, engine: Arc<Engine>)
where
    S: tokio::io::AsyncRead + tokio::io::AsyncWrite + Send + 'static,
{
    let (rd, mut wr) = tokio::io::split(io);
    let mut rd = ws::Reader::new(rd);
    let (tx, mut rx) = mpsc::channel::<Message>(16);
    let reader_engine = Arc::clone(&engine);
    let reader = tokio::spawn(async move {
        loop {
            let reply = match rd.next().await {
                Ok(Message::Text(text)) => match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(m) => match reader_engine.handle(m) {
                        Ok(Some(v)) => Some(Message::Text(v.to_string())),
                        Ok(None) => None,
                        Err(e) => Some(error_message(e)),
                    },
                    Err(e) => Some(error_message(format!("bad message: {e}"))),
                },
                Ok(Message::Ping(p)) => Some(Message::Pong(p)),
                Ok(Message::Binary(_)) => Some(error_message("binary messages are not supported")),
                Ok(Message::Pong(_)) => None,
                Ok(Message::Close) | Err(_) => {
                    let _ = tx.send(Message::Close).await;
                    return;
                }
            };
            if let Some(r) = reply {
                if tx.send(r).await.is_err() {
                    return;
                }
            }
        }
    });
    let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / engine.config().preview_hz));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        let outgoing = tokio::select! {
            m = rx.recv() => m.unwrap_or(Message::Close),
            _ = tick.tick() => {
                if engine.is_stopped() {
                    Message::Close
                } else {
                    let e = Arc::clone(&engine);
                    match tokio::task::spawn_blocking(move || e.live_frame()).await {
                        Ok(v) => Message::Text(v.to_string()),
                        Err(_) => Message::Close,
                    }
                }
            }
        };
        let close = outgoing == Message::Close;
        if ws::write_message(&mut wr, &outgoing, None).await.is_err() || close {
            break;
        }
    }
    reader.abort();
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/calibrate", post(calibrate))
        .route("/threshold", post(threshold))
        .route("/params", post(params))
        .route("/landmarks", post(landmarks))
        .route("/postproc", post(postproc))
        .route("/live", get(live))
        .with_state(engine)
}

/// A running service; dropping it without [`ServiceHandle::shutdown`]
/// leaves the server running until the process ends.
pub struct ServiceHandle {
    addr: SocketAddr,
    engine: Arc<Engine>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<(), ServiceError>>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    /// Blocks until the server exits on Ctrl-C, then stops the loops.
    pub fn wait(mut self) -> Result<(), ServiceError> {
        let result = self.thread.take().map_or(Ok(()), |t| t.join().expect("server thread panicked"));
        self.engine.stop();
        result
    }

    pub fn shutdown(mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.wait()
    }
}

/// Starts the loops and binds the HTTP listener; an address in use is an
/// error here, not later.
pub fn spawn_service(config: ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    let bind_err = |source| ServiceError::Bind { addr: config.http_addr.clone(), source };
    let listener = std::net::TcpListener::bind(&config.http_addr).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let addr = listener.local_addr()?;
    let engine = Arc::new(Engine::start(config)?);
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::clone(&engine));
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let thread = std::thread::Builder::new().name("http".into()).spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            let stop = async {
                tokio::select! {
                    _ = rx => {},
                    _ = tokio::signal::ctrl_c() => log::info!("interrupted, shutting down"),
                }
            };
            axum::serve(listener, app).with_graceful_shutdown(stop).await?;
            Ok(())
        })
    })?;
    log::info!("listening on http://{addr}");
    Ok(ServiceHandle { addr, engine, shutdown: Some(tx), thread: Some(thread) })
}
