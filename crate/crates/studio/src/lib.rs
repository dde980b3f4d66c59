//! Backend for the pair-labeling page.
//!
//! | Route | |
//! |---|---|
//! | `GET /api/images` | every corpus entry, sorted by id |
//! | `GET /api/session` | a random reference and the other images shuffled |
//! | `POST /api/pairs` | `{"referenceId","similarId","dissimilarId","timestamp"?}`, appends two pairs |
//! | `POST /api/submit` | flushes the pair file, returns `{"pairs","total"}` |
//! | `GET /img/<relpath>` | the image file itself |
//!
//! An annotation always yields two lines in the pair file: the reference
//! with the similar image (label 1) and with the dissimilar one (label 0).

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

mod corpus;
mod store;

pub use corpus::{Corpus, CorpusEntry};
pub use store::PairLog;

#[derive(Debug, Error)]
pub enum StudioError {
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StudioError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StudioError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudioConfig {
    pub images: PathBuf,
    pub out: PathBuf,
    /// Fixes the session generator; `None` seeds from the OS.
    pub seed: Option<u64>,
}

struct AppState {
    corpus: Result<Corpus, String>,
    rng: Mutex<ChaCha8Rng>,
    log: Mutex<PairLog>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Annotation {
    reference_id: String,
    similar_id: String,
    dissimilar_id: String,
    #[serde(default)]
    #[allow(dead_code)]
    timestamp: Option<serde_json::Value>,
}

#[derive(Serialize)]
struct Session<'a> {
    reference: &'a CorpusEntry,
    grid: Vec<&'a CorpusEntry>,
}

/// Scans the corpus and opens the pair file. A corpus that cannot be read
/// is reported by `/api/images` rather than here, so the server still starts.
pub fn app(cfg: &StudioConfig) -> Result<Router, StudioError> {
    let corpus = Corpus::scan(&cfg.images).map_err(|e| {
        log::error!("{e}");
        e.to_string()
    });
    if let Ok(c) = &corpus {
        log::info!("serving {} images from {}", c.len(), cfg.images.display());
    }
    let rng = match cfg.seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_os_rng(),
    };
    let state = Arc::new(AppState {
        corpus,
        rng: Mutex::new(rng),
        log: Mutex::new(PairLog::open(&cfg.out)?),
    });
    Ok(Router::new()
        .route("/api/images", get(images))
        .route("/api/session", get(session))
        .route("/api/pairs", post(pairs))
        .route("/api/submit", post(submit))
        .route("/img/{*relpath}", get(image_file))
        .with_state(state))
}

/// Serves until the process is stopped.
pub fn serve_blocking(addr: SocketAddr, cfg: &StudioConfig) -> Result<(), StudioError> {
    let router = app(cfg)?;
    let listener = bind(addr)?;
    log::info!("listening on http://{}", listener.local_addr().unwrap_or(addr));
    run(listener, router, std::future::pending())
}

/// A server on a background thread, stopped when dropped.
pub struct RunningStudio {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), StudioError>>>,
}

impl RunningStudio {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(addr: SocketAddr, cfg: &StudioConfig) -> Result<Self, StudioError> {
        let router = app(cfg)?;
        let listener = bind(addr)?;
        let addr = listener.local_addr().map_err(|e| StudioError::io(addr.to_string(), e))?;
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            run(listener, router, async {
                let _ = stopped.await;
            })
        });
        Ok(RunningStudio {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn stop(mut self) -> Result<(), StudioError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), StudioError> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().expect("server thread panicked"),
            None => Ok(()),
        }
    }
}

impl Drop for RunningStudio {
    fn drop(&mut self) {
        if let Err(e) = self.shutdown() {
            log::error!("{e}");
        }
    }
}

fn bind(addr: SocketAddr) -> Result<std::net::TcpListener, StudioError> {
    let io = |e| StudioError::io(addr.to_string(), e);
    let listener = std::net::TcpListener::bind(addr).map_err(io)?;
    listener.set_nonblocking(true).map_err(io)?;
    Ok(listener)
}

fn run(
    listener: std::net::TcpListener,
    router: Router,
    until: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), StudioError> {
    let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
    let io = |e| StudioError::io(&addr, e);
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(io)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::from_std(listener).map_err(io)?;
        axum::serve(listener, router)
            .with_graceful_shutdown(until)
            .await
            .map_err(io)
    })
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn corpus_or_500(state: &AppState) -> Result<&Corpus, Response> {
    state
        .corpus
        .as_ref()
        .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.clone()))
}

async fn images(State(state): State<Arc<AppState>>) -> Response {
    match corpus_or_500(&state) {
        Ok(c) => Json(c.entries().collect::<Vec<_>>()).into_response(),
        Err(r) => r,
    }
}

async fn session(State(state): State<Arc<AppState>>) -> Response {
    let corpus = match corpus_or_500(&state) {
        Ok(c) => c,
        Err(r) => return r,
    };
    if corpus.len() < 3 {
        return error(
            StatusCode::CONFLICT,
            format!("a session needs at least 3 images, the corpus has {}", corpus.len()),
        );
    }
    let all: Vec<&CorpusEntry> = corpus.entries().collect();
    let mut rng = state.rng.lock().unwrap();
    let r = rng.random_range(0..all.len());
    let mut grid: Vec<&CorpusEntry> = all.iter().enumerate().filter(|&(i, _)| i != r).map(|(_, e)| *e).collect();
    grid.shuffle(&mut *rng);
    Json(Session { reference: all[r], grid }).into_response()
}

fn counts(log: &PairLog) -> serde_json::Value {
    json!({ "pairs": log.session_pairs(), "total": log.total_pairs() })
}

async fn pairs(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let corpus = match corpus_or_500(&state) {
        Ok(c) => c,
        Err(r) => return r,
    };
    let a: Annotation = match serde_json::from_slice(&body) {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed annotation: {e}")),
    };
    let ids = [&a.reference_id, &a.similar_id, &a.dissimilar_id];
    if let Some(unknown) = ids.iter().find(|id| corpus.get(id).is_none()) {
        return error(StatusCode::BAD_REQUEST, format!("unknown image id {unknown:?}"));
    }
    if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
        return error(StatusCode::BAD_REQUEST, "reference, similar and dissimilar ids must differ");
    }
    let mut log = state.log.lock().unwrap();
    match log.append(&a.reference_id, &a.similar_id, &a.dissimilar_id) {
        Ok(()) => (StatusCode::CREATED, Json(counts(&log))).into_response(),
        Err(e) => {
            log::error!("{e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
    }
}

async fn submit(State(state): State<Arc<AppState>>) -> Response {
    let mut log = state.log.lock().unwrap();
    match log.flush() {
        Ok(()) => Json(counts(&log)).into_response(),
        Err(e) => {
            log::error!("{e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
    }
}

async fn image_file(State(state): State<Arc<AppState>>, Path(relpath): Path<String>) -> Response {
    let corpus = match corpus_or_500(&state) {
        Ok(c) => c,
        Err(r) => return r,
    };
    let Some(path) = corpus.path_of(&relpath) else {
        return error(StatusCode::NOT_FOUND, format!("no image {relpath:?}"));
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => (
            [
                (header::CONTENT_TYPE, "image/png"),
                (header::CACHE_CONTROL, "public, max-age=3600"),
            ],
            bytes,
        )
            .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())),
    }
}
