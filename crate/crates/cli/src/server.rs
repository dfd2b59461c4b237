//! Read-only HTTP service over a loaded index.
//!
//! `POST /query` and `POST /generate` take `{"query": str, "k": int}`;
//! `GET /healthz` reports the index size. A pool of worker threads pulls
//! requests off one listener; the index is never mutated after loading.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::{CliError, Pipeline, RunConfig};

const MAX_BODY: u64 = 1 << 20;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryBody {
    query: String,
    k: Option<usize>,
}

pub struct ServiceState {
    config: RunConfig,
    pipeline: RwLock<Option<Arc<Pipeline>>>,
    error_seq: AtomicU64,
}

impl ServiceState {
    /// Loads the configured index if it exists. A missing index is not an
    /// error here: the service answers 503 until the file appears.
    pub fn new(config: RunConfig) -> Result<Self, CliError> {
        let state = ServiceState {
            config,
            pipeline: RwLock::new(None),
            error_seq: AtomicU64::new(0),
        };
        if state.config.index.exists() {
            state.install(Pipeline::open(&state.config)?.with_generator()?);
        } else {
            log::warn!("index {} not found; serving 503 until it exists", state.config.index.display());
        }
        Ok(state)
    }

    pub fn from_pipeline(pipeline: Pipeline) -> Self {
        let state = ServiceState {
            config: pipeline.config.clone(),
            pipeline: RwLock::new(None),
            error_seq: AtomicU64::new(0),
        };
        state.install(pipeline);
        state
    }

    fn install(&self, pipeline: Pipeline) {
        *self.pipeline.write().expect("pipeline lock") = Some(Arc::new(pipeline));
    }

    fn current(&self) -> Result<Option<Arc<Pipeline>>, CliError> {
        if let Some(p) = self.pipeline.read().expect("pipeline lock").as_ref() {
            return Ok(Some(Arc::clone(p)));
        }
        if !self.config.index.exists() {
            return Ok(None);
        }
        let mut slot = self.pipeline.write().expect("pipeline lock");
        if slot.is_none() {
            *slot = Some(Arc::new(Pipeline::open(&self.config)?.with_generator()?));
        }
        Ok(slot.clone())
    }

    fn next_error_id(&self) -> String {
        let seq = self.error_seq.fetch_add(1, Ordering::Relaxed);
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.subsec_nanos())
            .unwrap_or(0);
        format!("{nanos:08x}-{seq:04x}")
    }
}

struct Reply {
    status: u16,
    body: Value,
}

impl Reply {
    fn ok(body: Value) -> Self {
        Reply { status: 200, body }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Reply {
            status,
            body: json!({"error": message.into()}),
        }
    }
}

fn is_client_error(e: &CliError) -> bool {
    matches!(e.class(), "UsageError" | "EmptyText" | "ParseError")
}

fn handle(state: &ServiceState, request: &mut Request) -> Reply {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let method = request.method().clone();
    match (&method, path.as_str()) {
        (Method::Get, "/healthz") => healthz(state),
        (Method::Post, "/query") | (Method::Post, "/generate") => {
            let body = match read_body(request) {
                Ok(b) => b,
                Err(msg) => return Reply::error(400, msg),
            };
            let pipeline = match state.current() {
                Ok(Some(p)) => p,
                Ok(None) => return Reply::error(503, "index not loaded"),
                Err(e) => return internal(state, &e),
            };
            let k = body.k.unwrap_or(state.config.k);
            let result = if path == "/query" {
                pipeline
                    .retrieve(&body.query, k)
                    .map(|hits| serde_json::to_value(hits).expect("hits serialize"))
            } else {
                pipeline
                    .answer(&body.query, k)
                    .map(|(a, _)| serde_json::to_value(a).expect("answer serializes"))
            };
            match result {
                Ok(v) => Reply::ok(v),
                Err(e) if is_client_error(&e) => Reply::error(400, e.render()),
                Err(e) => internal(state, &e),
            }
        }
        (_, "/healthz") | (_, "/query") | (_, "/generate") => Reply::error(405, "method not allowed"),
        _ => Reply::error(404, "not found"),
    }
}

fn healthz(state: &ServiceState) -> Reply {
    match state.current() {
        Ok(Some(p)) => Reply::ok(json!({
            "status": "ok",
            "index_size": p.index.len(),
            "embedding_dim": p.index.dim(),
        })),
        Ok(None) => Reply {
            status: 503,
            body: json!({"status": "unavailable", "index_size": 0, "embedding_dim": Value::Null}),
        },
        Err(e) => internal(state, &e),
    }
}

fn internal(state: &ServiceState, e: &CliError) -> Reply {
    let id = state.next_error_id();
    log::error!("request {id} failed: {}", e.render());
    Reply {
        status: 500,
        body: json!({"error": "internal error", "id": id}),
    }
}

fn read_body(request: &mut Request) -> Result<QueryBody, String> {
    let mut raw = String::new();
    request
        .as_reader()
        .take(MAX_BODY)
        .read_to_string(&mut raw)
        .map_err(|e| format!("unreadable body: {e}"))?;
    serde_json::from_str(&raw).map_err(|e| format!("malformed body: {e}"))
}

fn respond(request: Request, reply: Reply) {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = Response::from_string(reply.body.to_string())
        .with_status_code(reply.status)
        .with_header(header);
    if let Err(e) = request.respond(response) {
        log::debug!("client went away: {e}");
    }
}

fn worker(server: Arc<Server>, state: Arc<ServiceState>) {
    while let Ok(mut request) = server.recv() {
        let reply = handle(&state, &mut request);
        log::info!("{} {} -> {}", request.method(), request.url(), reply.status);
        respond(request, reply);
    }
}

/// A running service; dropping it stops the workers.
pub struct ServiceHandle {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Binds `bind` and starts `workers` request threads.
pub fn spawn(state: ServiceState, bind: &str, workers: usize) -> Result<ServiceHandle, CliError> {
    let server = Server::http(bind).map_err(|e| CliError::Server(format!("cannot bind {bind}: {e}")))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| CliError::Server(format!("{bind} is not an IP address")))?;
    let server = Arc::new(server);
    let state = Arc::new(state);
    let workers = (0..workers.max(1))
        .map(|i| {
            let (server, state) = (Arc::clone(&server), Arc::clone(&state));
            std::thread::Builder::new()
                .name(format!("grag-http-{i}"))
                .spawn(move || worker(server, state))
                .map_err(|e| CliError::Server(format!("cannot start worker: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ServiceHandle { server, workers, addr })
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}
