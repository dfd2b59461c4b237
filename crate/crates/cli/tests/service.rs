mod common;

use std::thread;

use common::*;
use grag_cli::server::{spawn, ServiceHandle, ServiceState};
use grag_core::RankedHits;
use serde_json::{json, Value};

fn start(cfg: grag_cli::RunConfig) -> ServiceHandle {
    spawn(ServiceState::new(cfg).unwrap(), "127.0.0.1:0", 4).unwrap()
}

fn url(h: &ServiceHandle, path: &str) -> String {
    format!("http://{}{path}", h.addr())
}

/// Status and JSON body, whatever the status.
fn call(req: ureq::Request, body: Option<&str>) -> (u16, Value) {
    let resp = match body {
        Some(b) => req.set("Content-Type", "application/json").send_string(b),
        None => req.call(),
    };
    let resp = match resp {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("transport error: {e}"),
    };
    (resp.status(), resp.into_json().unwrap())
}

fn post(h: &ServiceHandle, path: &str, body: &str) -> (u16, Value) {
    call(ureq::post(&url(h, path)), Some(body))
}

#[test]
fn healthz_reports_the_loaded_index() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(ingest_bundled(dir.path()));
    let (status, body) = call(ureq::get(&url(&h, "/healthz")), None);
    assert_eq!(status, 200);
    assert_eq!(body, json!({"status": "ok", "index_size": 60, "embedding_dim": 64}));
}

#[test]
fn query_matches_the_cli_and_clamps_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ingest_bundled(dir.path());
    let h = start(cfg.clone());

    let (status, body) = post(&h, "/query", r#"{"query": "red planet dust", "k": 4}"#);
    assert_eq!(status, 200);
    let served: RankedHits = serde_json::from_value(body).unwrap();
    let mut cli_cfg = cfg.clone();
    cli_cfg.k = 4;
    let cli: RankedHits = serde_json::from_str(&grag_cli::cmd_query(&cli_cfg, "red planet dust", true).unwrap()).unwrap();
    assert_eq!(served, cli);

    let (status, body) = post(&h, "/query", r#"{"query": "red planet dust", "k": 1000}"#);
    assert_eq!(status, 200);
    assert_eq!(body["hits"].as_array().unwrap().len(), 60);

    let (_, body) = post(&h, "/query", r#"{"query": "red planet dust"}"#);
    assert_eq!(body["hits"].as_array().unwrap().len(), cfg.k);
}

#[test]
fn generate_returns_answer_ids_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ingest_bundled(dir.path());
    let h = start(cfg.clone());
    let (status, body) = post(&h, "/generate", r#"{"query": "Who painted the Mona Lisa?", "k": 3}"#);
    assert_eq!(status, 200);
    assert_eq!(body["fragment_ids"].as_array().unwrap().len(), 3);
    assert_eq!(body["scores"].as_array().unwrap().len(), 3);

    let mut cli_cfg = cfg;
    cli_cfg.k = 3;
    let cli = grag_cli::cmd_generate(&cli_cfg, "Who painted the Mona Lisa?", false).unwrap();
    assert_eq!(body["answer"].as_str().unwrap(), cli.lines().next().unwrap());
}

#[test]
fn bad_requests_get_400() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(ingest_bundled(dir.path()));
    for body in ["{not json", r#"{"k": 3}"#, r#"{"query": "x", "k": -1}"#, r#"{"query": "x", "extra": 1}"#] {
        let (status, resp) = post(&h, "/query", body);
        assert_eq!(status, 400, "{body}");
        assert!(resp["error"].is_string());
    }
    let (status, resp) = post(&h, "/query", r#"{"query": "river", "k": 0}"#);
    assert_eq!(status, 400);
    assert!(resp["error"].as_str().unwrap().contains("UsageError"));
    let (status, _) = post(&h, "/generate", r#"{"query": "?!?", "k": 2}"#);
    assert_eq!(status, 400);
}

#[test]
fn routing_errors() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(ingest_bundled(dir.path()));
    assert_eq!(call(ureq::get(&url(&h, "/nope")), None).0, 404);
    assert_eq!(call(ureq::get(&url(&h, "/query")), None).0, 405);
}

#[test]
fn absent_index_is_503_until_it_appears() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Some(&bundled_corpus()), &dir.path().join("later.grag"));
    let h = start(cfg.clone());
    assert_eq!(call(ureq::get(&url(&h, "/healthz")), None).0, 503);
    assert_eq!(post(&h, "/query", r#"{"query": "river", "k": 1}"#).0, 503);

    grag_cli::cmd_ingest(&cfg).unwrap();
    let (status, body) = call(ureq::get(&url(&h, "/healthz")), None);
    assert_eq!(status, 200);
    assert_eq!(body["index_size"], 60);
}

#[test]
fn internal_faults_are_opaque() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(None, &dir.path().join("broken.grag"));
    let h = start(cfg.clone());
    std::fs::write(&cfg.index, b"GRAGIDX\0 truncated").unwrap();
    let (status, body) = post(&h, "/query", r#"{"query": "river", "k": 1}"#);
    assert_eq!(status, 500);
    assert_eq!(body["error"], "internal error");
    assert!(body["id"].is_string());
    assert!(!body.to_string().contains("CorruptIndex"));
}

#[test]
fn concurrent_queries_agree() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(ingest_bundled(dir.path()));
    let expected = post(&h, "/query", r#"{"query": "ocean trench", "k": 5}"#).1;
    let addr = h.addr();
    let threads: Vec<_> = (0..16)
        .map(|_| {
            thread::spawn(move || {
                let resp = ureq::post(&format!("http://{addr}/query"))
                    .send_string(r#"{"query": "ocean trench", "k": 5}"#)
                    .unwrap();
                resp.into_json::<Value>().unwrap()
            })
        })
        .collect();
    for t in threads {
        assert_eq!(t.join().unwrap(), expected);
    }
}
