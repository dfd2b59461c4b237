#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use grag_cli::{FlagOverrides, RunConfig};

pub fn bundled_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic_corpus.jsonl")
}

pub fn grag(args: &[&str]) -> Output {
    grag_env(args, &[])
}

/// Runs the binary with `GRAG_LLM_*` cleared, then `env` applied.
pub fn grag_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_grag"));
    cmd.args(args)
        .env_remove("GRAG_LLM_ENDPOINT")
        .env_remove("GRAG_LLM_MODEL")
        .env_remove("GRAG_LLM_API_KEY")
        .env_remove("RUST_LOG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("grag binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn config(corpus: Option<&Path>, index: &Path) -> RunConfig {
    RunConfig::resolve(
        None,
        FlagOverrides {
            corpus: corpus.map(Path::to_path_buf),
            index: Some(index.to_path_buf()),
            ..Default::default()
        },
    )
    .unwrap()
}

/// Ingests the bundled corpus into `dir/index.grag`.
pub fn ingest_bundled(dir: &Path) -> RunConfig {
    let cfg = config(Some(&bundled_corpus()), &dir.join("index.grag"));
    grag_cli::cmd_ingest(&cfg).unwrap();
    cfg
}

pub fn write_corpus(dir: &Path, lines: &[String]) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

pub fn record(query: &str, frags: &[(&str, &str)], answer: &str) -> String {
    serde_json::json!({
        "query": query,
        "fragments": frags.iter().map(|(id, t)| serde_json::json!({"id": id, "text": t})).collect::<Vec<_>>(),
        "answer": answer,
    })
    .to_string()
}
