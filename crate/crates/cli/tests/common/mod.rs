#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Artifacts that must match the committed golden copies byte for byte.
pub const GOLDEN_FILES: [&str; 12] = [
    "generations.jsonl",
    "filtered.jsonl",
    "filter_report.json",
    "triplets.jsonl",
    "triplets_report.json",
    "train.jsonl",
    "runs/bm25.run",
    "runs/rerank.run",
    "metrics/bm25.ndcg10.json",
    "metrics/bm25.recall100.json",
    "metrics/rerank.ndcg10.json",
    "metrics/rerank.recall100.json",
];

pub const STAGES: [&str; 7] = ["generate", "filter", "triplets", "export-train", "retrieve", "rerank", "evaluate"];

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mini")
}

/// A scratch copy of the bundled mini dataset and its config.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn mini() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let src = repo_root().join("data/mini");
        for rel in ["corpus.jsonl", "queries.jsonl", "qrels/train.tsv", "qrels/test.tsv", "mini.toml"] {
            let to = dir.path().join(rel);
            fs::create_dir_all(to.parent().unwrap()).unwrap();
            fs::copy(src.join(rel), to).unwrap();
        }
        Workspace { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self) -> PathBuf {
        self.path("mini.toml")
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.path("out").join(rel)
    }

    /// Rewrite the config with `edit` applied to its text.
    pub fn edit_config(&self, edit: impl FnOnce(String) -> String) {
        let text = fs::read_to_string(self.config()).unwrap();
        fs::write(self.config(), edit(text)).unwrap();
    }

    pub fn qgen(&self, args: &[&str]) -> Output {
        self.qgen_env(args, &[])
    }

    pub fn qgen_env(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_qgen"));
        cmd.arg("--config").arg(self.config()).args(args).env_remove("QGEN_FAULT_AFTER_EMITS");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }

    pub fn artifacts(&self) -> BTreeMap<&'static str, Vec<u8>> {
        GOLDEN_FILES
            .iter()
            .map(|rel| (*rel, fs::read(self.out(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))))
            .collect()
    }
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
    stdout(o)
}

pub fn golden() -> BTreeMap<&'static str, Vec<u8>> {
    GOLDEN_FILES
        .iter()
        .map(|rel| {
            let p = golden_dir().join(rel);
            (*rel, fs::read(&p).unwrap_or_else(|e| panic!("golden {}: {e}", p.display())))
        })
        .collect()
}

/// Names of artifacts that differ from the golden copies.
pub fn golden_mismatches(got: &BTreeMap<&'static str, Vec<u8>>) -> Vec<&'static str> {
    let want = golden();
    GOLDEN_FILES.iter().copied().filter(|rel| got.get(rel) != want.get(rel)).collect()
}

/// One-request-per-connection JSON server on a free local port. The
/// handler sees the request path and parsed body.
pub struct FakeServer {
    pub base: String,
    pub hits: std::sync::Arc<std::sync::Mutex<Vec<String>>>,
}

impl FakeServer {
    pub fn start(handler: impl Fn(&str, &serde_json::Value) -> (u16, serde_json::Value) + Send + Sync + 'static) -> Self {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let hits = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let log = std::sync::Arc::clone(&hits);
        let handler = std::sync::Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let handler = std::sync::Arc::clone(&handler);
                let log = std::sync::Arc::clone(&log);
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
                    let mut len = 0usize;
                    loop {
                        let mut h = String::new();
                        reader.read_line(&mut h).unwrap();
                        let h = h.trim_end();
                        if h.is_empty() {
                            break;
                        }
                        if let Some((name, value)) = h.split_once(':') {
                            if name.eq_ignore_ascii_case("content-length") {
                                len = value.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0; len];
                    reader.read_exact(&mut body).unwrap();
                    let body: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                    log.lock().unwrap().push(path.clone());
                    let (status, reply) = handler(&path, &body);
                    let payload = reply.to_string();
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                });
            }
        });
        FakeServer { base, hits }
    }

    pub fn count(&self, path: &str) -> usize {
        self.hits.lock().unwrap().iter().filter(|p| *p == path).count()
    }
}
