#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use gaterag::pipeline::{Mode, PipelineConfig};
use gaterag::simlab::{generate_world, ScriptedWorld, WorldSpec};

/// One request as seen by [`MockServer`].
#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).expect("request body is JSON")
    }
}

type Handler = dyn Fn(usize, &Recorded) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server on a loopback port. Every connection carries one
/// request; the handler sees the zero-based request index.
pub struct MockServer {
    pub url: String,
    log: Arc<Mutex<Vec<Recorded>>>,
}

impl MockServer {
    pub fn start(
        handler: impl Fn(usize, &Recorded) -> (u16, String) + Send + Sync + 'static,
    ) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let shared = log.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let log = shared.clone();
                let handler = handler.clone();
                thread::spawn(move || serve(stream, &log, handler.as_ref()));
            }
        });
        Self { url, log }
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.log.lock().unwrap().clone()
    }

    pub fn hits(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Recorded>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let len: usize = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    let req = Recorded {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let index = {
        let mut log = log.lock().unwrap();
        log.push(req.clone());
        log.len() - 1
    };
    let (status, payload) = handler(index, &req);
    let reply = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let mut stream = stream;
    let _ = stream.write_all(reply.as_bytes());
    let _ = stream.flush();
}

/// Chat-completion reply body carrying `text`.
pub fn chat_reply(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 2}
    })
    .to_string()
}

/// Config with distinct answerer and verifier model ids and no cache.
pub fn sim_config(mode: Mode, k: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        mode,
        k,
        ..PipelineConfig::default()
    };
    cfg.answerer.model = "sim-answerer".into();
    cfg.verifier.model = "sim-verifier".into();
    cfg.cache_dir = None;
    cfg
}

pub fn world(spec: WorldSpec, cfg: &PipelineConfig) -> ScriptedWorld {
    generate_world(&spec, cfg).expect("world generates")
}

pub fn spec(
    n: usize,
    coverage: f64,
    fidelity: f64,
    confusion: f64,
    noise: f64,
    seed: u64,
) -> WorldSpec {
    WorldSpec {
        n_questions: n,
        coverage,
        consistency_fidelity: fidelity,
        confusion_rate: confusion,
        retrieval_noise: noise,
        seed,
    }
}

pub mod oracles;
