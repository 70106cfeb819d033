//! Minimal HTTP/1.1 stub of a completions endpoint for tests.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

pub type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

#[derive(Default)]
pub struct Observed {
    pub bodies: Mutex<Vec<Value>>,
    pub auth: Mutex<Vec<String>>,
    pub count: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
}

pub struct StubServer {
    pub url: String,
    pub observed: Arc<Observed>,
}

impl StubServer {
    /// Serves every connection on its own thread; `delay` is slept before
    /// answering so overlapping requests can be observed.
    pub fn start(handler: Arc<Handler>, delay: Duration) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let observed = Arc::new(Observed::default());
        let obs = observed.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (obs, handler) = (obs.clone(), handler.clone());
                thread::spawn(move || serve(stream, &obs, &*handler, delay));
            }
        });
        Self { url, observed }
    }

    pub fn requests(&self) -> usize {
        self.observed.count.load(Ordering::SeqCst)
    }

    pub fn max_concurrency(&self) -> usize {
        self.observed.max_in_flight.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, obs: &Observed, handler: &Handler, delay: Duration) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    let mut auth = String::new();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth = line["authorization:".len()..].trim().to_string();
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);

    let now = obs.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    obs.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let n = obs.count.fetch_add(1, Ordering::SeqCst);
    obs.bodies.lock().unwrap().push(body.clone());
    obs.auth.lock().unwrap().push(auth);
    thread::sleep(delay);
    let (status, text) = handler(n, &body);
    obs.in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut stream = stream;
    let head = format!(
        "HTTP/1.1 {status} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        text.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(text.as_bytes());
    let _ = stream.flush();
}

/// Vocabulary the fake model scores.
pub const VOCAB: [&str; 6] = [
    "\u{2581}Yes",
    "\u{2581}No",
    "Yes",
    "No",
    "\u{2581}Maybe",
    "the",
];

/// Deterministic raw logits for a prompt (FNV-1a hash spread over the vocab).
pub fn raw_logits(prompt: &str) -> Vec<f64> {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in prompt.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    (0..VOCAB.len())
        .map(|i| {
            let bits = (h.rotate_left(9 * i as u32) >> 40) as f64 / (1u64 << 24) as f64;
            8.0 * bits - 4.0 + i as f64 * 0.01
        })
        .collect()
}

/// Log-probabilities: logits minus their log-sum-exp.
pub fn logprobs(prompt: &str) -> Vec<(String, f64)> {
    let u = raw_logits(prompt);
    let max = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + u.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    VOCAB
        .iter()
        .zip(&u)
        .map(|(t, x)| (t.to_string(), x - lse))
        .collect()
}

/// Legacy completions response with the `top` most likely tokens, leaving
/// out any token listed in `hide`.
pub fn completion_response(prompt: &str, top: usize, hide: &[&str]) -> String {
    let mut lp: Vec<(String, f64)> = logprobs(prompt)
        .into_iter()
        .filter(|(t, _)| !hide.contains(&t.as_str()))
        .collect();
    lp.sort_by(|a, b| b.1.total_cmp(&a.1));
    lp.truncate(top);
    let map: serde_json::Map<String, Value> = lp.into_iter().map(|(t, v)| (t, json!(v))).collect();
    json!({
        "id": "cmpl-stub",
        "choices": [{"text": "x", "index": 0, "logprobs": {"top_logprobs": [map]}}]
    })
    .to_string()
}

/// Handler answering every request with the fake model.
pub fn model_handler(hide: &'static [&'static str]) -> Arc<Handler> {
    Arc::new(move |_, body: &Value| {
        let prompt = body["prompt"].as_str().unwrap_or_default();
        let top = body["logprobs"].as_u64().unwrap_or(5) as usize;
        (200, completion_response(prompt, top, hide))
    })
}
