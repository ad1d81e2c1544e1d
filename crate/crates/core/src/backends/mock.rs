//! A minimal in-process HTTP/1.1 server speaking the completions wire shape,
//! for exercising [`HttpBackend`](super::HttpBackend) without a network.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};

use super::rules::{RuleBackend, JUDGE_QUESTION_PREFIX};
use super::{CompletionRequest, JudgmentRequest};

#[derive(Debug, Clone)]
pub struct MockRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

#[derive(Debug, Clone)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    pub fn json(body: Value) -> Self {
        Self {
            status: 200,
            body: body.to_string(),
        }
    }

    pub fn status(status: u16, body: &str) -> Self {
        Self {
            status,
            body: body.to_string(),
        }
    }
}

type Handler = dyn Fn(&MockRequest) -> MockResponse + Send + Sync;

pub struct MockServer {
    addr: SocketAddr,
    hits: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&MockRequest) -> MockResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let addr = listener.local_addr().expect("local addr");
        let hits = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let (h, s) = (hits.clone(), stop.clone());
        let handle = thread::spawn(move || {
            for conn in listener.incoming() {
                if s.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let (handler, hits) = (handler.clone(), h.clone());
                thread::spawn(move || serve(stream, &*handler, &hits));
            }
        });
        Self {
            addr,
            hits,
            stop,
            handle: Some(handle),
        }
    }

    /// Answers completions with the rule proposer and judgments with the rule
    /// judge, so recorded transcripts are meaningful.
    pub fn rule_oracle() -> Self {
        let rule = RuleBackend::default();
        Self::start(move |req| {
            let prompt = req.body["prompt"]
                .as_str()
                .or_else(|| req.body["messages"][0]["content"].as_str())
                .unwrap_or_default()
                .to_string();
            let n = req.body["n"].as_u64().unwrap_or(1) as usize;
            let texts = if prompt.starts_with(JUDGE_QUESTION_PREFIX) {
                let (question, context) = prompt.split_once('\n').unwrap_or((&prompt, ""));
                vec![rule.rule_judge(&JudgmentRequest {
                    question: question.to_string(),
                    context: context.to_string(),
                })]
            } else {
                let creq = CompletionRequest {
                    prompt,
                    n,
                    max_tokens: 32,
                    temperature: 0.0,
                    stop: Vec::new(),
                    forbidden_tokens: Vec::new(),
                };
                match rule.rule_propose(&creq) {
                    Ok(v) => v,
                    Err(e) => return MockResponse::status(400, &e.to_string()),
                }
            };
            MockResponse::json(completion_body(&texts))
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// `{"choices": [{"index": i, "text": t}, ...]}`
pub fn completion_body(texts: &[String]) -> Value {
    json!({
        "choices": texts
            .iter()
            .enumerate()
            .map(|(i, t)| json!({"index": i, "text": t}))
            .collect::<Vec<_>>()
    })
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Status",
    }
}

fn serve(stream: TcpStream, handler: &Handler, hits: &AtomicUsize) {
    let mut reader = BufReader::new(match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    });
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 {
            break;
        }
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
            if k == "content-length" {
                len = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    hits.fetch_add(1, Ordering::SeqCst);
    let req = MockRequest {
        method,
        path,
        headers,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    };
    let resp = handler(&req);
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {} {}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
        resp.status,
        reason(resp.status),
        resp.body.len(),
        resp.body
    );
    let _ = out.flush();
}
