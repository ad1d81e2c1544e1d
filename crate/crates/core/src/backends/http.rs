//! OpenAI-compatible HTTP transport for both backend roles.

use std::collections::BTreeMap;
use std::env;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, CompletionBackend, CompletionRequest, JudgmentBackend, JudgmentRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteStyle {
    /// `POST {base}/completions` with a `prompt` field.
    Completions,
    /// `POST {base}/chat/completions` with a single user message.
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub route: RouteStyle,
    pub model: String,
    /// Name of the environment variable holding the bearer token. Tokens are
    /// never read from flags or files.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Total attempts per request, including the first.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Token ids per forbidden string, sent as `logit_bias: -100`. Strings
    /// without ids are only enforced after decoding.
    pub logit_bias: BTreeMap<String, Vec<u32>>,
    pub judge_max_tokens: u32,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            route: RouteStyle::Completions,
            model: String::new(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
            logit_bias: BTreeMap::new(),
            judge_max_tokens: 4,
        }
    }
}

pub struct HttpBackend {
    endpoint: EndpointConfig,
    agent: ureq::Agent,
    requests: AtomicUsize,
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    if body.chars().count() <= MAX {
        body.to_string()
    } else {
        let mut s: String = body.chars().take(MAX).collect();
        s.push('…');
        s
    }
}

impl HttpBackend {
    pub fn new(endpoint: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs.max(1))))
            .build()
            .into();
        Self {
            endpoint,
            agent,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    /// HTTP requests sent so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn url(&self) -> String {
        let base = self.endpoint.base_url.trim_end_matches('/');
        match self.endpoint.route {
            RouteStyle::Completions => format!("{base}/completions"),
            RouteStyle::Chat => format!("{base}/chat/completions"),
        }
    }

    fn credential(&self) -> Result<Option<String>, BackendError> {
        match &self.endpoint.api_key_env {
            None => Ok(None),
            Some(var) if var.is_empty() => Ok(None),
            Some(var) => env::var(var)
                .map(Some)
                .map_err(|_| BackendError::MissingCredential(var.clone())),
        }
    }

    fn body(&self, prompt: &str, n: usize, max_tokens: u32, temperature: f64, stop: &[String], forbidden: &[String]) -> Value {
        let mut body = json!({
            "model": self.endpoint.model,
            "n": n,
            "max_tokens": max_tokens,
            "temperature": temperature,
        });
        match self.endpoint.route {
            RouteStyle::Completions => body["prompt"] = json!(prompt),
            RouteStyle::Chat => body["messages"] = json!([{"role": "user", "content": prompt}]),
        }
        if !stop.is_empty() {
            body["stop"] = json!(stop);
        }
        let bias: BTreeMap<String, i32> = forbidden
            .iter()
            .filter_map(|t| self.endpoint.logit_bias.get(t))
            .flatten()
            .map(|id| (id.to_string(), -100))
            .collect();
        if !bias.is_empty() {
            body["logit_bias"] = json!(bias);
        }
        body
    }

    fn send_once(&self, url: &str, key: Option<&str>, body: &Value) -> Result<(u16, String), BackendError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(k) = key {
            req = req.header("authorization", format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok((status, text))
    }

    /// POST with exponential backoff on 429, 5xx and transport failures.
    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let url = self.url();
        let key = self.credential()?;
        let attempts = self.endpoint.retries.max(1);
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 1..=attempts {
            if attempt > 1 {
                let wait = self.endpoint.backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
                thread::sleep(Duration::from_millis(wait));
            }
            last = match self.send_once(&url, key.as_deref(), body) {
                Ok((200..=299, text)) => {
                    return serde_json::from_str(&text).map_err(|e| BackendError::Provider {
                        status: 200,
                        body: excerpt(&format!("{e}: {text}")),
                    });
                }
                Ok((status @ (401 | 403), text)) => {
                    return Err(BackendError::Auth {
                        status,
                        body: excerpt(&text),
                    })
                }
                Ok((429, _)) => BackendError::RateLimited { attempts: attempt },
                Ok((status, text)) => {
                    let e = BackendError::Provider {
                        status,
                        body: excerpt(&text),
                    };
                    if !e.is_transient() {
                        return Err(e);
                    }
                    e
                }
                Err(e) => e,
            };
        }
        Err(last)
    }

    fn choices(&self, resp: &Value) -> Result<Vec<String>, BackendError> {
        let malformed = || BackendError::Provider {
            status: 200,
            body: excerpt(&resp.to_string()),
        };
        let mut choices: Vec<(u64, String)> = resp["choices"]
            .as_array()
            .ok_or_else(malformed)?
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let text = match self.endpoint.route {
                    RouteStyle::Completions => c["text"].as_str(),
                    RouteStyle::Chat => c["message"]["content"].as_str(),
                };
                text.map(|t| (c["index"].as_u64().unwrap_or(i as u64), t.to_string()))
                    .ok_or_else(malformed)
            })
            .collect::<Result<_, _>>()?;
        choices.sort_by_key(|c| c.0);
        Ok(choices.into_iter().map(|c| c.1).collect())
    }

    pub fn http_complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        let body = self.body(&req.prompt, req.n, req.max_tokens, req.temperature, &req.stop, &req.forbidden_tokens);
        let resp = self.post(&body)?;
        self.choices(&resp)
    }

    /// The prompt puts the question first and the labeled pair after it.
    pub fn http_judge(&self, req: &JudgmentRequest) -> Result<String, BackendError> {
        let prompt = format!("{}\n{}", req.question, req.context);
        let body = self.body(&prompt, 1, self.endpoint.judge_max_tokens, 0.0, &[], &[]);
        let resp = self.post(&body)?;
        self.choices(&resp)?
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Provider {
                status: 200,
                body: "no choices".into(),
            })
    }
}

impl CompletionBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}#{}", self.endpoint.base_url, self.endpoint.model)
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>, BackendError> {
        self.http_complete(req)
    }
}

impl JudgmentBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}#{}", self.endpoint.base_url, self.endpoint.model)
    }

    fn judge(&self, req: &JudgmentRequest) -> Result<String, BackendError> {
        self.http_judge(req)
    }
}
