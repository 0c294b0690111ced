//! Deterministic in-process server speaking the completions and embeddings
//! contracts. Used by tests, examples and offline CLI runs.
//!
//! Responses depend only on the request body, never on arrival order, so
//! results are identical across worker counts.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Fixed first-token table applied when `pattern` occurs in the prompt.
#[derive(Debug, Clone)]
pub struct LogprobRule {
    pub pattern: String,
    pub top_tokens: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct MockConfig {
    /// First matching rule wins; prompts matching no rule get a table
    /// derived from the prompt's SHA-256.
    pub logprob_rules: Vec<LogprobRule>,
    /// Exact-text embedding overrides.
    pub fixed_embeddings: HashMap<String, Vec<f64>>,
    pub embedding_dim: usize,
    /// Answer completions with `"logprobs": null`.
    pub omit_logprobs: bool,
    /// Fail this many requests with HTTP 503 before answering normally.
    pub fail_first: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            logprob_rules: Vec::new(),
            fixed_embeddings: HashMap::new(),
            embedding_dim: 32,
            omit_logprobs: false,
            fail_first: 0,
        }
    }
}

pub struct MockServer {
    base_url: String,
    requests: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds an ephemeral localhost port and starts serving.
    pub fn start(config: MockConfig) -> Result<MockServer> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| Error::Transport(format!("mock server bind: {e}")))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Transport("mock server has no IP address".into()))?;
        let server = Arc::new(server);
        let requests = Arc::new(AtomicUsize::new(0));
        let failures = Arc::new(AtomicUsize::new(0));
        let config = Arc::new(config);

        let handle = {
            let server = Arc::clone(&server);
            let requests = Arc::clone(&requests);
            std::thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    requests.fetch_add(1, Ordering::SeqCst);
                    let (status, body) = if failures.fetch_add(1, Ordering::SeqCst) < config.fail_first
                    {
                        (503, json!({"error": "temporarily unavailable"}))
                    } else {
                        let mut raw = String::new();
                        let _ = request.as_reader().read_to_string(&mut raw);
                        route(&config, request.url(), &raw)
                    };
                    let response = tiny_http::Response::from_string(body.to_string())
                        .with_status_code(status)
                        .with_header(
                            "Content-Type: application/json"
                                .parse::<tiny_http::Header>()
                                .expect("static header"),
                        );
                    let _ = request.respond(response);
                }
            })
        };

        Ok(MockServer {
            base_url: format!("http://127.0.0.1:{port}"),
            requests,
            server,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn completions_url(&self) -> String {
        format!("{}/v1/completions", self.base_url)
    }

    pub fn embeddings_url(&self) -> String {
        format!("{}/v1/embeddings", self.base_url)
    }

    /// Requests received so far, including failed ones.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn route(config: &MockConfig, url: &str, raw: &str) -> (u16, Value) {
    let Ok(body) = serde_json::from_str::<Value>(raw) else {
        return (400, json!({"error": "body is not JSON"}));
    };
    if url.ends_with("/completions") {
        completions(config, &body)
    } else if url.ends_with("/embeddings") {
        embeddings(config, &body)
    } else {
        (404, json!({"error": format!("no route for {url}")}))
    }
}

fn digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Letters of the last run of `X. ...` option lines in the prompt.
fn last_option_letters(prompt: &str) -> Vec<char> {
    let mut blocks: Vec<Vec<char>> = Vec::new();
    let mut current: Vec<char> = Vec::new();
    for line in prompt.lines() {
        let mut chars = line.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(c), Some('.'), Some(' ')) if c.is_ascii_uppercase() => current.push(c),
            _ => {
                if !current.is_empty() {
                    blocks.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks.pop().unwrap_or_else(|| vec!['A', 'B'])
}

fn hashed_top_tokens(prompt: &str, k: usize) -> Vec<(String, f64)> {
    let h = digest(prompt);
    let mut tokens: Vec<(String, f64)> = (0..10u8)
        .map(|i| {
            let letter = (b'A' + i) as char;
            // Alternate surface forms so both matching paths are exercised.
            let token = if h[16 + i as usize].is_multiple_of(2) {
                format!(" {letter}")
            } else {
                letter.to_string()
            };
            (token, -0.25 - f64::from(h[i as usize]) / 64.0)
        })
        .collect();
    tokens.push(("\n".into(), -4.5));
    tokens.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    tokens.truncate(k.max(1));
    tokens
}

fn completions(config: &MockConfig, body: &Value) -> (u16, Value) {
    let Some(prompt) = body.get("prompt").and_then(Value::as_str) else {
        return (400, json!({"error": "missing prompt"}));
    };
    let max_tokens = body.get("max_tokens").and_then(Value::as_u64).unwrap_or(16);
    if max_tokens > 1 {
        // Verbalized distribution over the final question's letters.
        let h = digest(prompt);
        let letters = last_option_letters(prompt);
        let weights: Vec<u32> = (0..letters.len()).map(|i| u32::from(h[i]) + 1).collect();
        let total: u32 = weights.iter().sum();
        let entries: Vec<String> = letters
            .iter()
            .zip(&weights)
            .map(|(l, w)| format!("\"{l}\": {:.3}", f64::from(*w) / f64::from(total)))
            .collect();
        let text = format!(" {{{}}}", entries.join(", "));
        return (200, json!({"choices": [{"index": 0, "text": text, "logprobs": null}]}));
    }
    if config.omit_logprobs {
        return (200, json!({"choices": [{"index": 0, "text": " A", "logprobs": null}]}));
    }
    let k = body.get("logprobs").and_then(Value::as_u64).unwrap_or(5) as usize;
    let top = config
        .logprob_rules
        .iter()
        .find(|r| prompt.contains(&r.pattern))
        .map(|r| r.top_tokens.clone())
        .unwrap_or_else(|| hashed_top_tokens(prompt, k));
    let top_map: serde_json::Map<String, Value> =
        top.iter().map(|(t, lp)| (t.clone(), json!(lp))).collect();
    let (first_token, first_lp) = top.first().cloned().unwrap_or_else(|| (" A".into(), 0.0));
    (
        200,
        json!({
            "choices": [{
                "index": 0,
                "text": first_token,
                "logprobs": {
                    "tokens": [first_token],
                    "token_logprobs": [first_lp],
                    "top_logprobs": [top_map],
                },
            }]
        }),
    )
}

fn embeddings(config: &MockConfig, body: &Value) -> (u16, Value) {
    let Some(input) = body.get("input").and_then(Value::as_str) else {
        return (400, json!({"error": "missing input"}));
    };
    if input.is_empty() {
        return (400, json!({"error": "empty input"}));
    }
    if let Some(v) = config.fixed_embeddings.get(input) {
        return (200, json!({ "vector": v }));
    }
    // Hashed bag of words, so texts sharing words have similar vectors.
    let dim = config.embedding_dim.max(2);
    let mut v = vec![0.0f64; dim];
    for word in input
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let h = digest(&word.to_lowercase());
        let idx = usize::from(u16::from_le_bytes([h[0], h[1]])) % dim;
        v[idx] += if h[2].is_multiple_of(2) { 1.0 } else { -1.0 };
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    (200, json!({ "vector": v }))
}
