//! Completions/embeddings endpoint client and first-token logprob handling.
//!
//! Requests follow the common completions contract
//! (`{model, prompt, max_tokens: 1, logprobs: K, temperature: 0}`) and the
//! embeddings contract (`{model, input}` answered by `{vector}`; the
//! `{data: [{embedding}]}` shape is accepted too). Every successful response
//! body is stored in a content-addressed cache, so reruns issue no requests.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::survey::{Distribution, Question};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub id: String,
    pub values: Vec<f64>,
    pub model_tag: String,
}

/// Cosine of the angle between two embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.values.len() != v.values.len() {
        return Err(Error::LengthMismatch {
            expected: u.values.len(),
            actual: v.values.len(),
        });
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    let nu = u.values.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.values.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        let id = if nu == 0.0 { &u.id } else { &v.id };
        return Err(Error::invalid(format!("embedding `{id}`"), "zero norm"));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// First-token evidence for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobResult {
    /// Hex SHA-256 of the prompt text.
    pub prompt_hash: String,
    /// Natural-log score per option letter found among the top tokens.
    pub letter_logprobs: BTreeMap<String, f64>,
    /// Requested letters that did not appear among the top tokens.
    pub missing: Vec<String>,
    pub raw_top_tokens: Vec<(String, f64)>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Matches letters against top tokens. Both the bare (`A`) and
/// space-prefixed (` A`) surface forms count; their probabilities add.
pub fn match_letters(
    prompt: &str,
    top_tokens: Vec<(String, f64)>,
    letters: &[char],
) -> LogprobResult {
    let mut letter_logprobs = BTreeMap::new();
    let mut missing = Vec::new();
    for &letter in letters {
        let bare = letter.to_string();
        let spaced = format!(" {letter}");
        let hits: Vec<f64> = top_tokens
            .iter()
            .filter(|(t, _)| *t == bare || *t == spaced)
            .map(|(_, lp)| *lp)
            .collect();
        if hits.is_empty() {
            missing.push(bare);
        } else {
            letter_logprobs.insert(bare, log_sum_exp(&hits));
        }
    }
    LogprobResult {
        prompt_hash: sha256_hex(prompt.as_bytes()),
        letter_logprobs,
        missing,
        raw_top_tokens: top_tokens,
    }
}

/// Softmax of the letter scores over the question's options; missing
/// letters get zero.
pub fn extract_distribution(result: &LogprobResult, question: &Question) -> Result<Distribution> {
    let scores: Vec<Option<f64>> = question
        .letters()
        .map(|l| result.letter_logprobs.get(&l.to_string()).copied())
        .collect();
    let present: Vec<f64> = scores.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Capability(format!(
            "no option letter of question `{}` among the returned top tokens",
            question.id
        )));
    }
    let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let masses: Vec<f64> = scores
        .iter()
        .map(|s| s.map_or(0.0, |v| (v - max).exp()))
        .collect();
    Distribution::from_masses(question.id.clone(), &masses)
        .ok_or_else(|| Error::Capability(format!("degenerate logprobs for `{}`", question.id)))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionsEndpoint {
    pub url: String,
    pub model: String,
    /// Cache namespace; defaults to the URL.
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(skip)]
    pub api_key: Option<String>,
}

fn default_top_logprobs() -> u32 {
    20
}

impl CompletionsEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        CompletionsEndpoint {
            url: url.into(),
            model: model.into(),
            tag: None,
            top_logprobs: default_top_logprobs(),
            api_key: None,
        }
    }

    fn tag(&self) -> &str {
        self.tag.as_deref().unwrap_or(&self.url)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEndpoint {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl EmbeddingEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        EmbeddingEndpoint {
            url: url.into(),
            model: model.into(),
            tag: None,
            api_key: None,
        }
    }

    fn tag(&self) -> &str {
        self.tag.as_deref().unwrap_or(&self.url)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
    /// On-disk cache directory; `None` keeps the cache in memory only.
    pub cache_dir: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            max_retries: 4,
            initial_backoff_ms: 100,
            timeout_secs: 60,
            cache_dir: None,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub network_requests: u64,
}

struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("limiter poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Content-addressed response store: memory, optionally backed by a directory.
struct ResponseCache {
    memory: RwLock<HashMap<String, Vec<u8>>>,
    dir: Option<PathBuf>,
    counter: AtomicU64,
}

impl ResponseCache {
    fn get(&self, key: &str) -> Option<Vec<u8>> {
        if let Some(v) = self.memory.read().expect("cache poisoned").get(key) {
            return Some(v.clone());
        }
        let bytes = fs::read(self.dir.as_ref()?.join(key)).ok()?;
        self.memory
            .write()
            .expect("cache poisoned")
            .insert(key.to_string(), bytes.clone());
        Some(bytes)
    }

    fn put(&self, key: &str, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let tmp = dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
            fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            let dest = dir.join(key);
            fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        }
        self.memory
            .write()
            .expect("cache poisoned")
            .insert(key.to_string(), bytes.to_vec());
        Ok(())
    }
}

/// Blocking HTTP client shared across worker threads.
pub struct ModelClient {
    agent: ureq::Agent,
    config: ClientConfig,
    cache: ResponseCache,
    limiter: Limiter,
    hits: AtomicU64,
    misses: AtomicU64,
    network: AtomicU64,
}

impl ModelClient {
    pub fn new(config: ClientConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        ModelClient {
            agent,
            cache: ResponseCache {
                memory: RwLock::new(HashMap::new()),
                dir: config.cache_dir.clone(),
                counter: AtomicU64::new(0),
            },
            limiter: Limiter::new(config.max_in_flight),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            network: AtomicU64::new(0),
            config,
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            network_requests: self.network.load(Ordering::Relaxed),
        }
    }

    /// Cached body for `key`, or the result of `fetch`, stored once it parses.
    fn cached<T>(
        &self,
        key: &str,
        fetch: impl FnOnce() -> Result<Vec<u8>>,
        parse: impl Fn(&[u8]) -> Result<T>,
    ) -> Result<T> {
        if let Some(bytes) = self.cache.get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return parse(&bytes);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let bytes = fetch()?;
        let value = parse(&bytes)?;
        self.cache.put(key, &bytes)?;
        Ok(value)
    }

    fn post_json(&self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Vec<u8>> {
        let _permit = self.limiter.acquire();
        let payload = body.to_string();
        let mut delay = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                log::debug!("retrying {url} in {delay:?} after: {last_error}");
                thread::sleep(delay);
                delay *= 2;
            }
            self.network.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(url).set("Content-Type", "application/json");
            if let Some(key) = api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_string(&payload) {
                Ok(resp) => {
                    let mut bytes = Vec::new();
                    resp.into_reader()
                        .read_to_end(&mut bytes)
                        .map_err(|e| Error::Transport(format!("{url}: reading body: {e}")))?;
                    return Ok(bytes);
                }
                Err(ureq::Error::Status(code, resp)) if code == 429 || code >= 500 => {
                    last_error = format!("HTTP {code}: {}", resp.into_string().unwrap_or_default());
                }
                Err(ureq::Error::Status(code, resp)) => {
                    return Err(Error::Transport(format!(
                        "{url}: HTTP {code}: {}",
                        resp.into_string().unwrap_or_default()
                    )));
                }
                Err(ureq::Error::Transport(t)) => last_error = t.to_string(),
            }
        }
        Err(Error::Transport(format!(
            "{url}: giving up after {} attempts: {last_error}",
            self.config.max_retries + 1
        )))
    }

    /// Top first-token logprobs for `prompt`, matched against `letters`.
    pub fn fetch_option_logprobs(
        &self,
        endpoint: &CompletionsEndpoint,
        prompt: &str,
        letters: &[char],
    ) -> Result<LogprobResult> {
        if letters.is_empty() {
            return Err(Error::invalid("letters", "empty letter set"));
        }
        let key = sha256_hex(
            format!(
                "logprobs\0{}\0{}\0{}\0{prompt}",
                endpoint.tag(),
                endpoint.model,
                endpoint.top_logprobs
            )
            .as_bytes(),
        );
        let body = json!({
            "model": endpoint.model,
            "prompt": prompt,
            "max_tokens": 1,
            "logprobs": endpoint.top_logprobs,
            "temperature": 0,
        });
        let top = self.cached(
            &key,
            || self.post_json(&endpoint.url, endpoint.api_key.as_deref(), &body),
            parse_top_logprobs,
        )?;
        Ok(match_letters(prompt, top, letters))
    }

    /// Greedy text continuation, used to collect verbalized distributions.
    pub fn complete_text(
        &self,
        endpoint: &CompletionsEndpoint,
        prompt: &str,
        max_tokens: u32,
    ) -> Result<String> {
        let key = sha256_hex(
            format!(
                "text\0{}\0{}\0{max_tokens}\0{prompt}",
                endpoint.tag(),
                endpoint.model
            )
            .as_bytes(),
        );
        let body = json!({
            "model": endpoint.model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0,
        });
        self.cached(
            &key,
            || self.post_json(&endpoint.url, endpoint.api_key.as_deref(), &body),
            |bytes| {
                let v: Value = serde_json::from_slice(bytes)?;
                v.pointer("/choices/0/text")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Capability("response has no choices[0].text".into()))
            },
        )
    }

    /// Embedding of `text`; `id` names the vector (typically a question id).
    pub fn fetch_embedding(
        &self,
        endpoint: &EmbeddingEndpoint,
        id: &str,
        text: &str,
    ) -> Result<EmbeddingVector> {
        if text.is_empty() {
            return Err(Error::invalid(format!("embedding input `{id}`"), "empty text"));
        }
        let key = sha256_hex(
            format!("embedding\0{}\0{}\0{text}", endpoint.tag(), endpoint.model).as_bytes(),
        );
        let body = json!({ "model": endpoint.model, "input": text });
        let values = self.cached(
            &key,
            || self.post_json(&endpoint.url, endpoint.api_key.as_deref(), &body),
            parse_embedding,
        )?;
        Ok(EmbeddingVector {
            id: id.to_string(),
            values,
            model_tag: endpoint.model.clone(),
        })
    }
}

fn parse_top_logprobs(bytes: &[u8]) -> Result<Vec<(String, f64)>> {
    let v: Value = serde_json::from_slice(bytes)?;
    let choice = v
        .pointer("/choices/0")
        .ok_or_else(|| Error::Capability("response has no choices".into()))?;
    let logprobs = match choice.get("logprobs") {
        Some(lp) if !lp.is_null() => lp,
        _ => return Err(Error::Capability("response carries no logprobs field".into())),
    };
    // Completions shape: top_logprobs[0] is a token -> logprob object.
    if let Some(Value::Object(map)) = logprobs.pointer("/top_logprobs/0") {
        return map
            .iter()
            .map(|(t, lp)| {
                lp.as_f64()
                    .map(|x| (t.clone(), x))
                    .ok_or_else(|| Error::Capability(format!("non-numeric logprob for `{t}`")))
            })
            .collect();
    }
    // Chat shape: content[0].top_logprobs is a list of {token, logprob}.
    if let Some(Value::Array(items)) = logprobs.pointer("/content/0/top_logprobs") {
        return items
            .iter()
            .map(|item| {
                let t = item.get("token").and_then(Value::as_str);
                let lp = item.get("logprob").and_then(Value::as_f64);
                t.zip(lp)
                    .map(|(t, lp)| (t.to_string(), lp))
                    .ok_or_else(|| Error::Capability("malformed top_logprobs entry".into()))
            })
            .collect();
    }
    Err(Error::Capability("logprobs field has no top_logprobs".into()))
}

fn parse_embedding(bytes: &[u8]) -> Result<Vec<f64>> {
    let v: Value = serde_json::from_slice(bytes)?;
    let arr = v
        .get("vector")
        .or_else(|| v.pointer("/data/0/embedding"))
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Capability("response has no embedding vector".into()))?;
    let values: Vec<f64> = arr
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| Error::Capability("non-numeric embedding entry".into())))
        .collect::<Result<_>>()?;
    if values.iter().all(|x| *x == 0.0) {
        return Err(Error::Capability("embedding has zero norm".into()));
    }
    Ok(values)
}
