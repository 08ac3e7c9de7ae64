use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use prmkit_core::math::hash_words;
use prmkit_core::{
    Error, LanguageModel, LogitsResult, QualityScore, QualityScorer, Result, TokenId, TokenSequence, TopK,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{self, version};

/// Where and how to reach a sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoint {
    pub base_url: String,
    /// Per-attempt timeout.
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub auth_token: Option<String>,
    /// First backoff delay; doubles after each failed attempt.
    pub backoff_initial_ms: u64,
    /// Ceiling on concurrent requests from one client.
    pub max_in_flight: usize,
    /// Largest number of rollouts sent in one request.
    pub batch_size: usize,
}

impl Default for Endpoint {
    fn default() -> Self {
        Endpoint {
            base_url: String::new(),
            timeout_ms: 30_000,
            max_retries: 3,
            auth_token: None,
            backoff_initial_ms: 200,
            max_in_flight: 8,
            batch_size: 16,
        }
    }
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Endpoint {
            base_url: base_url.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::InvalidConfig(format!(
                "base_url must be an http(s) URL, got {:?}",
                self.base_url
            )));
        }
        if self.timeout_ms == 0 {
            return Err(Error::InvalidConfig("timeout_ms must be positive".into()));
        }
        if self.max_in_flight == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "max_in_flight and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Service {
    Model,
    Scorer,
}

enum Attempt<R> {
    Done(Result<R>),
    Retry(String),
}

/// Shared HTTP client with retry, backoff and an in-flight ceiling.
pub struct Client {
    endpoint: Endpoint,
    agent: ureq::Agent,
    gate: Gate,
    calls: AtomicU64,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("endpoint", &self.endpoint).finish()
    }
}

impl Client {
    pub fn new(endpoint: Endpoint) -> Result<Self> {
        endpoint.validate()?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .max_idle_connections_per_host(endpoint.max_in_flight)
            .build();
        Ok(Client {
            gate: Gate {
                free: Mutex::new(endpoint.max_in_flight),
                cv: Condvar::new(),
            },
            agent: ureq::Agent::new_with_config(config),
            calls: AtomicU64::new(0),
            endpoint,
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Backoff before retry `attempt` (1-based): initial · 2^(attempt−1),
    /// scaled by a jitter in [0.8, 1.2] derived from the call and attempt.
    fn backoff(&self, call: u64, attempt: u32) -> Duration {
        let base = self.endpoint.backoff_initial_ms as f64 * 2f64.powi(attempt as i32 - 1);
        let u = (hash_words(&[call, attempt as u64]) >> 11) as f64 / (1u64 << 53) as f64;
        Duration::from_secs_f64(base * (0.8 + 0.4 * u) / 1000.0)
    }

    fn post<Q: Serialize, R: DeserializeOwned>(&self, path: &str, body: &Q, service: Service) -> Result<R> {
        let payload = serde_json::to_vec(body)
            .map_err(|e| Error::InvalidInput(format!("unserializable request: {e}")))?;
        let url = format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path);
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        let mut last = String::new();
        for attempt in 0..=self.endpoint.max_retries {
            if attempt > 0 {
                let delay = self.backoff(call, attempt);
                debug!("{url}: retry {attempt} in {delay:?} after: {last}");
                std::thread::sleep(delay);
            }
            let outcome = {
                let _permit = self.gate.acquire();
                self.send(&url, &payload)
            };
            match outcome {
                Ok((status, text)) => match classify(status, &text, service) {
                    Attempt::Done(r) => return r,
                    Attempt::Retry(msg) => last = msg,
                },
                Err(e) => last = e.to_string(),
            }
        }
        let attempts = self.endpoint.max_retries + 1;
        warn!("{url}: giving up after {attempts} attempts");
        let msg = format!("{url}: {attempts} attempts failed, last error: {last}");
        Err(match service {
            Service::Model => Error::ProviderUnavailable(msg),
            Service::Scorer => Error::ScorerUnavailable(msg),
        })
    }

    fn send(&self, url: &str, payload: &[u8]) -> std::result::Result<(u16, String), ureq::Error> {
        let mut req = self.agent.post(url).header("content-type", "application/json");
        if let Some(token) = &self.endpoint.auth_token {
            req = req.header("authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(payload)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string()?;
        Ok((status, text))
    }
}

fn check_version(value: &serde_json::Value) -> Result<()> {
    match value.get("protocol_version").and_then(|v| v.as_str()) {
        Some(v) if v == wire::PROTOCOL_VERSION => Ok(()),
        Some(v) => Err(Error::ProtocolMismatch(format!(
            "server speaks {v:?}, client speaks {:?}",
            wire::PROTOCOL_VERSION
        ))),
        None => Err(Error::ProtocolMismatch("response lacks protocol_version".into())),
    }
}

fn classify<R: DeserializeOwned>(status: u16, text: &str, service: Service) -> Attempt<R> {
    if matches!(status, 429 | 502 | 503 | 504) {
        return Attempt::Retry(format!("HTTP {status}"));
    }
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) if status == 200 => {
            return Attempt::Done(Err(Error::ProtocolMismatch(format!("malformed response body: {e}"))))
        }
        Err(_) if status >= 500 => return Attempt::Retry(format!("HTTP {status}")),
        Err(_) => return Attempt::Done(Err(Error::ProtocolMismatch(format!("HTTP {status}")))),
    };
    if let Err(e) = check_version(&value) {
        return Attempt::Done(Err(e));
    }
    if status == 200 {
        return Attempt::Done(
            serde_json::from_value(value)
                .map_err(|e| Error::ProtocolMismatch(format!("malformed response body: {e}"))),
        );
    }
    let message = serde_json::from_value::<wire::ErrorResponse>(value)
        .map(|e| format!("{}: {}", e.error.code, e.error.message))
        .unwrap_or_else(|_| format!("HTTP {status}"));
    Attempt::Done(Err(match (status, service) {
        (500, Service::Model) => Error::RemoteModelError(message),
        (500, Service::Scorer) => Error::ScorerUnavailable(message),
        (401 | 403, Service::Model) => Error::ProviderUnavailable(message),
        (401 | 403, Service::Scorer) => Error::ScorerUnavailable(message),
        _ if status >= 500 => return Attempt::Retry(message),
        _ => Error::ProtocolMismatch(message),
    }))
}

fn wire_k(k: TopK) -> Option<usize> {
    match k {
        TopK::Top(k) => Some(k),
        TopK::All => None,
    }
}

/// Next-token candidates from `model` on the sidecar.
pub fn remote_logits(client: &Client, req: &wire::LogitsRequest) -> Result<LogitsResult> {
    let resp: wire::LogitsResponse = client.post(wire::LOGITS, req, Service::Model)?;
    if let Some(k) = req.k {
        if resp.candidates.len() > k {
            return Err(Error::ProtocolMismatch(format!(
                "asked for {k} candidates, got {}",
                resp.candidates.len()
            )));
        }
    }
    Ok(LogitsResult {
        candidates: resp.candidates,
        complete: resp.complete,
    })
}

/// Quality of `hypothesis` as a translation of `source`.
pub fn remote_score(
    client: &Client,
    model: &str,
    source: &str,
    hypothesis: &str,
    lang_pair: &str,
) -> Result<QualityScore> {
    let req = wire::ScoreRequest {
        protocol_version: version(),
        model: model.into(),
        source: source.into(),
        hypothesis: hypothesis.into(),
        lang_pair: lang_pair.into(),
    };
    let resp: wire::ScoreResponse = client.post(wire::SCORE, &req, Service::Scorer)?;
    QualityScore::new(resp.score).map_err(|_| Error::ProtocolMismatch(format!("score {} outside [0, 1]", resp.score)))
}

/// One rollout of `seq` per seed, in seed order. Requests larger than the
/// endpoint's batch size are split.
pub fn batch_rollouts(
    lm: &RemoteLm,
    seq: &TokenSequence,
    n: usize,
    temperature: f64,
    max_len: usize,
    seeds: &[u64],
) -> Result<Vec<TokenSequence>> {
    if n == 0 || seeds.len() != n {
        return Err(Error::InvalidInput(format!(
            "need n > 0 and one seed per rollout, got n = {n} with {} seeds",
            seeds.len()
        )));
    }
    if seq.terminated {
        return Err(Error::Terminated);
    }
    prmkit_core::provider::check_sequence(lm, seq)?;
    let mut out = Vec::with_capacity(n);
    for chunk in seeds.chunks(lm.client.endpoint.batch_size) {
        let req = wire::RolloutRequest {
            protocol_version: version(),
            model: lm.model.clone(),
            prompt: seq.prompt.clone(),
            continuation: seq.continuation.clone(),
            temperature,
            max_len,
            seeds: chunk.to_vec(),
        };
        let resp: wire::RolloutResponse = lm.client.post(wire::ROLLOUT, &req, Service::Model)?;
        if resp.rollouts.len() != chunk.len() {
            return Err(Error::ProtocolMismatch(format!(
                "asked for {} rollouts, got {}",
                chunk.len(),
                resp.rollouts.len()
            )));
        }
        for r in resp.rollouts {
            let mut rollout = seq.clone();
            rollout.continuation = r.continuation;
            rollout.terminated = r.terminated;
            if !rollout.extends(seq) {
                return Err(Error::ProtocolMismatch("rollout does not extend its prefix".into()));
            }
            rollout
                .validate(lm.vocab_size, lm.eos)
                .map_err(|e| Error::ProtocolMismatch(format!("invalid rollout: {e}")))?;
            out.push(rollout);
        }
    }
    Ok(out)
}

/// A causal language model served by a sidecar. The tag defaults to the
/// model name on the sidecar; EOS and vocabulary size come from
/// configuration.
#[derive(Debug, Clone)]
pub struct RemoteLm {
    client: Arc<Client>,
    model: String,
    tag: String,
    eos: TokenId,
    vocab_size: usize,
}

impl RemoteLm {
    pub fn new(client: Arc<Client>, model: impl Into<String>, eos: TokenId, vocab_size: usize) -> Result<Self> {
        if eos.index() >= vocab_size {
            return Err(Error::InvalidConfig(format!(
                "eos id {eos} outside vocabulary of {vocab_size}"
            )));
        }
        let model = model.into();
        Ok(RemoteLm {
            client,
            tag: model.clone(),
            model,
            eos,
            vocab_size,
        })
    }

    /// Names the tokenizer, so models sharing one (a policy and its
    /// reference) accept each other's sequences.
    pub fn with_tokenizer(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn client(&self) -> &Client {
        &self.client
    }
}

impl LanguageModel for RemoteLm {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let req = wire::TokenizeRequest {
            protocol_version: version(),
            model: self.model.clone(),
            text: text.into(),
        };
        let resp: wire::TokenizeResponse = self.client.post(wire::TOKENIZE, &req, Service::Model)?;
        Ok(resp.ids)
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let req = wire::DetokenizeRequest {
            protocol_version: version(),
            model: self.model.clone(),
            ids: ids.to_vec(),
        };
        let resp: wire::DetokenizeResponse = self.client.post(wire::DETOKENIZE, &req, Service::Model)?;
        Ok(resp.text)
    }

    fn next_token_logits(&self, seq: &TokenSequence, k: TopK) -> Result<LogitsResult> {
        prmkit_core::provider::check_sequence(self, seq)?;
        if seq.terminated {
            return Err(Error::Terminated);
        }
        let req = wire::LogitsRequest::new(&self.model, seq.prompt.clone(), seq.continuation.clone(), wire_k(k));
        let out = remote_logits(&self.client, &req)?;
        if let Some(c) = out.candidates.iter().find(|c| c.token.index() >= self.vocab_size) {
            return Err(Error::ProtocolMismatch(format!("candidate id {} outside vocabulary", c.token)));
        }
        Ok(out)
    }

    fn teacher_forced_logprobs(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        prmkit_core::provider::check_sequence(self, seq)?;
        if seq.continuation.is_empty() {
            return Err(Error::InvalidInput("continuation is empty".into()));
        }
        let req = wire::TeacherForcedRequest {
            protocol_version: version(),
            model: self.model.clone(),
            prompt: seq.prompt.clone(),
            continuation: seq.continuation.clone(),
        };
        let resp: wire::TeacherForcedResponse = self.client.post(wire::TEACHER_FORCED, &req, Service::Model)?;
        if resp.logprobs.len() != seq.continuation.len() {
            return Err(Error::ProtocolMismatch(format!(
                "{} logprobs for {} tokens",
                resp.logprobs.len(),
                seq.continuation.len()
            )));
        }
        Ok(resp.logprobs.into_iter().map(|l| l.unwrap_or(f64::NEG_INFINITY)).collect())
    }

    fn sample_rollout(&self, seq: &TokenSequence, temperature: f64, max_len: usize, seed: u64) -> Result<TokenSequence> {
        Ok(batch_rollouts(self, seq, 1, temperature, max_len, &[seed])?.remove(0))
    }
}

/// A quality-estimation model served by a sidecar.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    client: Arc<Client>,
    model: String,
    lang_pair: String,
}

impl RemoteScorer {
    pub fn new(client: Arc<Client>, model: impl Into<String>) -> Self {
        RemoteScorer {
            client,
            model: model.into(),
            lang_pair: String::new(),
        }
    }

    /// The same scorer, forwarding `lang_pair` with every request.
    pub fn with_lang_pair(&self, lang_pair: &str) -> Self {
        RemoteScorer {
            lang_pair: lang_pair.into(),
            ..self.clone()
        }
    }
}

impl QualityScorer for RemoteScorer {
    fn score(&self, source: &str, hypothesis: &str) -> Result<QualityScore> {
        remote_score(&self.client, &self.model, source, hypothesis, &self.lang_pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_within_jitter() {
        let client = Client::new(Endpoint::new("http://127.0.0.1:1")).unwrap();
        for call in 0..50 {
            for attempt in 1..4u32 {
                let base = 200.0 * 2f64.powi(attempt as i32 - 1);
                let d = client.backoff(call, attempt).as_secs_f64() * 1000.0;
                assert!(d >= base * 0.8 - 1e-9 && d <= base * 1.2 + 1e-9, "{d} vs {base}");
                assert_eq!(client.backoff(call, attempt), client.backoff(call, attempt));
            }
        }
    }

    #[test]
    fn endpoint_validation() {
        assert!(Endpoint::new("localhost:80").validate().is_err());
        assert!(Endpoint { timeout_ms: 0, ..Endpoint::new("http://x") }.validate().is_err());
        assert!(Endpoint::new("http://x").validate().is_ok());
    }

    #[test]
    fn classification() {
        let ok = r#"{"protocol_version":"rt/1","score":0.5}"#;
        assert!(matches!(classify::<wire::ScoreResponse>(200, ok, Service::Scorer), Attempt::Done(Ok(_))));
        let old = r#"{"protocol_version":"rt/0","score":0.5}"#;
        assert!(matches!(
            classify::<wire::ScoreResponse>(200, old, Service::Scorer),
            Attempt::Done(Err(Error::ProtocolMismatch(_)))
        ));
        assert!(matches!(
            classify::<wire::ScoreResponse>(200, "{not json", Service::Scorer),
            Attempt::Done(Err(Error::ProtocolMismatch(_)))
        ));
        assert!(matches!(classify::<wire::ScoreResponse>(503, "", Service::Model), Attempt::Retry(_)));
        let failed = serde_json::to_string(&wire::ErrorResponse::new("model_error", "oom")).unwrap();
        assert!(matches!(
            classify::<wire::ScoreResponse>(500, &failed, Service::Model),
            Attempt::Done(Err(Error::RemoteModelError(_)))
        ));
    }
}
