//! An in-process `rt/1` server backed by toy models.
//!
//! Knobs in [`FixtureOptions`] make it misbehave in controlled ways so the
//! client's version gate, schema gate and retry policy can be exercised.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use prmkit_core::toy::{ToyLm, ToyScorer};
use prmkit_core::{Error, LanguageModel, QualityScorer, TokenSequence, TopK};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Response, Server};

use super::wire::{self, version, ErrorResponse};

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    /// Version stamped on every response.
    pub protocol_version: String,
    /// Answer 200 with a body that is not JSON.
    pub malformed: bool,
    /// Answer the first `fail_first` requests with `fail_status`.
    pub fail_first: usize,
    pub fail_status: u16,
    /// Required bearer token, if any.
    pub auth_token: Option<String>,
    pub workers: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            protocol_version: wire::PROTOCOL_VERSION.into(),
            malformed: false,
            fail_first: 0,
            fail_status: 503,
            auth_token: None,
            workers: 4,
        }
    }
}

struct State {
    models: BTreeMap<String, ToyLm>,
    scorers: BTreeMap<String, ToyScorer>,
    opts: FixtureOptions,
    hits: AtomicUsize,
    log: Mutex<Vec<(String, String)>>,
}

pub struct FixtureServer {
    server: Arc<Server>,
    state: Arc<State>,
    workers: Vec<JoinHandle<()>>,
    url: String,
}

impl FixtureServer {
    /// Serves `models` under their tags and `scorers` under the given names
    /// on an ephemeral localhost port.
    pub fn start(
        models: Vec<ToyLm>,
        scorers: Vec<(String, ToyScorer)>,
        opts: FixtureOptions,
    ) -> std::io::Result<Self> {
        let models = models.into_iter().map(|m| (m.tag().to_string(), m)).collect();
        Self::start_named(models, scorers, opts)
    }

    /// Like [`FixtureServer::start`] with explicit model names, so several
    /// models may share one tokenizer.
    pub fn start_named(
        models: Vec<(String, ToyLm)>,
        scorers: Vec<(String, ToyScorer)>,
        opts: FixtureOptions,
    ) -> std::io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("no ip address"))?;
        let server = Arc::new(server);
        let state = Arc::new(State {
            models: models.into_iter().collect(),
            scorers: scorers.into_iter().collect(),
            opts,
            hits: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        });
        let workers = (0..state.opts.workers.max(1))
            .map(|_| {
                let (server, state) = (Arc::clone(&server), Arc::clone(&state));
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(&state, req);
                    }
                })
            })
            .collect();
        Ok(FixtureServer {
            server,
            state,
            workers,
            url: format!("http://{addr}"),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.url
    }

    /// Requests received so far, including failed ones.
    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    /// `(path, body)` of every request received.
    pub fn requests(&self) -> Vec<(String, String)> {
        self.state.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes(&b"content-type"[..], &b"application/json"[..]).expect("static header")
}

fn handle(state: &State, mut req: tiny_http::Request) {
    let hit = state.hits.fetch_add(1, Ordering::SeqCst);
    let mut body = String::new();
    let read = req.as_reader().read_to_string(&mut body);
    let path = req.url().to_string();
    state
        .log
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .push((path.clone(), body.clone()));
    let (status, text) = if read.is_err() {
        error(state, 400, "bad_request", "unreadable body")
    } else if hit < state.opts.fail_first {
        error(state, state.opts.fail_status, "unavailable", "injected failure")
    } else if !authorized(state, &req) {
        error(state, 401, "unauthorized", "missing or wrong bearer token")
    } else if state.opts.malformed {
        (200, "{\"protocol_version\": \"rt/1\", \"candidates\": [".to_string())
    } else {
        route(state, &path, &body)
    };
    let response = Response::from_string(text)
        .with_status_code(status)
        .with_header(json_header());
    let _ = req.respond(response);
}

fn authorized(state: &State, req: &tiny_http::Request) -> bool {
    let Some(token) = &state.opts.auth_token else {
        return true;
    };
    let expected = format!("Bearer {token}");
    req.headers()
        .iter()
        .any(|h| h.field.equiv("authorization") && h.value.as_str() == expected)
}

fn error(state: &State, status: u16, code: &str, message: &str) -> (u16, String) {
    let mut body = ErrorResponse::new(code, message);
    body.protocol_version = state.opts.protocol_version.clone();
    (status, serde_json::to_string(&body).expect("serializable"))
}

fn ok<T: Serialize>(state: &State, body: T) -> (u16, String) {
    let mut value = serde_json::to_value(body).expect("serializable");
    value["protocol_version"] = state.opts.protocol_version.clone().into();
    (200, value.to_string())
}

fn core_error(state: &State, e: Error) -> (u16, String) {
    match e {
        Error::UnknownToken { .. }
        | Error::Untokenizable(_)
        | Error::InvalidInput(_)
        | Error::Terminated
        | Error::TokenizerMismatch { .. } => error(state, 400, "invalid_request", &e.to_string()),
        _ => error(state, 500, "model_error", &e.to_string()),
    }
}

fn parse<T: DeserializeOwned>(body: &str) -> std::result::Result<T, String> {
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    match value.get("protocol_version").and_then(|v| v.as_str()) {
        Some(v) if v == wire::PROTOCOL_VERSION => {}
        other => return Err(format!("unsupported protocol_version {other:?}")),
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}

fn model<'a>(state: &'a State, tag: &str) -> std::result::Result<&'a ToyLm, (u16, String)> {
    state
        .models
        .get(tag)
        .ok_or_else(|| error(state, 400, "unknown_model", &format!("no model {tag:?}")))
}

fn sequence(m: &ToyLm, prompt: Vec<prmkit_core::TokenId>, continuation: Vec<prmkit_core::TokenId>) -> TokenSequence {
    let mut seq = TokenSequence::new(m.tag(), prompt);
    seq.terminated = continuation.last() == Some(&m.eos());
    seq.continuation = continuation;
    seq
}

fn route(state: &State, path: &str, body: &str) -> (u16, String) {
    macro_rules! request {
        ($t:ty) => {
            match parse::<$t>(body) {
                Ok(r) => r,
                Err(msg) => return error(state, 400, "schema", &msg),
            }
        };
    }
    macro_rules! model {
        ($tag:expr) => {
            match model(state, $tag) {
                Ok(m) => m,
                Err(resp) => return resp,
            }
        };
    }
    let result = match path {
        wire::LOGITS => {
            let req = request!(wire::LogitsRequest);
            let m = model!(&req.model);
            let k = req.k.map_or(TopK::All, TopK::Top);
            m.next_token_logits(&sequence(m, req.prompt, req.continuation), k)
                .map(|r| {
                    ok(
                        state,
                        wire::LogitsResponse {
                            protocol_version: version(),
                            candidates: r.candidates,
                            complete: r.complete,
                        },
                    )
                })
        }
        wire::TEACHER_FORCED => {
            let req = request!(wire::TeacherForcedRequest);
            let m = model!(&req.model);
            m.teacher_forced_logprobs(&sequence(m, req.prompt, req.continuation))
                .map(|lp| {
                    ok(
                        state,
                        wire::TeacherForcedResponse {
                            protocol_version: version(),
                            logprobs: lp.into_iter().map(|l| l.is_finite().then_some(l)).collect(),
                        },
                    )
                })
        }
        wire::ROLLOUT => {
            let req = request!(wire::RolloutRequest);
            let m = model!(&req.model);
            let seq = sequence(m, req.prompt, req.continuation);
            req.seeds
                .iter()
                .map(|&seed| {
                    m.sample_rollout(&seq, req.temperature, req.max_len, seed)
                        .map(|r| wire::WireRollout {
                            continuation: r.continuation,
                            terminated: r.terminated,
                        })
                })
                .collect::<prmkit_core::Result<Vec<_>>>()
                .map(|rollouts| {
                    ok(
                        state,
                        wire::RolloutResponse {
                            protocol_version: version(),
                            rollouts,
                        },
                    )
                })
        }
        wire::SCORE => {
            let req = request!(wire::ScoreRequest);
            let Some(scorer) = state.scorers.get(&req.model) else {
                return error(state, 400, "unknown_model", &format!("no scorer {:?}", req.model));
            };
            scorer.score(&req.source, &req.hypothesis).map(|s| {
                ok(
                    state,
                    wire::ScoreResponse {
                        protocol_version: version(),
                        score: s.value(),
                    },
                )
            })
        }
        wire::TOKENIZE => {
            let req = request!(wire::TokenizeRequest);
            let m = model!(&req.model);
            m.encode(&req.text).map(|ids| {
                ok(
                    state,
                    wire::TokenizeResponse {
                        protocol_version: version(),
                        ids,
                    },
                )
            })
        }
        wire::DETOKENIZE => {
            let req = request!(wire::DetokenizeRequest);
            let m = model!(&req.model);
            m.decode(&req.ids).map(|text| {
                ok(
                    state,
                    wire::DetokenizeResponse {
                        protocol_version: version(),
                        text,
                    },
                )
            })
        }
        _ => return error(state, 404, "not_found", path),
    };
    result.unwrap_or_else(|e| core_error(state, e))
}
