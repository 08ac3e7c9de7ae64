//! Request and response bodies of protocol `rt/1`.
//!
//! Every body is a JSON object carrying `protocol_version`. Log-probabilities
//! of impossible tokens are sent as `null`.

use prmkit_core::{Candidate, TokenId};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: &str = "rt/1";

pub const LOGITS: &str = "/v1/logits";
pub const TEACHER_FORCED: &str = "/v1/teacher_forced";
pub const ROLLOUT: &str = "/v1/rollout";
pub const SCORE: &str = "/v1/score";
pub const TOKENIZE: &str = "/v1/tokenize";
pub const DETOKENIZE: &str = "/v1/detokenize";

pub(crate) fn version() -> String {
    PROTOCOL_VERSION.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogitsRequest {
    pub protocol_version: String,
    pub model: String,
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    /// `null` requests every token of nonzero probability.
    pub k: Option<usize>,
}

impl LogitsRequest {
    pub fn new(model: &str, prompt: Vec<TokenId>, continuation: Vec<TokenId>, k: Option<usize>) -> Self {
        LogitsRequest {
            protocol_version: version(),
            model: model.into(),
            prompt,
            continuation,
            k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub protocol_version: String,
    pub candidates: Vec<Candidate>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherForcedRequest {
    pub protocol_version: String,
    pub model: String,
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherForcedResponse {
    pub protocol_version: String,
    pub logprobs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutRequest {
    pub protocol_version: String,
    pub model: String,
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    pub temperature: f64,
    pub max_len: usize,
    /// One rollout per seed, in order.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRollout {
    /// Full continuation, including the request's continuation.
    pub continuation: Vec<TokenId>,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResponse {
    pub protocol_version: String,
    pub rollouts: Vec<WireRollout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub protocol_version: String,
    pub model: String,
    pub source: String,
    pub hypothesis: String,
    pub lang_pair: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub protocol_version: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizeRequest {
    pub protocol_version: String,
    pub model: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub protocol_version: String,
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetokenizeRequest {
    pub protocol_version: String,
    pub model: String,
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetokenizeResponse {
    pub protocol_version: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

/// Body of every non-200 response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub protocol_version: String,
    pub error: WireError,
}

impl ErrorResponse {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ErrorResponse {
            protocol_version: version(),
            error: WireError {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}
