//! Language-model and quality-scorer abstractions.
//!
//! Every algorithm in the crate talks to models only through
//! [`LanguageModel`] and [`QualityScorer`]. Implementations must be
//! shareable across threads for read-only queries; sampling takes an
//! explicit seed so scheduling never changes results.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{exp, ln, log_sum_exp};
use crate::{Error, Result, TokenId, TokenSequence};

/// How many next-token candidates to return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    Top(usize),
    All,
}

impl TopK {
    fn limit(self) -> usize {
        match self {
            TopK::Top(k) => k,
            TopK::All => usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: TokenId,
    pub logit: f64,
    /// Normalized over the full vocabulary, `≤ 0`.
    pub logprob: f64,
}

/// Next-token candidates, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsResult {
    pub candidates: Vec<Candidate>,
    /// True when `candidates` covers every token of nonzero probability.
    pub complete: bool,
}

/// Descending logit, ascending token id on ties.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.logit.total_cmp(&a.logit).then(a.token.cmp(&b.token))
}

impl LogitsResult {
    /// Builds a result from the logits of every token in the support.
    /// Tokens with a logit of `-inf` are dropped.
    pub fn from_logits(logits: impl IntoIterator<Item = (TokenId, f64)>, k: TopK) -> Self {
        let finite: Vec<(TokenId, f64)> = logits
            .into_iter()
            .filter(|(_, l)| *l > f64::NEG_INFINITY)
            .collect();
        let values: Vec<f64> = finite.iter().map(|&(_, l)| l).collect();
        let norm = log_sum_exp(&values);
        let mut candidates: Vec<Candidate> = finite
            .into_iter()
            .map(|(token, logit)| Candidate {
                token,
                logit,
                logprob: (logit - norm).min(0.0),
            })
            .collect();
        candidates.sort_by(candidate_order);
        let complete = k.limit() >= candidates.len();
        candidates.truncate(k.limit());
        LogitsResult {
            candidates,
            complete,
        }
    }

    pub fn top(&self) -> Option<&Candidate> {
        self.candidates.first()
    }

    pub fn get(&self, token: TokenId) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.token == token)
    }

    /// Log-probability of `token`; `-inf` when a complete result omits it.
    pub fn logprob_of(&self, token: TokenId) -> Option<f64> {
        match self.get(token) {
            Some(c) => Some(c.logprob),
            None if self.complete => Some(f64::NEG_INFINITY),
            None => None,
        }
    }

    /// Draws one token from the tempered distribution `∝ exp(logit / T)`.
    pub fn sample(&self, temperature: f64, rng: &mut impl Rng) -> Option<TokenId> {
        let scaled: Vec<f64> = self
            .candidates
            .iter()
            .map(|c| c.logit / temperature)
            .collect();
        let norm = log_sum_exp(&scaled);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (c, s) in self.candidates.iter().zip(&scaled) {
            acc += exp(s - norm);
            if u < acc {
                return Some(c.token);
            }
        }
        self.candidates.last().map(|c| c.token)
    }
}

/// A causal language model exposing logits, teacher-forced log-probabilities,
/// seeded rollouts and its own tokenizer.
pub trait LanguageModel: Send + Sync {
    /// Identifies the tokenizer; sequences carry it as `provider_tag`.
    fn tag(&self) -> &str;
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> TokenId;
    fn encode(&self, text: &str) -> Result<Vec<TokenId>>;
    /// Text of `ids`; EOS contributes nothing.
    fn decode(&self, ids: &[TokenId]) -> Result<String>;

    fn next_token_logits(&self, seq: &TokenSequence, k: TopK) -> Result<LogitsResult>;

    /// One log-probability per continuation token, each conditioned on the
    /// prompt and all earlier continuation tokens.
    fn teacher_forced_logprobs(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        if seq.continuation.is_empty() {
            return Err(Error::InvalidInput("continuation is empty".into()));
        }
        let mut prefix = seq.truncated(0);
        let mut out = Vec::with_capacity(seq.continuation.len());
        for &token in &seq.continuation {
            out.push(self.token_logprob(&prefix, token)?);
            prefix.push(token, self.eos());
        }
        Ok(out)
    }

    /// `ln π(token | prefix)`.
    fn token_logprob(&self, prefix: &TokenSequence, token: TokenId) -> Result<f64> {
        check_token(self, token)?;
        let logits = self.next_token_logits(prefix, TopK::All)?;
        logits.logprob_of(token).ok_or_else(|| {
            Error::ProviderUnavailable(format!("{}: incomplete distribution", self.tag()))
        })
    }

    /// Extends `seq` by sampling at `temperature` until EOS or until the
    /// continuation holds `max_len` tokens.
    fn sample_rollout(
        &self,
        seq: &TokenSequence,
        temperature: f64,
        max_len: usize,
        seed: u64,
    ) -> Result<TokenSequence> {
        if seq.terminated {
            return Err(Error::Terminated);
        }
        if !(temperature > 0.0) {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = seq.clone();
        while !out.terminated && out.continuation.len() < max_len {
            let logits = self.next_token_logits(&out, TopK::All)?;
            let token = logits
                .sample(temperature, &mut rng)
                .ok_or(Error::DegenerateDistribution)?;
            out.push(token, self.eos());
        }
        Ok(out)
    }
}

pub(crate) fn check_token<M: LanguageModel + ?Sized>(model: &M, token: TokenId) -> Result<()> {
    if token.index() >= model.vocab_size() {
        return Err(Error::UnknownToken {
            id: token.0,
            vocab_size: model.vocab_size(),
        });
    }
    Ok(())
}

/// Fails unless `seq` was produced by `model`'s tokenizer and is well formed.
pub fn check_sequence<M: LanguageModel + ?Sized>(model: &M, seq: &TokenSequence) -> Result<()> {
    if seq.provider_tag != model.tag() {
        return Err(Error::TokenizerMismatch {
            left: seq.provider_tag.clone(),
            right: model.tag().into(),
        });
    }
    seq.validate(model.vocab_size(), model.eos())
}

/// Tokenizes a source (as prompt) and a hypothesis (as continuation).
/// A terminated sequence gets the model's EOS appended.
pub fn tokenize<M: LanguageModel + ?Sized>(
    model: &M,
    source: &str,
    hypothesis: &str,
    terminated: bool,
) -> Result<TokenSequence> {
    let prompt = model.encode(source)?;
    if prompt.is_empty() {
        return Err(Error::InvalidInput("source text is empty".into()));
    }
    let mut seq = TokenSequence::new(model.tag(), prompt);
    seq.continuation = model.encode(hypothesis)?;
    if terminated {
        seq.push(model.eos(), model.eos());
    }
    Ok(seq)
}

/// `(source_text, hypothesis_text)` of a sequence.
pub fn detokenize<M: LanguageModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
) -> Result<(String, String)> {
    Ok((model.decode(&seq.prompt)?, model.decode(&seq.continuation)?))
}

/// A quality score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QualityScore(f64);

impl QualityScore {
    pub const ZERO: QualityScore = QualityScore(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(QualityScore(value))
        } else {
            Err(Error::InvalidInput(format!(
                "quality score {value} outside [0, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QualityScore {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        QualityScore::new(v)
    }
}

impl From<QualityScore> for f64 {
    fn from(s: QualityScore) -> f64 {
        s.0
    }
}

/// Reference-free quality estimate of a hypothesis given its source.
pub trait QualityScorer: Send + Sync {
    fn score(&self, source: &str, hypothesis: &str) -> Result<QualityScore>;
}

/// Scores a token sequence; an empty hypothesis scores zero.
pub fn score_sequence<M, S>(
    model: &M,
    scorer: &S,
    source: &str,
    seq: &TokenSequence,
) -> Result<QualityScore>
where
    M: LanguageModel + ?Sized,
    S: QualityScorer + ?Sized,
{
    let hypothesis = model.decode(&seq.continuation)?;
    if hypothesis.is_empty() {
        return Ok(QualityScore::ZERO);
    }
    scorer.score(source, &hypothesis)
}

/// `ln` that maps zero probability to `-inf`.
pub(crate) fn ln_prob(p: f64) -> f64 {
    if p > 0.0 {
        ln(p)
    } else {
        f64::NEG_INFINITY
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn tag(&self) -> &str {
        (**self).tag()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> TokenId {
        (**self).eos()
    }
    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).encode(text)
    }
    fn decode(&self, ids: &[TokenId]) -> Result<String> {
        (**self).decode(ids)
    }
    fn next_token_logits(&self, seq: &TokenSequence, k: TopK) -> Result<LogitsResult> {
        (**self).next_token_logits(seq, k)
    }
    fn teacher_forced_logprobs(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        (**self).teacher_forced_logprobs(seq)
    }
    fn token_logprob(&self, prefix: &TokenSequence, token: TokenId) -> Result<f64> {
        (**self).token_logprob(prefix, token)
    }
    fn sample_rollout(
        &self,
        seq: &TokenSequence,
        temperature: f64,
        max_len: usize,
        seed: u64,
    ) -> Result<TokenSequence> {
        (**self).sample_rollout(seq, temperature, max_len, seed)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for alloc::boxed::Box<T> {
    fn tag(&self) -> &str {
        (**self).tag()
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos(&self) -> TokenId {
        (**self).eos()
    }
    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).encode(text)
    }
    fn decode(&self, ids: &[TokenId]) -> Result<String> {
        (**self).decode(ids)
    }
    fn next_token_logits(&self, seq: &TokenSequence, k: TopK) -> Result<LogitsResult> {
        (**self).next_token_logits(seq, k)
    }
    fn teacher_forced_logprobs(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        (**self).teacher_forced_logprobs(seq)
    }
    fn token_logprob(&self, prefix: &TokenSequence, token: TokenId) -> Result<f64> {
        (**self).token_logprob(prefix, token)
    }
    fn sample_rollout(
        &self,
        seq: &TokenSequence,
        temperature: f64,
        max_len: usize,
        seed: u64,
    ) -> Result<TokenSequence> {
        (**self).sample_rollout(seq, temperature, max_len, seed)
    }
}

impl<T: QualityScorer + ?Sized> QualityScorer for &T {
    fn score(&self, source: &str, hypothesis: &str) -> Result<QualityScore> {
        (**self).score(source, hypothesis)
    }
}

impl<T: QualityScorer + ?Sized> QualityScorer for alloc::boxed::Box<T> {
    fn score(&self, source: &str, hypothesis: &str) -> Result<QualityScore> {
        (**self).score(source, hypothesis)
    }
}
