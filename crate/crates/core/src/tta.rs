//! Reward-guided decoding.
//!
//! At each step the generator proposes its top-`k` next tokens. Each
//! candidate `a` gets the process reward `r([s_<t, a])` from a PRM
//! (policy, reference) pair; rewards are softmax-normalized within the
//! window and blended with the generator probability:
//!
//! ```text
//! score(a) = LM(a | s_<t) + w · softmax_k(r)(a)
//! ```
//!
//! The highest score is appended. With `w = 0` this is greedy decoding.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{exp, ln, softmax};
use crate::provider::score_sequence;
use crate::{Error, LanguageModel, QualityScorer, Result, TokenId, TokenSequence, TopK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    #[default]
    RewardGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Weight of the normalized reward.
    pub w: f64,
    /// Candidate window.
    pub k: usize,
    pub max_len: usize,
    pub mode: DecodeMode,
    /// Reward scale of the PRM pair.
    pub beta: f64,
    /// Blend `ln LM(a) + w · ln softmax(r)(a)` instead of probabilities.
    pub log_space: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            w: 0.3,
            k: 10,
            max_len: crate::DEFAULT_MAX_LEN,
            mode: DecodeMode::RewardGuided,
            beta: crate::DEFAULT_BETA,
            log_space: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidConfig(format!("w must be >= 0, got {}", self.w)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub token: TokenId,
    pub lm_prob: f64,
    pub reward: f64,
    pub normalized_reward: f64,
    pub score: f64,
}

fn check_prm_pair<P, R>(policy: &P, reference: &R) -> Result<()>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    if policy.tag() != reference.tag() {
        return Err(Error::TokenizerMismatch {
            left: policy.tag().into(),
            right: reference.tag().into(),
        });
    }
    Ok(())
}

/// Single-token reward `β·(ln π(a|prefix) − ln π_ref(a|prefix))`, valid when
/// the PRM shares the generator's tokenizer.
pub fn shared_reward<P, R>(
    prefix: &TokenSequence,
    token: TokenId,
    prm_policy: &P,
    prm_reference: &R,
    beta: f64,
) -> Result<f64>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    Ok(beta * (prm_policy.token_logprob(prefix, token)? - prm_reference.token_logprob(prefix, token)?))
}

/// Reward of appending `token` when the PRM may use a different tokenizer:
/// `q(PRM tokens of prefix + a) − q(PRM tokens of prefix)`, where `q` is the
/// cumulative implicit reward. Tokens shared by both tokenizations cancel and
/// are not evaluated.
pub fn bridged_reward<G, P, R>(
    prefix: &TokenSequence,
    token: TokenId,
    generator: &G,
    prm_policy: &P,
    prm_reference: &R,
    beta: f64,
) -> Result<f64>
where
    G: LanguageModel + ?Sized,
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    check_prm_pair(prm_policy, prm_reference)?;
    let source = generator.decode(&prefix.prompt)?;
    let prefix_text = generator.decode(&prefix.continuation)?;
    let prompt = prm_policy.encode(&source)?;
    let before = prm_policy.encode(&prefix_text)?;
    let mut after = if token == generator.eos() {
        let mut ids = before.clone();
        ids.push(prm_policy.eos());
        ids
    } else {
        let mut text = prefix_text;
        text.push_str(&generator.decode(&[token])?);
        prm_policy.encode(&text)?
    };
    let common = before
        .iter()
        .zip(&after)
        .take_while(|(a, b)| a == b)
        .count();
    let tail_q = |ids: Vec<TokenId>| -> Result<f64> {
        if ids.len() == common {
            return Ok(0.0);
        }
        let mut seq = TokenSequence::new(prm_policy.tag(), prompt.clone());
        seq.continuation = ids;
        let lp = prm_policy.teacher_forced_logprobs(&seq)?;
        let lr = prm_reference.teacher_forced_logprobs(&seq)?;
        Ok(lp[common..]
            .iter()
            .zip(&lr[common..])
            .map(|(p, r)| beta * (p - r))
            .sum())
    };
    let after_q = tail_q(core::mem::take(&mut after))?;
    let before_q = tail_q(before)?;
    Ok(after_q - before_q)
}

/// Scores the generator's top-`k` candidates after `prefix`, best first.
pub fn score_candidates<G, P, R>(
    prefix: &TokenSequence,
    generator: &G,
    prm_policy: &P,
    prm_reference: &R,
    cfg: &DecodeConfig,
) -> Result<Vec<ScoredCandidate>>
where
    G: LanguageModel + ?Sized,
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    cfg.validate()?;
    if prefix.terminated {
        return Err(Error::Terminated);
    }
    let window = generator.next_token_logits(prefix, TopK::Top(cfg.k))?;
    if window.candidates.is_empty() {
        return Err(Error::DegenerateDistribution);
    }
    let rewards: Vec<f64> = match cfg.mode {
        DecodeMode::Greedy => alloc::vec![0.0; window.candidates.len()],
        DecodeMode::RewardGuided => {
            check_prm_pair(prm_policy, prm_reference)?;
            let shared = generator.tag() == prm_policy.tag();
            window
                .candidates
                .iter()
                .map(|c| {
                    if shared {
                        shared_reward(prefix, c.token, prm_policy, prm_reference, cfg.beta)
                    } else {
                        bridged_reward(prefix, c.token, generator, prm_policy, prm_reference, cfg.beta)
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    let normalized = softmax(&rewards);
    let mut scored: Vec<ScoredCandidate> = window
        .candidates
        .iter()
        .zip(rewards.iter().zip(&normalized))
        .map(|(c, (&reward, &normalized_reward))| {
            let lm_prob = exp(c.logprob);
            let score = match (cfg.mode, cfg.log_space) {
                (DecodeMode::Greedy, _) => lm_prob,
                (DecodeMode::RewardGuided, false) => lm_prob + cfg.w * normalized_reward,
                (DecodeMode::RewardGuided, true) => c.logprob + cfg.w * ln(normalized_reward),
            };
            ScoredCandidate {
                token: c.token,
                lm_prob,
                reward,
                normalized_reward,
                score,
            }
        })
        .collect();
    // Stable: equal (score, lm_prob) keep the generator's logit order.
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.lm_prob.total_cmp(&a.lm_prob))
    });
    Ok(scored)
}

/// Decodes `source_text` until EOS or `max_len` tokens.
pub fn decode<G, P, R>(
    source_text: &str,
    generator: &G,
    prm_policy: &P,
    prm_reference: &R,
    cfg: &DecodeConfig,
) -> Result<TokenSequence>
where
    G: LanguageModel + ?Sized,
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    cfg.validate()?;
    let mut seq = crate::tokenize(generator, source_text, "", false)?;
    while !seq.terminated && seq.continuation.len() < cfg.max_len {
        let best = score_candidates(&seq, generator, prm_policy, prm_reference, cfg)?[0].token;
        seq.push(best, generator.eos());
    }
    Ok(seq)
}

/// One decoding configuration evaluated under every `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub task: String,
    /// Mean quality per column.
    pub scores: Vec<f64>,
}

/// Mean quality grid: rows are configurations, columns are `w` values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub w_values: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn merge(&mut self, other: SweepReport) -> Result<()> {
        if self.rows.is_empty() && self.w_values.is_empty() {
            *self = other;
            return Ok(());
        }
        if self.w_values != other.w_values {
            return Err(Error::InvalidInput("sweep columns differ".into()));
        }
        self.rows.extend(other.rows);
        Ok(())
    }
}

/// The default `w` grid.
pub const DEFAULT_W_GRID: [f64; 4] = [0.0, 0.3, 0.5, 0.7];

/// Decodes every source under every `w` and reports the mean scorer quality.
#[allow(clippy::too_many_arguments)]
pub fn sweep_w<G, P, R, S>(
    sources: &[&str],
    generator: &G,
    prm_policy: &P,
    prm_reference: &R,
    base_cfg: &DecodeConfig,
    w_values: &[f64],
    scorer: &S,
    label: &str,
    task: &str,
) -> Result<SweepReport>
where
    G: LanguageModel + ?Sized,
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
    S: QualityScorer + ?Sized,
{
    if w_values.is_empty() {
        return Err(Error::InvalidInput("no w values".into()));
    }
    let mut scores = Vec::with_capacity(w_values.len());
    for &w in w_values {
        let cfg = DecodeConfig { w, ..base_cfg.clone() };
        let mut total = 0.0;
        for source in sources {
            let seq = decode(source, generator, prm_policy, prm_reference, &cfg)?;
            total += score_sequence(generator, scorer, source, &seq)?.value();
        }
        scores.push(if sources.is_empty() {
            0.0
        } else {
            total / sources.len() as f64
        });
    }
    Ok(SweepReport {
        w_values: w_values.to_vec(),
        rows: alloc::vec![SweepRow {
            label: label.into(),
            task: task.into(),
            scores,
        }],
    })
}
