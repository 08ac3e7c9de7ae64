//! Implicit process rewards from a (policy, reference) model pair.
//!
//! With `β` the reward scale, the per-token reward is
//! `r_t = β·(ln π(y_t | y_<t) − ln π_ref(y_t | y_<t))` and the cumulative
//! reward `q_t = Σ_{i≤t} r_i`, so `q_T` telescopes to the sequence-level
//! log-likelihood ratio `β·ln(π(y) / π_ref(y))`. When the policy is a
//! DPO-style optimum `q_t` is also `β·ln E_ref[exp(r(y)/β) | y_≤t]`; that
//! identity depends on training and is not checked here.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{log_sigmoid, sigmoid};
use crate::pairgen::PreferencePair;
use crate::provider::check_sequence;
use crate::{Error, LanguageModel, QualityScorer, Result, TokenId, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub beta: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            beta: crate::DEFAULT_BETA,
        }
    }
}

impl RewardConfig {
    pub fn new(beta: f64) -> Result<Self> {
        let cfg = RewardConfig { beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta > 0.0 && self.beta.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )))
        }
    }
}

/// Per-token implicit rewards of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub tokens: Vec<TokenId>,
    pub token_texts: Vec<String>,
    pub per_token_r: Vec<f64>,
    pub cumulative_q: Vec<f64>,
    /// `β·(ln π(y) − ln π_ref(y))`, summed independently of `per_token_r`.
    pub sequence_logratio: f64,
    pub weighted_sequence_reward: f64,
}

impl RewardTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.cumulative_q.last().copied().unwrap_or(0.0)
    }
}

/// Fails unless both models share `seq`'s tokenizer.
pub(crate) fn check_pair<P, R>(seq: &TokenSequence, policy: &P, reference: &R) -> Result<()>
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
    check_sequence(policy, seq)
}

/// Teacher-forces both models along `seq` and returns `(policy, reference)`
/// log-probabilities.
fn paired_logprobs<P, R>(
    seq: &TokenSequence,
    policy: &P,
    reference: &R,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    check_pair(seq, policy, reference)?;
    let lp = policy.teacher_forced_logprobs(seq)?;
    let lr = reference.teacher_forced_logprobs(seq)?;
    if lp.len() != seq.continuation.len() || lr.len() != seq.continuation.len() {
        return Err(Error::ProtocolMismatch(format!(
            "teacher forcing returned {} / {} values for {} tokens",
            lp.len(),
            lr.len(),
            seq.continuation.len()
        )));
    }
    Ok((lp, lr))
}

/// `r_t` for every continuation token, plus cumulative and sequence-level
/// rewards.
pub fn per_token_rewards<P, R>(
    seq: &TokenSequence,
    policy: &P,
    reference: &R,
    cfg: &RewardConfig,
) -> Result<RewardTrace>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    cfg.validate()?;
    let (lp, lr) = paired_logprobs(seq, policy, reference)?;
    let per_token_r: Vec<f64> = lp
        .iter()
        .zip(&lr)
        .map(|(p, r)| cfg.beta * (p - r))
        .collect();
    let cumulative_q: Vec<f64> = per_token_r
        .iter()
        .scan(0.0, |q, r| {
            *q += r;
            Some(*q)
        })
        .collect();
    let sequence_logratio = cfg.beta * (lp.iter().sum::<f64>() - lr.iter().sum::<f64>());
    let token_texts = seq
        .continuation
        .iter()
        .map(|&t| token_text(policy, t))
        .collect::<Result<Vec<_>>>()?;
    let weighted_sequence_reward = weighted_reward(&per_token_r);
    Ok(RewardTrace {
        tokens: seq.continuation.clone(),
        token_texts,
        per_token_r,
        cumulative_q,
        sequence_logratio,
        weighted_sequence_reward,
    })
}

fn token_text<M: LanguageModel + ?Sized>(model: &M, t: TokenId) -> Result<String> {
    if t == model.eos() {
        Ok(String::from("</s>"))
    } else {
        model.decode(&[t])
    }
}

/// `Σ_t r_t / (t + 1)` over 0-based continuation positions.
pub fn weighted_reward(per_token_r: &[f64]) -> f64 {
    per_token_r
        .iter()
        .enumerate()
        .map(|(t, r)| r / (t + 1) as f64)
        .sum()
}

pub fn weighted_sequence_reward(trace: &RewardTrace) -> f64 {
    weighted_reward(&trace.per_token_r)
}

/// Bradley–Terry probability that the first outcome is preferred:
/// `exp(r_w) / (exp(r_w) + exp(r_l)) = σ(r_w − r_l)`.
pub fn bt_preference_prob(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

/// Preference probability between two trajectories from their summed
/// per-token rewards.
pub fn trajectory_preference_prob(trace_w: &RewardTrace, trace_l: &RewardTrace) -> f64 {
    bt_preference_prob(trace_w.sequence_logratio, trace_l.sequence_logratio)
}

/// Outcome-model log-likelihood `ln σ(r_w − r_l)` averaged over pairs.
pub fn orm_log_likelihood(rewards: &[(f64, f64)]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::InvalidInput("no reward pairs".into()));
    }
    Ok(rewards.iter().map(|(w, l)| log_sigmoid(w - l)).sum::<f64>() / rewards.len() as f64)
}

/// DPO loss without gradients: the mean over pairs of
/// `−ln σ(β·Δ_chosen − β·Δ_rejected)` where `Δ = ln π(y) − ln π_ref(y)` over
/// the full rollouts.
pub fn dpo_loss_forward<P, R>(
    pairs: &[PreferencePair],
    policy: &P,
    reference: &R,
    cfg: &RewardConfig,
) -> Result<f64>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no preference pairs".into()));
    }
    cfg.validate()?;
    let mut total = 0.0;
    for pair in pairs {
        let margin = sequence_logratio(&pair.chosen_rollout, policy, reference, cfg)?
            - sequence_logratio(&pair.rejected_rollout, policy, reference, cfg)?;
        total += -log_sigmoid(margin);
    }
    Ok(total / pairs.len() as f64)
}

fn sequence_logratio<P, R>(
    seq: &TokenSequence,
    policy: &P,
    reference: &R,
    cfg: &RewardConfig,
) -> Result<f64>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    let (lp, lr) = paired_logprobs(seq, policy, reference)?;
    Ok(cfg.beta * (lp.iter().sum::<f64>() - lr.iter().sum::<f64>()))
}

/// Per-token credit assignment for one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditReport {
    pub source_text: String,
    pub hypothesis_text: String,
    pub tokens: Vec<String>,
    pub rewards: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub weighted_reward: f64,
    pub quality: Option<f64>,
}

pub fn credit_report<P, R>(
    seq: &TokenSequence,
    policy: &P,
    reference: &R,
    cfg: &RewardConfig,
    scorer: Option<&dyn QualityScorer>,
) -> Result<CreditReport>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    let trace = per_token_rewards(seq, policy, reference, cfg)?;
    let (source_text, hypothesis_text) = crate::detokenize(policy, seq)?;
    let quality = match scorer {
        Some(s) => Some(crate::provider::score_sequence(policy, s, &source_text, seq)?.value()),
        None => None,
    };
    Ok(CreditReport {
        source_text,
        hypothesis_text,
        tokens: trace.token_texts,
        rewards: trace.per_token_r,
        cumulative: trace.cumulative_q,
        weighted_reward: trace.weighted_sequence_reward,
        quality,
    })
}
