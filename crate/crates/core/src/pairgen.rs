//! Token-level preference pairs by approximate Monte Carlo tree search.
//!
//! Each cycle works on the committed prefix (selection is implicit: the
//! prompt plus every token committed so far):
//!
//! 1. **Expand** the two highest-logit next tokens into nodes.
//! 2. **Simulate** each node: score `n` seeded rollouts and take the mean as
//!    the node value `V` (or, in exhaustive mode, the exact expectation over
//!    every continuation).
//! 3. **Back-propagate**: the node with the higher `V` wins and its token is
//!    committed to the prefix.
//! 4. **Emit** a pair from the best rollout of each node when the two
//!    retained scores differ by an amount inside `[gap_min, gap_max]`.
//!
//! Cycles repeat until EOS is committed or the prefix reaches `max_len`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{exp, fnv1a, hash_words, log_sum_exp};
use crate::provider::score_sequence;
use crate::{
    Error, LanguageModel, QualityScore, QualityScorer, Result, TokenId, TokenSequence, TopK,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Token,
    Sequence,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Token => "token",
            Level::Sequence => "sequence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    /// `n_rollouts` sampled rollouts per node.
    #[default]
    Sampled,
    /// Exact expectation over all continuations (enumerable providers only).
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairgenConfig {
    pub n_rollouts: usize,
    pub temperature: f64,
    pub gap_min: f64,
    pub gap_max: f64,
    pub max_len: usize,
    pub simulation_mode: SimulationMode,
    pub seed: u64,
    /// Largest number of continuations exhaustive simulation may enumerate.
    pub exhaustive_cap: usize,
    /// Also emit a sequence-level copy of every token-level pair.
    pub sequence_level_twins: bool,
}

impl Default for PairgenConfig {
    fn default() -> Self {
        PairgenConfig {
            n_rollouts: 3,
            temperature: crate::DEFAULT_TEMPERATURE,
            gap_min: 0.04,
            gap_max: 0.4,
            max_len: crate::DEFAULT_MAX_LEN,
            simulation_mode: SimulationMode::Sampled,
            seed: 0,
            exhaustive_cap: 100_000,
            sequence_level_twins: false,
        }
    }
}

impl PairgenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_rollouts == 0 {
            return bad("n_rollouts must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0 <= self.gap_min && self.gap_min < self.gap_max && self.gap_max <= 1.0) {
            return bad(format!(
                "need 0 <= gap_min < gap_max <= 1, got [{}, {}]",
                self.gap_min, self.gap_max
            ));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if self.exhaustive_cap == 0 {
            return bad("exhaustive_cap must be positive".into());
        }
        Ok(())
    }
}

/// Seed of rollout `index` for the node in `slot` at prefix length
/// `prefix_len`.
pub fn derive_seed(seed: u64, prefix_len: usize, slot: usize, index: usize) -> u64 {
    hash_words(&[seed, prefix_len as u64, slot as u64, index as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub sequence: TokenSequence,
    pub score: QualityScore,
}

/// An expanded child of the committed prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    /// Expansion slot, 0 for the higher-logit token.
    pub slot: usize,
    pub token: TokenId,
    pub logit: f64,
    pub prefix: TokenSequence,
    pub rollouts: Vec<Rollout>,
    /// Mean rollout score (sampled) or exact expected score (exhaustive).
    pub value: Option<f64>,
}

impl SearchNode {
    /// Retained rollout: the best-scoring one, earliest on ties.
    pub fn best_rollout(&self) -> Option<&Rollout> {
        self.rollouts
            .iter()
            .reduce(|best, r| if r.score > best.score { r } else { best })
    }
}

/// Two top-logit children of `prefix`, ordered by descending logit then
/// ascending token id.
pub fn expand<M: LanguageModel + ?Sized>(
    prefix: &TokenSequence,
    provider: &M,
) -> Result<(SearchNode, SearchNode)> {
    if prefix.terminated {
        return Err(Error::Terminated);
    }
    let logits = provider.next_token_logits(prefix, TopK::Top(2))?;
    let [a, b] = match logits.candidates.as_slice() {
        [a, b, ..] => [*a, *b],
        _ => return Err(Error::DegenerateDistribution),
    };
    let node = |slot, c: crate::Candidate| SearchNode {
        slot,
        token: c.token,
        logit: c.logit,
        prefix: prefix.clone(),
        rollouts: Vec::new(),
        value: None,
    };
    Ok((node(0, a), node(1, b)))
}

/// Assigns the node value from rollouts of `prefix + token`.
pub fn simulate<M, S>(
    node: SearchNode,
    source_text: &str,
    cfg: &PairgenConfig,
    provider: &M,
    scorer: &S,
) -> Result<SearchNode>
where
    M: LanguageModel + ?Sized,
    S: QualityScorer + ?Sized,
{
    if !node.rollouts.is_empty() || node.value.is_some() {
        return Err(Error::InvalidInput("node is already simulated".into()));
    }
    let start = node.prefix.extended(node.token, provider.eos());
    let (rollouts, value) = match cfg.simulation_mode {
        SimulationMode::Sampled => sampled(&node, &start, source_text, cfg, provider, scorer)?,
        SimulationMode::Exhaustive => exhaustive(&start, source_text, cfg, provider, scorer)?,
    };
    Ok(SearchNode {
        rollouts,
        value: Some(value),
        ..node
    })
}

fn sampled<M, S>(
    node: &SearchNode,
    start: &TokenSequence,
    source_text: &str,
    cfg: &PairgenConfig,
    provider: &M,
    scorer: &S,
) -> Result<(Vec<Rollout>, f64)>
where
    M: LanguageModel + ?Sized,
    S: QualityScorer + ?Sized,
{
    let prefix_len = node.prefix.continuation.len();
    let mut rollouts = Vec::with_capacity(cfg.n_rollouts);
    for i in 0..cfg.n_rollouts {
        let sequence = if start.terminated || start.continuation.len() >= cfg.max_len {
            start.clone()
        } else {
            let seed = derive_seed(cfg.seed, prefix_len, node.slot, i);
            provider.sample_rollout(start, cfg.temperature, cfg.max_len, seed)?
        };
        let score = score_sequence(provider, scorer, source_text, &sequence)?;
        rollouts.push(Rollout { sequence, score });
    }
    let value =
        rollouts.iter().map(|r| r.score.value()).sum::<f64>() / rollouts.len() as f64;
    Ok((rollouts, value))
}

/// Every continuation of `start` reachable under the tempered distribution,
/// with its natural-log probability, in depth-first candidate order.
pub fn enumerate_continuations<M: LanguageModel + ?Sized>(
    start: &TokenSequence,
    temperature: f64,
    max_len: usize,
    cap: usize,
    provider: &M,
) -> Result<Vec<(TokenSequence, f64)>> {
    let mut leaves = Vec::new();
    let mut stack = vec![(start.clone(), 0.0)];
    while let Some((seq, logp)) = stack.pop() {
        if seq.terminated || seq.continuation.len() >= max_len {
            if leaves.len() == cap {
                return Err(Error::ExhaustiveTooLarge { cap });
            }
            leaves.push((seq, logp));
            continue;
        }
        let logits = provider.next_token_logits(&seq, TopK::All)?;
        let scaled: Vec<f64> = logits
            .candidates
            .iter()
            .map(|c| c.logit / temperature)
            .collect();
        let norm = log_sum_exp(&scaled);
        for (c, s) in logits.candidates.iter().zip(&scaled).rev() {
            stack.push((seq.extended(c.token, provider.eos()), logp + s - norm));
        }
    }
    Ok(leaves)
}

fn exhaustive<M, S>(
    start: &TokenSequence,
    source_text: &str,
    cfg: &PairgenConfig,
    provider: &M,
    scorer: &S,
) -> Result<(Vec<Rollout>, f64)>
where
    M: LanguageModel + ?Sized,
    S: QualityScorer + ?Sized,
{
    let leaves =
        enumerate_continuations(start, cfg.temperature, cfg.max_len, cfg.exhaustive_cap, provider)?;
    let mut value = 0.0;
    let mut best: Option<Rollout> = None;
    let mut worst: Option<Rollout> = None;
    for (sequence, logp) in leaves {
        let score = score_sequence(provider, scorer, source_text, &sequence)?;
        value += exp(logp) * score.value();
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Rollout {
                sequence: sequence.clone(),
                score,
            });
        }
        if worst.as_ref().is_none_or(|w| score < w.score) {
            worst = Some(Rollout { sequence, score });
        }
    }
    let rollouts = best.into_iter().chain(worst).collect();
    Ok((rollouts, value.clamp(0.0, 1.0)))
}

/// Orders two simulated nodes by value; a tie goes to the lower slot.
pub fn backprop_select(a: SearchNode, b: SearchNode) -> Result<(SearchNode, SearchNode)> {
    let (va, vb) = match (a.value, b.value) {
        (Some(va), Some(vb)) => (va, vb),
        _ => return Err(Error::InvalidInput("node value is unset".into())),
    };
    let b_wins = vb > va || (vb == va && b.slot < a.slot);
    Ok(if b_wins { (b, a) } else { (a, b) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    GapTooSmall,
    GapTooLarge,
    Inverted,
}

impl RejectReason {
    pub const ALL: [RejectReason; 3] = [
        RejectReason::GapTooSmall,
        RejectReason::GapTooLarge,
        RejectReason::Inverted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::GapTooSmall => "gap_too_small",
            RejectReason::GapTooLarge => "gap_too_large",
            RejectReason::Inverted => "inverted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmitDecision {
    Emit { chosen: Rollout, rejected: Rollout },
    Reject {
        reason: RejectReason,
        chosen_score: f64,
        rejected_score: f64,
    },
}

/// Applies the score-gap filter to the retained rollouts of the winner and
/// loser.
pub fn emit_pair(winner: &SearchNode, loser: &SearchNode, cfg: &PairgenConfig) -> Result<EmitDecision> {
    let (w, l) = match (winner.best_rollout(), loser.best_rollout()) {
        (Some(w), Some(l)) => (w, l),
        _ => return Err(Error::InvalidInput("node has no rollouts".into())),
    };
    let (ws, ls) = (w.score.value(), l.score.value());
    let gap = ws - ls;
    let reason = if gap < 0.0 {
        Some(RejectReason::Inverted)
    } else if gap < cfg.gap_min || gap == 0.0 {
        Some(RejectReason::GapTooSmall)
    } else if gap > cfg.gap_max {
        Some(RejectReason::GapTooLarge)
    } else {
        None
    };
    Ok(match reason {
        Some(reason) => EmitDecision::Reject {
            reason,
            chosen_score: ws,
            rejected_score: ls,
        },
        None => EmitDecision::Emit {
            chosen: w.clone(),
            rejected: l.clone(),
        },
    })
}

/// A preference record: two rollouts sharing `prefix` that diverge at the
/// next token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub lang_pair: String,
    pub level: Level,
    pub source_text: String,
    pub prefix: TokenSequence,
    pub prefix_text: String,
    pub chosen_token: TokenId,
    pub rejected_token: TokenId,
    pub chosen_rollout: TokenSequence,
    pub rejected_rollout: TokenSequence,
    pub chosen_text: String,
    pub rejected_text: String,
    pub chosen_score: QualityScore,
    pub rejected_score: QualityScore,
    pub seed: u64,
}

impl PreferencePair {
    /// Checks every structural invariant of an emitted pair.
    pub fn check(&self, cfg: &PairgenConfig) -> core::result::Result<(), String> {
        let n = self.prefix.continuation.len();
        if self.chosen_token == self.rejected_token {
            return Err("chosen and rejected tokens are equal".into());
        }
        for (name, r, t) in [
            ("chosen", &self.chosen_rollout, self.chosen_token),
            ("rejected", &self.rejected_rollout, self.rejected_token),
        ] {
            if !r.extends(&self.prefix) || r.continuation.get(n) != Some(&t) {
                return Err(format!("{name} rollout does not extend prefix + token"));
            }
        }
        let gap = self.chosen_score.value() - self.rejected_score.value();
        if !(self.chosen_score > self.rejected_score) {
            return Err("chosen score does not exceed rejected score".into());
        }
        if gap < cfg.gap_min || gap > cfg.gap_max {
            return Err(format!("score gap {gap} outside [{}, {}]", cfg.gap_min, cfg.gap_max));
        }
        Ok(())
    }

    /// Sequence-level copy of a token-level pair.
    pub fn sequence_twin(&self) -> PreferencePair {
        PreferencePair {
            pair_id: format!("{}-seq", self.pair_id),
            level: Level::Sequence,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedCandidate {
    pub step: usize,
    pub chosen_token: TokenId,
    pub rejected_token: TokenId,
    pub reason: RejectReason,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

/// Everything one tree produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeOutcome {
    pub pairs: Vec<PreferencePair>,
    pub rejected: Vec<RejectedCandidate>,
    /// Committed trajectory.
    pub trajectory: TokenSequence,
    /// Expansion cycles run; equals `pairs + rejected` (twins excluded).
    pub cycles: usize,
    /// Steps with a single possible token, committed without expansion.
    pub forced_steps: usize,
    /// The two expanded tokens of every cycle.
    pub expanded: Vec<(TokenId, TokenId)>,
}

pub fn pair_id(seed: u64, source_text: &str, step: usize) -> String {
    format!("{:016x}-{:03}", hash_words(&[seed, fnv1a(source_text.as_bytes())]), step)
}

/// Runs the full search for one source sentence.
pub fn build_tree<M, S>(
    source_text: &str,
    lang_pair: &str,
    cfg: &PairgenConfig,
    provider: &M,
    scorer: &S,
) -> Result<TreeOutcome>
where
    M: LanguageModel + ?Sized,
    S: QualityScorer + ?Sized,
{
    cfg.validate()?;
    let mut prefix = crate::tokenize(provider, source_text, "", false)?;
    let eos = provider.eos();
    let mut out = TreeOutcome {
        pairs: Vec::new(),
        rejected: Vec::new(),
        trajectory: prefix.clone(),
        cycles: 0,
        forced_steps: 0,
        expanded: Vec::new(),
    };
    while !prefix.terminated && prefix.continuation.len() < cfg.max_len {
        let (a, b) = match expand(&prefix, provider) {
            Ok(nodes) => nodes,
            Err(Error::DegenerateDistribution) => {
                let only = provider
                    .next_token_logits(&prefix, TopK::Top(1))?
                    .top()
                    .map(|c| c.token)
                    .ok_or(Error::DegenerateDistribution)?;
                prefix.push(only, eos);
                out.forced_steps += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        out.expanded.push((a.token, b.token));
        let a = simulate(a, source_text, cfg, provider, scorer)?;
        let b = simulate(b, source_text, cfg, provider, scorer)?;
        let (winner, loser) = backprop_select(a, b)?;
        let step = prefix.continuation.len();
        match emit_pair(&winner, &loser, cfg)? {
            EmitDecision::Emit { chosen, rejected } => {
                let pair = PreferencePair {
                    pair_id: pair_id(cfg.seed, source_text, step),
                    lang_pair: lang_pair.into(),
                    level: Level::Token,
                    source_text: source_text.into(),
                    prefix_text: provider.decode(&prefix.continuation)?,
                    prefix: prefix.clone(),
                    chosen_token: winner.token,
                    rejected_token: loser.token,
                    chosen_text: provider.decode(&chosen.sequence.continuation)?,
                    rejected_text: provider.decode(&rejected.sequence.continuation)?,
                    chosen_rollout: chosen.sequence,
                    rejected_rollout: rejected.sequence,
                    chosen_score: chosen.score,
                    rejected_score: rejected.score,
                    seed: cfg.seed,
                };
                if cfg.sequence_level_twins {
                    let twin = pair.sequence_twin();
                    out.pairs.push(pair);
                    out.pairs.push(twin);
                } else {
                    out.pairs.push(pair);
                }
            }
            EmitDecision::Reject {
                reason,
                chosen_score,
                rejected_score,
            } => out.rejected.push(RejectedCandidate {
                step,
                chosen_token: winner.token,
                rejected_token: loser.token,
                reason,
                chosen_score,
                rejected_score,
            }),
        }
        out.cycles += 1;
        prefix.push(winner.token, eos);
    }
    out.trajectory = prefix;
    Ok(out)
}
