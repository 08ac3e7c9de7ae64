//! Pairwise accuracy of an implicit reward model.
//!
//! A token-level item compares the per-token rewards of two candidate next
//! tokens after a shared prefix. A sequence-level item compares the
//! weighted sequence rewards of two full continuations. An item is correct
//! only when the chosen side's reward is strictly greater; ties count as
//! incorrect and are reported separately.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::implicit_prm::{check_pair, per_token_rewards, RewardConfig};
use crate::pairgen::{Level, PreferencePair};
use crate::{Error, LanguageModel, Result, TokenId, TokenSequence};

/// One side of a benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchChoice {
    /// Next token after the prefix (token-level items).
    pub token: TokenId,
    /// Full hypothesis text (sequence-level items).
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub pair_id: String,
    pub lang_pair: String,
    pub level: Level,
    pub source_text: String,
    pub provider_tag: String,
    pub prefix_token_ids: Vec<TokenId>,
    pub prefix_text: String,
    pub chosen: BenchChoice,
    pub rejected: BenchChoice,
}

impl BenchItem {
    pub fn from_pair(pair: &PreferencePair) -> Self {
        BenchItem {
            pair_id: pair.pair_id.clone(),
            lang_pair: pair.lang_pair.clone(),
            level: pair.level,
            source_text: pair.source_text.clone(),
            provider_tag: pair.prefix.provider_tag.clone(),
            prefix_token_ids: pair.prefix.continuation.clone(),
            prefix_text: pair.prefix_text.clone(),
            chosen: BenchChoice {
                token: pair.chosen_token,
                text: pair.chosen_text.clone(),
                score: pair.chosen_score.value(),
            },
            rejected: BenchChoice {
                token: pair.rejected_token,
                text: pair.rejected_text.clone(),
                score: pair.rejected_score.value(),
            },
        }
    }

    /// Checks the level-specific invariants. On failure returns the
    /// offending field and a message.
    pub fn validate(&self) -> core::result::Result<(), (&'static str, String)> {
        if self.source_text.is_empty() {
            return Err(("source_text", "empty".into()));
        }
        match self.level {
            Level::Token => {
                if self.chosen.token == self.rejected.token {
                    return Err((
                        "rejected_token_id",
                        "chosen and rejected tokens must differ".into(),
                    ));
                }
            }
            Level::Sequence => {
                for (field, side) in [("chosen_text", &self.chosen), ("rejected_text", &self.rejected)] {
                    if side.text.is_empty() {
                        return Err((field, "empty continuation".into()));
                    }
                    if !side.text.starts_with(&self.prefix_text) {
                        return Err((field, "does not start with prefix_text".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// The same item with chosen and rejected swapped.
    pub fn flipped(&self) -> BenchItem {
        BenchItem {
            chosen: self.rejected.clone(),
            rejected: self.chosen.clone(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    Tie,
}

/// Rewards the model assigns to `(chosen, rejected)`.
pub fn item_rewards<P, R>(
    item: &BenchItem,
    policy: &P,
    reference: &R,
    cfg: &RewardConfig,
) -> Result<(f64, f64)>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    if item.provider_tag != policy.tag() {
        return Err(Error::TokenizerMismatch {
            left: item.provider_tag.clone(),
            right: policy.tag().into(),
        });
    }
    cfg.validate()?;
    let prompt = policy.encode(&item.source_text)?;
    let rewards = match item.level {
        Level::Token => {
            let mut prefix = TokenSequence::new(policy.tag(), prompt);
            prefix.continuation = item.prefix_token_ids.clone();
            check_pair(&prefix, policy, reference)?;
            let step = |t: TokenId| -> Result<f64> {
                Ok(cfg.beta * (policy.token_logprob(&prefix, t)? - reference.token_logprob(&prefix, t)?))
            };
            (step(item.chosen.token)?, step(item.rejected.token)?)
        }
        Level::Sequence => {
            let weighted = |text: &str| -> Result<f64> {
                let mut seq = TokenSequence::new(policy.tag(), prompt.clone());
                seq.continuation = policy.encode(text)?;
                Ok(per_token_rewards(&seq, policy, reference, cfg)?.weighted_sequence_reward)
            };
            (weighted(&item.chosen.text)?, weighted(&item.rejected.text)?)
        }
    };
    if rewards.0.is_nan() || rewards.1.is_nan() {
        return Err(Error::InvalidInput(format!(
            "undefined reward for item {}",
            item.pair_id
        )));
    }
    Ok(rewards)
}

pub fn judge_item<P, R>(
    item: &BenchItem,
    policy: &P,
    reference: &R,
    cfg: &RewardConfig,
) -> Result<Verdict>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    let (c, r) = item_rewards(item, policy, reference, cfg)?;
    Ok(if c > r {
        Verdict::Correct
    } else if c == r {
        Verdict::Tie
    } else {
        Verdict::Incorrect
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    FromEnglish,
    IntoEnglish,
    Other,
}

/// Classifies `"en-de"`, `"de_en"`, `"EN→ZH"` and similar.
pub fn direction(lang_pair: &str) -> Direction {
    let lower = lang_pair.to_ascii_lowercase();
    let mut parts = lower
        .split(['-', '_', '>', '→'])
        .filter(|p| !p.is_empty());
    match (parts.next(), parts.next()) {
        (Some("en"), Some(t)) if t != "en" => Direction::FromEnglish,
        (Some(s), Some("en")) if s != "en" => Direction::IntoEnglish,
        _ => Direction::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub items: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub ties: usize,
    pub errors: usize,
}

impl Tally {
    fn add(&mut self, v: Option<Verdict>) {
        self.items += 1;
        match v {
            Some(Verdict::Correct) => self.correct += 1,
            Some(Verdict::Incorrect) => self.incorrect += 1,
            Some(Verdict::Tie) => self.ties += 1,
            None => self.errors += 1,
        }
    }

    /// `#correct / #items`.
    pub fn accuracy(&self) -> f64 {
        if self.items == 0 {
            0.0
        } else {
            self.correct as f64 / self.items as f64
        }
    }

    pub fn tie_rate(&self) -> f64 {
        if self.items == 0 {
            0.0
        } else {
            self.ties as f64 / self.items as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub per_direction: BTreeMap<String, Tally>,
    /// Unweighted mean accuracy over EN→XX directions.
    pub en_xx: Option<f64>,
    /// Unweighted mean accuracy over XX→EN directions.
    pub xx_en: Option<f64>,
    /// Unweighted mean accuracy over all directions.
    pub average: f64,
    pub totals: Tally,
    /// `#correct / #items` over the whole level.
    pub accuracy: f64,
    pub tie_rate: f64,
}

impl LevelReport {
    fn from_tallies(per_direction: BTreeMap<String, Tally>) -> Self {
        let mean = |filter: &dyn Fn(&str) -> bool| {
            let accs: Vec<f64> = per_direction
                .iter()
                .filter(|(k, _)| filter(k))
                .map(|(_, t)| t.accuracy())
                .collect();
            if accs.is_empty() {
                None
            } else {
                Some(accs.iter().sum::<f64>() / accs.len() as f64)
            }
        };
        let en_xx = mean(&|k| direction(k) == Direction::FromEnglish);
        let xx_en = mean(&|k| direction(k) == Direction::IntoEnglish);
        let average = mean(&|_| true).unwrap_or(0.0);
        let mut totals = Tally::default();
        for t in per_direction.values() {
            totals.items += t.items;
            totals.correct += t.correct;
            totals.incorrect += t.incorrect;
            totals.ties += t.ties;
            totals.errors += t.errors;
        }
        LevelReport {
            en_xx,
            xx_en,
            average,
            accuracy: totals.accuracy(),
            tie_rate: totals.tie_rate(),
            totals,
            per_direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub token: Option<LevelReport>,
    pub sequence: Option<LevelReport>,
}

impl BenchReport {
    /// Folds verdicts (aligned with `items`) into a report. Fatal errors
    /// (see [`Error::is_fatal`]) abort; other item errors are counted.
    pub fn from_verdicts(items: &[BenchItem], verdicts: &[Result<Verdict>]) -> Result<Self> {
        if items.len() != verdicts.len() {
            return Err(Error::InvalidInput("verdict count differs from item count".into()));
        }
        let mut token = BTreeMap::new();
        let mut sequence = BTreeMap::new();
        for (item, v) in items.iter().zip(verdicts) {
            let verdict = match v {
                Ok(v) => Some(*v),
                Err(e) if e.is_fatal() => return Err(e.clone()),
                Err(_) => None,
            };
            let map = match item.level {
                Level::Token => &mut token,
                Level::Sequence => &mut sequence,
            };
            map.entry(item.lang_pair.clone())
                .or_insert_with(Tally::default)
                .add(verdict);
        }
        let level = |m: BTreeMap<String, Tally>| (!m.is_empty()).then(|| LevelReport::from_tallies(m));
        Ok(BenchReport {
            token: level(token),
            sequence: level(sequence),
        })
    }

    pub fn levels(&self) -> impl Iterator<Item = (Level, &LevelReport)> {
        [(Level::Token, &self.token), (Level::Sequence, &self.sequence)]
            .into_iter()
            .filter_map(|(l, r)| r.as_ref().map(|r| (l, r)))
    }

    /// Counts over both levels.
    pub fn totals(&self) -> Tally {
        let mut t = Tally::default();
        for (_, r) in self.levels() {
            t.items += r.totals.items;
            t.correct += r.totals.correct;
            t.incorrect += r.totals.incorrect;
            t.ties += r.totals.ties;
            t.errors += r.totals.errors;
        }
        t
    }
}

/// Judges every item sequentially and folds the report.
pub fn accuracy<P, R>(
    items: &[BenchItem],
    policy: &P,
    reference: &R,
    cfg: &RewardConfig,
) -> Result<BenchReport>
where
    P: LanguageModel + ?Sized,
    R: LanguageModel + ?Sized,
{
    if items.is_empty() {
        return Err(Error::InvalidInput("no benchmark items".into()));
    }
    let verdicts: Vec<Result<Verdict>> = items
        .iter()
        .map(|item| judge_item(item, policy, reference, cfg))
        .collect();
    BenchReport::from_verdicts(items, &verdicts)
}
