//! Exactly enumerable toy providers.
//!
//! Three model shapes are supported:
//!
//! - `table`: one context-free categorical distribution.
//! - `bigram`: a distribution conditioned on the previous token.
//! - `scripted`: a distribution per exact continuation path, used to build
//!   adversarial decoding worlds.
//!
//! Logits are natural-log probabilities, so they are already normalized.
//! [`ToyLmDef`] and [`ToyScorerDef`] are the serializable definitions loaded
//! from model files.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::provider::{check_sequence, ln_prob};
use crate::{
    Error, LanguageModel, LogitsResult, QualityScore, QualityScorer, Result, TokenId,
    TokenSequence, TopK, Vocab,
};

/// Probabilities indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Normalizes non-negative weights; tokens absent from `weights` get zero.
    pub fn from_weights(vocab_size: usize, weights: &[(TokenId, f64)]) -> Result<Self> {
        let mut probs = vec![0.0; vocab_size];
        for &(t, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "weight {w} for token {t} is not a finite non-negative number"
                )));
            }
            let slot = probs.get_mut(t.index()).ok_or(Error::UnknownToken {
                id: t.0,
                vocab_size,
            })?;
            *slot += w;
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidConfig("distribution has no mass".into()));
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Distribution(probs))
    }

    pub fn uniform(vocab_size: usize) -> Self {
        Distribution(vec![1.0 / vocab_size as f64; vocab_size])
    }

    pub fn prob(&self, t: TokenId) -> f64 {
        self.0.get(t.index()).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ContextRule {
    ContextFree,
    Bigram(BTreeMap<TokenId, Distribution>),
    Scripted(BTreeMap<Vec<TokenId>, Distribution>),
}

/// Deterministic toy language model over a string vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    tag: String,
    vocab: Vocab,
    default: Distribution,
    rule: ContextRule,
}

impl ToyLm {
    /// Context-free categorical model.
    pub fn table(tag: impl Into<String>, vocab: Vocab, probs: &[(&str, f64)]) -> Result<Self> {
        let default = dist_from_named(&vocab, probs.iter().map(|&(t, p)| (t, p)))?;
        Ok(ToyLm {
            tag: tag.into(),
            vocab,
            default,
            rule: ContextRule::ContextFree,
        })
    }

    pub fn uniform(tag: impl Into<String>, vocab: Vocab) -> Self {
        ToyLm {
            tag: tag.into(),
            default: Distribution::uniform(vocab.len()),
            vocab,
            rule: ContextRule::ContextFree,
        }
    }

    /// Order-2 model: `next[prev]` applies after token `prev`, `default`
    /// everywhere else. The previous token may come from the prompt.
    pub fn bigram(
        tag: impl Into<String>,
        vocab: Vocab,
        default: Distribution,
        next: BTreeMap<TokenId, Distribution>,
    ) -> Self {
        ToyLm {
            tag: tag.into(),
            vocab,
            default,
            rule: ContextRule::Bigram(next),
        }
    }

    /// Path-keyed model: `paths[c]` applies when the continuation is exactly
    /// `c`, `default` everywhere else.
    pub fn scripted(
        tag: impl Into<String>,
        vocab: Vocab,
        default: Distribution,
        paths: BTreeMap<Vec<TokenId>, Distribution>,
    ) -> Self {
        ToyLm {
            tag: tag.into(),
            vocab,
            default,
            rule: ContextRule::Scripted(paths),
        }
    }

    pub fn from_def(def: &ToyLmDef) -> Result<Self> {
        let vocab = Vocab::new(def.vocab.clone(), &def.eos)?;
        let named = |m: &BTreeMap<String, f64>| {
            dist_from_named(&vocab, m.iter().map(|(k, v)| (k.as_str(), *v)))
        };
        let lookup = |t: &str| {
            vocab
                .id(t)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown token {t:?}")))
        };
        let (default, rule) = match &def.model {
            ModelDef::Table { probs } => (named(probs)?, ContextRule::ContextFree),
            ModelDef::Bigram { default, next } => {
                let mut table = BTreeMap::new();
                for (prev, probs) in next {
                    table.insert(lookup(prev)?, named(probs)?);
                }
                (named(default)?, ContextRule::Bigram(table))
            }
            ModelDef::Scripted { default, rules } => {
                let mut paths = BTreeMap::new();
                for rule in rules {
                    let path = rule
                        .after
                        .iter()
                        .map(|t| lookup(t))
                        .collect::<Result<Vec<_>>>()?;
                    paths.insert(path, named(&rule.probs)?);
                }
                (named(default)?, ContextRule::Scripted(paths))
            }
        };
        Ok(ToyLm {
            tag: def.tag.clone(),
            vocab,
            default,
            rule,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// The distribution the model uses after `seq`.
    pub fn distribution(&self, seq: &TokenSequence) -> &Distribution {
        match &self.rule {
            ContextRule::ContextFree => &self.default,
            ContextRule::Bigram(next) => seq
                .last_token()
                .and_then(|t| next.get(&t))
                .unwrap_or(&self.default),
            ContextRule::Scripted(paths) => {
                paths.get(&seq.continuation).unwrap_or(&self.default)
            }
        }
    }

    /// Exact probability of the continuation given the prompt.
    pub fn sequence_prob(&self, seq: &TokenSequence) -> f64 {
        let mut prefix = seq.truncated(0);
        let mut p = 1.0;
        for &t in &seq.continuation {
            p *= self.distribution(&prefix).prob(t);
            prefix.push(t, self.vocab.eos());
        }
        p
    }
}

fn dist_from_named<'a>(
    vocab: &Vocab,
    probs: impl Iterator<Item = (&'a str, f64)>,
) -> Result<Distribution> {
    let weights = probs
        .map(|(t, p)| {
            vocab
                .id(t)
                .map(|id| (id, p))
                .ok_or_else(|| Error::InvalidConfig(format!("unknown token {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Distribution::from_weights(vocab.len(), &weights)
}

impl LanguageModel for ToyLm {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn eos(&self) -> TokenId {
        self.vocab.eos()
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        self.vocab.encode(text)
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String> {
        self.vocab.decode(ids)
    }

    fn next_token_logits(&self, seq: &TokenSequence, k: TopK) -> Result<LogitsResult> {
        check_sequence(self, seq)?;
        if seq.terminated {
            return Err(Error::Terminated);
        }
        let dist = self.distribution(seq);
        Ok(LogitsResult::from_logits(
            dist.probs()
                .iter()
                .enumerate()
                .map(|(i, &p)| (TokenId(i as u32), ln_prob(p))),
            k,
        ))
    }
}

/// Serializable toy model definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyLmDef {
    pub tag: String,
    pub vocab: Vec<String>,
    pub eos: String,
    pub model: ModelDef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelDef {
    Table {
        probs: BTreeMap<String, f64>,
    },
    Bigram {
        default: BTreeMap<String, f64>,
        next: BTreeMap<String, BTreeMap<String, f64>>,
    },
    Scripted {
        default: BTreeMap<String, f64>,
        rules: Vec<ScriptRule>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    pub after: Vec<String>,
    pub probs: BTreeMap<String, f64>,
}

/// Scoring rule of a [`ToyScorer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreRule {
    /// 1 when the hypothesis equals the reference, else 0.
    ExactMatch,
    /// `1 − d / max(|reference|, |hypothesis|)` with `d` the character edit
    /// distance.
    EditSimilarity,
    /// Fixed score per hypothesis text.
    Lookup {
        scores: BTreeMap<String, f64>,
        #[serde(default)]
        default: f64,
    },
}

/// Serializable toy scorer definition. Without `references` the reference
/// of a source is the source itself (copy task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyScorerDef {
    pub rule: ScoreRule,
    #[serde(default)]
    pub references: Option<BTreeMap<String, String>>,
}

/// Exact, deterministic quality oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScorer {
    rule: ScoreRule,
    references: Option<BTreeMap<String, String>>,
}

impl ToyScorer {
    pub fn new(rule: ScoreRule, references: Option<BTreeMap<String, String>>) -> Result<Self> {
        if let ScoreRule::Lookup { scores, default } = &rule {
            for v in scores.values().chain(core::iter::once(default)) {
                QualityScore::new(*v)?;
            }
        }
        Ok(ToyScorer { rule, references })
    }

    pub fn from_def(def: &ToyScorerDef) -> Result<Self> {
        ToyScorer::new(def.rule.clone(), def.references.clone())
    }

    /// Copy task scored by exact match.
    pub fn copy_exact() -> Self {
        ToyScorer {
            rule: ScoreRule::ExactMatch,
            references: None,
        }
    }

    pub fn edit_similarity(references: BTreeMap<String, String>) -> Self {
        ToyScorer {
            rule: ScoreRule::EditSimilarity,
            references: Some(references),
        }
    }

    fn reference<'a>(&'a self, source: &'a str) -> Result<&'a str> {
        match &self.references {
            None => Ok(source),
            Some(refs) => refs.get(source).map(String::as_str).ok_or_else(|| {
                Error::ScorerUnavailable(format!("no reference for source {source:?}"))
            }),
        }
    }
}

impl QualityScorer for ToyScorer {
    fn score(&self, source: &str, hypothesis: &str) -> Result<QualityScore> {
        if source.is_empty() || hypothesis.is_empty() {
            return Err(Error::InvalidInput(
                "source and hypothesis must be non-empty".into(),
            ));
        }
        let value = match &self.rule {
            ScoreRule::ExactMatch => {
                if self.reference(source)? == hypothesis {
                    1.0
                } else {
                    0.0
                }
            }
            ScoreRule::EditSimilarity => edit_similarity(self.reference(source)?, hypothesis),
            ScoreRule::Lookup { scores, default } => {
                scores.get(hypothesis).copied().unwrap_or(*default)
            }
        };
        QualityScore::new(value)
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let next = (row[j + 1] + 1)
                .min(row[j] + 1)
                .min(diag + usize::from(ca != cb));
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

pub fn edit_similarity(reference: &str, hypothesis: &str) -> f64 {
    let longest = reference.chars().count().max(hypothesis.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(reference, hypothesis) as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ln;

    fn abe() -> ToyLm {
        let vocab = Vocab::new(vec!["EOS".into(), "A".into(), "B".into()], "EOS").unwrap();
        ToyLm::table("abe", vocab, &[("A", 0.6), ("B", 0.3), ("EOS", 0.1)]).unwrap()
    }

    fn prompt(lm: &ToyLm) -> TokenSequence {
        TokenSequence::new(lm.tag(), vec![TokenId(1)])
    }

    #[test]
    fn table_top2() {
        let lm = abe();
        let r = lm.next_token_logits(&prompt(&lm), TopK::Top(2)).unwrap();
        assert_eq!(r.candidates.len(), 2);
        assert_eq!(r.candidates[0].token, TokenId(1));
        assert_eq!(r.candidates[1].token, TokenId(2));
        assert!((r.candidates[0].logprob - 0.6f64.ln()).abs() < 1e-12);
        assert!((r.candidates[1].logprob - 0.3f64.ln()).abs() < 1e-12);
        assert!(!r.complete);
    }

    #[test]
    fn uniform_orders_by_id() {
        let lm = ToyLm::uniform("u4", Vocab::chars("abc", "$").unwrap());
        let seq = TokenSequence::new("u4", vec![TokenId(1)]);
        let r = lm.next_token_logits(&seq, TopK::All).unwrap();
        let ids: Vec<u32> = r.candidates.iter().map(|c| c.token.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        for c in &r.candidates {
            assert!((c.logprob - 0.25f64.ln()).abs() < 1e-12);
        }
        assert!(r.complete);
    }

    #[test]
    fn terminated_sequence_is_rejected() {
        let lm = abe();
        let seq = prompt(&lm).extended(lm.eos(), lm.eos());
        assert_eq!(lm.next_token_logits(&seq, TopK::All), Err(Error::Terminated));
        assert_eq!(lm.sample_rollout(&seq, 1.0, 8, 0), Err(Error::Terminated));
    }

    #[test]
    fn teacher_forcing_uses_table() {
        let lm = abe();
        let mut seq = prompt(&lm);
        seq.push(TokenId(1), lm.eos());
        seq.push(TokenId(2), lm.eos());
        seq.push(TokenId(0), lm.eos());
        let lp = lm.teacher_forced_logprobs(&seq).unwrap();
        let want = [ln(0.6), ln(0.3), ln(0.1)];
        for (a, b) in lp.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(lm.teacher_forced_logprobs(&prompt(&lm)).is_err());
    }

    #[test]
    fn forced_eos_rollout() {
        let vocab = Vocab::chars("ab", "$").unwrap();
        let lm = ToyLm::table("eos", vocab, &[("$", 1.0)]).unwrap();
        let seq = TokenSequence::new("eos", vec![TokenId(1)]);
        let out = lm.sample_rollout(&seq, 0.95, 10, 3).unwrap();
        assert_eq!(out.continuation, vec![TokenId(0)]);
        assert!(out.terminated);
    }

    #[test]
    fn rollout_cap() {
        let vocab = Vocab::chars("ab", "$").unwrap();
        let lm = ToyLm::table("never", vocab, &[("a", 1.0), ("b", 1.0)]).unwrap();
        let seq = TokenSequence::new("never", vec![TokenId(1)]);
        let out = lm.sample_rollout(&seq, 0.95, 7, 11).unwrap();
        assert_eq!(out.continuation.len(), 7);
        assert!(!out.terminated);
        assert_eq!(out, lm.sample_rollout(&seq, 0.95, 7, 11).unwrap());
    }

    #[test]
    fn rollout_at_default_temperature_terminates() {
        let lm = abe();
        let out = lm
            .sample_rollout(&prompt(&lm), crate::DEFAULT_TEMPERATURE, 256, 42)
            .unwrap();
        assert!(out.terminated);
        assert_eq!(out.continuation.last(), Some(&lm.eos()));
    }

    #[test]
    fn unknown_token_in_sequence() {
        let lm = abe();
        let seq = TokenSequence::new(lm.tag(), vec![TokenId(7)]);
        assert!(matches!(
            lm.next_token_logits(&seq, TopK::All),
            Err(Error::UnknownToken { id: 7, .. })
        ));
        assert!(matches!(
            lm.decode(&[TokenId(3)]),
            Err(Error::UnknownToken { .. })
        ));
    }

    #[test]
    fn bigram_conditions_on_previous_token() {
        let vocab = Vocab::chars("ab", "$").unwrap();
        let a = vocab.id("a").unwrap();
        let b = vocab.id("b").unwrap();
        let mut next = BTreeMap::new();
        next.insert(a, Distribution::from_weights(3, &[(b, 1.0)]).unwrap());
        let lm = ToyLm::bigram("bg", vocab, Distribution::uniform(3), next);
        let seq = TokenSequence::new("bg", vec![a]);
        let r = lm.next_token_logits(&seq, TopK::All).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.candidates[0].token, b);
    }

    #[test]
    fn def_roundtrip_builds_same_model() {
        let def = ToyLmDef {
            tag: "abe".into(),
            vocab: vec!["EOS".into(), "A".into(), "B".into()],
            eos: "EOS".into(),
            model: ModelDef::Table {
                probs: [("A".into(), 0.6), ("B".into(), 0.3), ("EOS".into(), 0.1)]
                    .into_iter()
                    .collect(),
            },
        };
        assert_eq!(ToyLm::from_def(&def).unwrap(), abe());
    }

    #[test]
    fn copy_task_exact_match() {
        let s = ToyScorer::copy_exact();
        assert_eq!(s.score("abc", "abc").unwrap().value(), 1.0);
        assert_eq!(s.score("abc", "abd").unwrap().value(), 0.0);
        assert!(s.score("abc", "").is_err());
    }

    #[test]
    fn edit_similarity_formula() {
        let refs: BTreeMap<String, String> =
            [("src".into(), "kitten".into())].into_iter().collect();
        let s = ToyScorer::edit_similarity(refs);
        // kitten -> sitting: distance 3, longest 7
        let v = s.score("src", "sitting").unwrap().value();
        assert!((v - (1.0 - 3.0 / 7.0)).abs() < 1e-15);
        assert!(matches!(
            s.score("other", "x"),
            Err(Error::ScorerUnavailable(_))
        ));
    }
}
