//! Token ids, sequences and a small greedy tokenizer for toy vocabularies.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Index into a provider's vocabulary.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(id: u32) -> Self {
        TokenId(id)
    }
}

impl core::fmt::Display for TokenId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A tokenized prompt plus a generated continuation.
///
/// The state the model conditions on is `prompt ++ continuation`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub provider_tag: String,
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    /// Set once the final continuation token is the provider's EOS id.
    pub terminated: bool,
}

impl TokenSequence {
    pub fn new(provider_tag: impl Into<String>, prompt: Vec<TokenId>) -> Self {
        TokenSequence {
            provider_tag: provider_tag.into(),
            prompt,
            continuation: Vec::new(),
            terminated: false,
        }
    }

    /// Returns a copy with `token` appended; terminates when `token == eos`.
    pub fn extended(&self, token: TokenId, eos: TokenId) -> TokenSequence {
        let mut next = self.clone();
        next.push(token, eos);
        next
    }

    pub fn push(&mut self, token: TokenId, eos: TokenId) {
        self.continuation.push(token);
        self.terminated = token == eos;
    }

    /// The continuation truncated to its first `len` tokens.
    pub fn truncated(&self, len: usize) -> TokenSequence {
        let mut out = self.clone();
        out.continuation.truncate(len);
        out.terminated = false;
        out
    }

    /// `prompt ++ continuation`.
    pub fn context(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.prompt.iter().chain(self.continuation.iter()).copied()
    }

    pub fn last_token(&self) -> Option<TokenId> {
        self.continuation.last().or(self.prompt.last()).copied()
    }

    /// True when `self` is `prefix` followed by zero or more tokens.
    pub fn extends(&self, prefix: &TokenSequence) -> bool {
        self.provider_tag == prefix.provider_tag
            && self.prompt == prefix.prompt
            && self.continuation.starts_with(&prefix.continuation)
    }

    /// Checks the structural invariants against a vocabulary.
    pub fn validate(&self, vocab_size: usize, eos: TokenId) -> Result<()> {
        if self.prompt.is_empty() {
            return Err(Error::InvalidInput("prompt is empty".into()));
        }
        if let Some(bad) = self.context().find(|t| t.index() >= vocab_size) {
            return Err(Error::UnknownToken {
                id: bad.0,
                vocab_size,
            });
        }
        if self.terminated && self.continuation.last() != Some(&eos) {
            return Err(Error::InvalidInput(
                "terminated sequence does not end with EOS".into(),
            ));
        }
        Ok(())
    }
}

/// A string vocabulary with a declared EOS token.
///
/// Encoding is greedy longest-match over the non-EOS tokens, so a
/// character-level vocabulary (or any prefix-free one) round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    eos: TokenId,
    index: BTreeMap<String, TokenId>,
    longest: usize,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, eos: &str) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::InvalidConfig(format!("token {i} is empty")));
            }
            if index.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate token {t:?}")));
            }
        }
        let eos = *index
            .get(eos)
            .ok_or_else(|| Error::InvalidConfig(format!("EOS token {eos:?} not in vocabulary")))?;
        index.remove(&tokens[eos.index()]);
        let longest = index.keys().map(|k| k.chars().count()).max().unwrap_or(0);
        Ok(Vocab {
            tokens,
            eos,
            index,
            longest,
        })
    }

    /// EOS at id 0 followed by one token per character of `chars`.
    pub fn chars(chars: &str, eos: &str) -> Result<Self> {
        let mut tokens = alloc::vec![eos.to_string()];
        tokens.extend(chars.chars().map(|c| c.to_string()));
        Vocab::new(tokens, eos)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        if self.tokens[self.eos.index()] == token {
            return Some(self.eos);
        }
        self.index.get(token).copied()
    }

    pub fn text(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id.index())
            .map(String::as_str)
            .ok_or(Error::UnknownToken {
                id: id.0,
                vocab_size: self.tokens.len(),
            })
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(core::iter::once(text.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < n_chars {
            let max = self.longest.min(n_chars - pos);
            let hit = (1..=max).rev().find_map(|len| {
                self.index
                    .get(&text[bounds[pos]..bounds[pos + len]])
                    .map(|&id| (id, len))
            });
            match hit {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    return Err(Error::Untokenizable(format!(
                        "no token matches at {:?}",
                        &text[bounds[pos]..]
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Concatenates token texts; EOS contributes no text.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let t = self.text(id)?;
            if id != self.eos {
                out.push_str(t);
            }
        }
        Ok(out)
    }
}
