//! Line-oriented JSON records: preference pairs, benchmark items and
//! command inputs.

use std::io::{BufRead, Write};
use std::path::Path;

use prmkit_core::bench::{BenchChoice, BenchItem};
use prmkit_core::pairgen::{Level, PreferencePair};
use prmkit_core::TokenId;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{Error, Result};

/// One preference pair as written to disk. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair_id: String,
    pub lang_pair: String,
    pub level: Level,
    pub source_text: String,
    pub prefix_token_ids: Vec<TokenId>,
    pub prefix_text: String,
    pub chosen_token_id: TokenId,
    pub rejected_token_id: TokenId,
    pub chosen_text: String,
    pub rejected_text: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub provider_tag: String,
    pub seed: u64,
}

pub const PAIR_FIELDS: [&str; 14] = [
    "pair_id",
    "lang_pair",
    "level",
    "source_text",
    "prefix_token_ids",
    "prefix_text",
    "chosen_token_id",
    "rejected_token_id",
    "chosen_text",
    "rejected_text",
    "chosen_score",
    "rejected_score",
    "provider_tag",
    "seed",
];

impl From<&PreferencePair> for PairRecord {
    fn from(p: &PreferencePair) -> Self {
        PairRecord {
            pair_id: p.pair_id.clone(),
            lang_pair: p.lang_pair.clone(),
            level: p.level,
            source_text: p.source_text.clone(),
            prefix_token_ids: p.prefix.continuation.clone(),
            prefix_text: p.prefix_text.clone(),
            chosen_token_id: p.chosen_token,
            rejected_token_id: p.rejected_token,
            chosen_text: p.chosen_text.clone(),
            rejected_text: p.rejected_text.clone(),
            chosen_score: p.chosen_score.value(),
            rejected_score: p.rejected_score.value(),
            provider_tag: p.prefix.provider_tag.clone(),
            seed: p.seed,
        }
    }
}

impl PairRecord {
    pub fn to_bench_item(&self) -> BenchItem {
        BenchItem {
            pair_id: self.pair_id.clone(),
            lang_pair: self.lang_pair.clone(),
            level: self.level,
            source_text: self.source_text.clone(),
            provider_tag: self.provider_tag.clone(),
            prefix_token_ids: self.prefix_token_ids.clone(),
            prefix_text: self.prefix_text.clone(),
            chosen: BenchChoice {
                token: self.chosen_token_id,
                text: self.chosen_text.clone(),
                score: self.chosen_score,
            },
            rejected: BenchChoice {
                token: self.rejected_token_id,
                text: self.rejected_text.clone(),
                score: self.rejected_score,
            },
        }
    }

    pub fn from_bench_item(item: &BenchItem, seed: u64) -> Self {
        PairRecord {
            pair_id: item.pair_id.clone(),
            lang_pair: item.lang_pair.clone(),
            level: item.level,
            source_text: item.source_text.clone(),
            prefix_token_ids: item.prefix_token_ids.clone(),
            prefix_text: item.prefix_text.clone(),
            chosen_token_id: item.chosen.token,
            rejected_token_id: item.rejected.token,
            chosen_text: item.chosen.text.clone(),
            rejected_text: item.rejected.text.clone(),
            chosen_score: item.chosen.score,
            rejected_score: item.rejected.score,
            provider_tag: item.provider_tag.clone(),
            seed,
        }
    }
}

pub fn write_jsonl<T: Serialize>(out: &mut impl Write, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Non-blank lines with their 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn schema(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn object(line: usize, text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::Parse {
            line,
            message: "expected a JSON object".into(),
        }),
        Err(e) => Err(Error::Parse {
            line,
            message: e.to_string(),
        }),
    }
}

fn field<T: DeserializeOwned>(map: &Map<String, Value>, line: usize, name: &str) -> Result<T> {
    let value = map.get(name).ok_or_else(|| schema(line, name, "missing"))?;
    serde_json::from_value(value.clone()).map_err(|e| schema(line, name, e.to_string()))
}

/// Parses one pair record, naming the first offending field on failure.
pub fn parse_pair_record(line: usize, text: &str) -> Result<PairRecord> {
    let map = object(line, text)?;
    if let Some(extra) = map.keys().find(|k| !PAIR_FIELDS.contains(&k.as_str())) {
        return Err(schema(line, extra, "unknown field"));
    }
    let record = PairRecord {
        pair_id: field(&map, line, "pair_id")?,
        lang_pair: field(&map, line, "lang_pair")?,
        level: field(&map, line, "level")?,
        source_text: field(&map, line, "source_text")?,
        prefix_token_ids: field(&map, line, "prefix_token_ids")?,
        prefix_text: field(&map, line, "prefix_text")?,
        chosen_token_id: field(&map, line, "chosen_token_id")?,
        rejected_token_id: field(&map, line, "rejected_token_id")?,
        chosen_text: field(&map, line, "chosen_text")?,
        rejected_text: field(&map, line, "rejected_text")?,
        chosen_score: field(&map, line, "chosen_score")?,
        rejected_score: field(&map, line, "rejected_score")?,
        provider_tag: field(&map, line, "provider_tag")?,
        seed: field(&map, line, "seed")?,
    };
    for (name, v) in [
        ("chosen_score", record.chosen_score),
        ("rejected_score", record.rejected_score),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(schema(line, name, format!("{v} outside [0, 1]")));
        }
    }
    Ok(record)
}

/// Reads a benchmark file. Blank lines are skipped; errors cite the
/// 1-based line number.
pub fn load_bench(path: &Path) -> Result<Vec<BenchItem>> {
    lines(path)?
        .into_iter()
        .map(|(n, text)| {
            let item = parse_pair_record(n, &text)?.to_bench_item();
            item.validate()
                .map_err(|(field, message)| schema(n, field, message))?;
            Ok(item)
        })
        .collect()
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    lines(path)?
        .into_iter()
        .map(|(n, text)| parse_pair_record(n, &text))
        .collect()
}

/// A source sentence to translate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_text: String,
    #[serde(default)]
    pub lang_pair: String,
}

/// A hypothesis to analyse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub source_text: String,
    pub hypothesis_text: String,
    #[serde(default)]
    pub lang_pair: String,
}

/// Reads records of type `T`, one per non-blank line.
pub fn load_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    lines(path)?
        .into_iter()
        .map(|(n, text)| {
            let map = object(n, &text)?;
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Parse {
                line: n,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> PairRecord {
        PairRecord {
            pair_id: "00ff-001".into(),
            lang_pair: "en-de".into(),
            level: Level::Token,
            source_text: "ab".into(),
            prefix_token_ids: vec![TokenId(1)],
            prefix_text: "a".into(),
            chosen_token_id: TokenId(2),
            rejected_token_id: TokenId(1),
            chosen_text: "ab".into(),
            rejected_text: "aa".into(),
            chosen_score: 0.8,
            rejected_score: 0.7,
            provider_tag: "t".into(),
            seed: 7,
        }
    }

    #[test]
    fn field_order_is_fixed() {
        let text = serde_json::to_string(&record()).unwrap();
        let mut last = 0;
        for f in PAIR_FIELDS {
            let at = text.find(&format!("\"{f}\"")).unwrap();
            assert!(at >= last, "{f} out of order");
            last = at;
        }
        assert_eq!(parse_pair_record(1, &text).unwrap(), record());
    }

    #[test]
    fn missing_and_bad_fields() {
        let mut v = serde_json::to_value(record()).unwrap();
        v.as_object_mut().unwrap().remove("chosen_score");
        match parse_pair_record(3, &v.to_string()) {
            Err(Error::Schema { line: 3, field, .. }) => assert_eq!(field, "chosen_score"),
            other => panic!("{other:?}"),
        }
        let mut v = serde_json::to_value(record()).unwrap();
        v["level"] = "paragraph".into();
        assert!(matches!(parse_pair_record(1, &v.to_string()), Err(Error::Schema { field, .. }) if field == "level"));
        v["level"] = "token".into();
        v["rejected_score"] = 1.5.into();
        assert!(matches!(parse_pair_record(1, &v.to_string()), Err(Error::Schema { field, .. }) if field == "rejected_score"));
        assert!(matches!(parse_pair_record(9, "{oops"), Err(Error::Parse { line: 9, .. })));
    }
}
