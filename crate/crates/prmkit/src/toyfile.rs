//! Toy model and scorer definitions stored as JSON documents.

use std::path::Path;

use prmkit_core::toy::{ToyLm, ToyLmDef, ToyScorer, ToyScorerDef};
use serde::de::DeserializeOwned;

use crate::{Error, Result};

fn read_def<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn load_toy_lm(path: &Path) -> Result<ToyLm> {
    let def: ToyLmDef = read_def(path)?;
    ToyLm::from_def(&def).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn load_toy_scorer(path: &Path) -> Result<ToyScorer> {
    let def: ToyScorerDef = read_def(path)?;
    ToyScorer::from_def(&def).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })
}
