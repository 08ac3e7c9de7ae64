//! Run configuration loaded from TOML.
//!
//! Relative paths are resolved against the directory of the config file.
//! Command-line flags override config keys; `--seed` overrides the top-level
//! `seed`, which overrides `pairgen.seed`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use prmkit_core::implicit_prm::RewardConfig;
use prmkit_core::pairgen::PairgenConfig;
use prmkit_core::toy::ToyScorer;
use prmkit_core::tta::{DecodeConfig, DEFAULT_W_GRID};
use prmkit_core::{LanguageModel, QualityScorer, TokenId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::remote::{Client, Endpoint, RemoteLm, RemoteScorer};
use crate::toyfile::{load_toy_lm, load_toy_scorer};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    /// Row label in reports.
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default)]
    pub providers: Providers,
    #[serde(default)]
    pub pairgen: PairgenConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_label() -> String {
    "prm".into()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Providers {
    pub generator: Option<ProviderSlot>,
    pub prm_policy: Option<ProviderSlot>,
    pub prm_reference: Option<ProviderSlot>,
    pub scorer: Option<ProviderSlot>,
}

/// Exactly one of `toy` and `remote`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSlot {
    pub toy: Option<PathBuf>,
    pub remote: Option<RemoteSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSlot {
    /// Model or scorer name on the sidecar.
    pub model: String,
    /// Tokenizer tag; defaults to `model`. Give a policy and its reference
    /// the same value.
    #[serde(default)]
    pub tokenizer: Option<String>,
    /// Required for language models.
    pub eos_id: Option<u32>,
    pub vocab_size: Option<usize>,
    pub endpoint: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub w_grid: Vec<f64>,
    /// Add a greedy baseline row per task.
    pub greedy_baseline: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            w_grid: DEFAULT_W_GRID.to_vec(),
            greedy_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Source sentences for `gen-pairs`.
    pub sources: Option<PathBuf>,
}

/// A loaded scorer slot.
pub enum Scorer {
    Toy(ToyScorer),
    Remote(RemoteScorer),
}

impl Scorer {
    /// A scorer forwarding `lang_pair` where the backend accepts it.
    pub fn for_lang_pair(&self, lang_pair: &str) -> Box<dyn QualityScorer + '_> {
        match self {
            Scorer::Toy(s) => Box::new(s),
            Scorer::Remote(s) => Box::new(s.with_lang_pair(lang_pair)),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, slot) in self.slots() {
            if let Some(slot) = slot {
                match (&slot.toy, &slot.remote) {
                    (Some(p), None) => {
                        let p = self.resolve(p);
                        if !p.is_file() {
                            return Err(Error::Config(format!(
                                "providers.{name}.toy: {} does not exist",
                                p.display()
                            )));
                        }
                    }
                    (None, Some(r)) => {
                        r.endpoint.validate().map_err(|e| Error::Config(format!("providers.{name}.remote: {e}")))?
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "providers.{name} needs exactly one of `toy` and `remote`"
                        )))
                    }
                }
            }
        }
        if let Some(p) = &self.io.sources {
            let p = self.resolve(p);
            if !p.is_file() {
                return Err(Error::Config(format!("io.sources: {} does not exist", p.display())));
            }
        }
        if self.sweep.w_grid.is_empty() {
            return Err(Error::Config("sweep.w_grid is empty".into()));
        }
        self.pairgen.validate()?;
        self.reward.validate()?;
        self.decode.validate()?;
        Ok(())
    }

    fn slots(&self) -> [(&'static str, &Option<ProviderSlot>); 4] {
        let p = &self.providers;
        [
            ("generator", &p.generator),
            ("prm_policy", &p.prm_policy),
            ("prm_reference", &p.prm_reference),
            ("scorer", &p.scorer),
        ]
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// The seed every random choice derives from.
    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.pairgen.seed)
    }

    /// Applies a `--seed` override and propagates the seed into `pairgen`.
    pub fn set_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = Some(s);
        }
        self.pairgen.seed = self.effective_seed();
    }

    /// SHA-256 of the effective configuration as canonical JSON.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn slot(&self, name: &str) -> Result<&ProviderSlot> {
        self.slots()
            .into_iter()
            .find(|(n, _)| *n == name)
            .and_then(|(_, s)| s.as_ref())
            .ok_or_else(|| Error::Config(format!("missing provider slot `providers.{name}`")))
    }

    /// Checks that the named slots are configured, in order.
    pub fn require(&self, names: &[&str]) -> Result<()> {
        names.iter().try_for_each(|n| self.slot(n).map(drop))
    }

    /// Loads the language model in slot `name`.
    pub fn language_model(&self, name: &str) -> Result<Box<dyn LanguageModel>> {
        let slot = self.slot(name)?;
        if let Some(p) = &slot.toy {
            return Ok(Box::new(load_toy_lm(&self.resolve(p))?));
        }
        let r = slot.remote.as_ref().expect("validated slot");
        let (Some(eos), Some(vocab)) = (r.eos_id, r.vocab_size) else {
            return Err(Error::Config(format!(
                "providers.{name}.remote needs eos_id and vocab_size"
            )));
        };
        let client = Arc::new(Client::new(r.endpoint.clone())?);
        let mut lm = RemoteLm::new(client, &r.model, TokenId(eos), vocab)?;
        if let Some(tag) = &r.tokenizer {
            lm = lm.with_tokenizer(tag);
        }
        Ok(Box::new(lm))
    }

    pub fn scorer(&self) -> Result<Scorer> {
        let slot = self.slot("scorer")?;
        if let Some(p) = &slot.toy {
            return Ok(Scorer::Toy(load_toy_scorer(&self.resolve(p))?));
        }
        let r = slot.remote.as_ref().expect("validated slot");
        let client = Arc::new(Client::new(r.endpoint.clone())?);
        Ok(Scorer::Remote(RemoteScorer::new(client, &r.model)))
    }

    pub fn has_slot(&self, name: &str) -> bool {
        self.slot(name).is_ok()
    }

    /// Toy model files referenced by the configuration.
    pub fn toy_files(&self) -> Vec<PathBuf> {
        self.slots()
            .into_iter()
            .filter_map(|(_, s)| s.as_ref().and_then(|s| s.toy.as_ref()))
            .map(|p| self.resolve(p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut cfg = RunConfig::from_toml("seed = 9\n[pairgen]\nseed = 3\n", Path::new(".")).unwrap();
        assert_eq!(cfg.effective_seed(), 9);
        cfg.set_seed(None);
        assert_eq!(cfg.pairgen.seed, 9);
        cfg.set_seed(Some(11));
        assert_eq!((cfg.seed, cfg.pairgen.seed), (Some(11), 11));
        assert_eq!(cfg.sweep.w_grid, vec![0.0, 0.3, 0.5, 0.7]);
        assert_eq!(cfg.decode.k, 10);
        assert_eq!(cfg.pairgen.n_rollouts, 3);
    }

    #[test]
    fn slot_validation() {
        let both = "[providers.scorer]\ntoy = \"x.json\"\n[providers.scorer.remote]\nmodel = \"m\"\n[providers.scorer.remote.endpoint]\nbase_url = \"http://h\"\n";
        assert!(matches!(RunConfig::from_toml(both, Path::new(".")), Err(Error::Config(_))));
        let missing = "[providers.generator]\ntoy = \"/no/such/file.json\"\n";
        let err = RunConfig::from_toml(missing, Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("providers.generator"), "{err}");
        let cfg = RunConfig::from_toml("", Path::new(".")).unwrap();
        let err = cfg.require(&["generator", "scorer"]).unwrap_err().to_string();
        assert!(err.contains("providers.generator"));
        assert!(RunConfig::from_toml("bogus = 1", Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_toml("seed = 1", Path::new(".")).unwrap();
        let b = RunConfig::from_toml("seed = 2", Path::new(".")).unwrap();
        assert_eq!(a.content_hash(), a.clone().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }
}
