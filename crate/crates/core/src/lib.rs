//! Token-level process reward toolkit.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithm of the
//! toolkit; IO, networking, configuration and the command line live in the
//! companion `prmkit` crate.
//!
//! - [`provider`]: the [`LanguageModel`] and [`QualityScorer`] abstractions.
//! - [`toy`]: exactly enumerable toy models and scorers.
//! - [`pairgen`]: approximate MCTS construction of token-level preference pairs.
//! - [`implicit_prm`]: implicit per-token rewards from a policy/reference pair.
//! - [`bench`]: pairwise accuracy at token and sequence level.
//! - [`tta`]: reward-guided decoding at inference time.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `!(x > y)` is used on purpose: it is also true for NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bench;
mod error;
pub mod implicit_prm;
pub mod math;
pub mod pairgen;
pub mod provider;
pub mod token;
pub mod toy;
pub mod tta;

pub use error::{Error, Result};
pub use provider::{
    detokenize, tokenize, Candidate, LanguageModel, LogitsResult, QualityScore, QualityScorer,
    TopK,
};
pub use token::{TokenId, TokenSequence, Vocab};

/// Default sampling temperature for rollouts.
pub const DEFAULT_TEMPERATURE: f64 = 0.95;
/// Default implicit reward scale.
pub const DEFAULT_BETA: f64 = 0.1;
/// Default cap on generated continuation length.
pub const DEFAULT_MAX_LEN: usize = 256;
