//! HTTP clients for a remote inference sidecar speaking protocol `rt/1`.
//!
//! [`RemoteLm`] and [`RemoteScorer`] implement the same traits as the local
//! toy providers, so every algorithm runs unchanged against a remote model.
//! [`fixture::FixtureServer`] serves toy models over the same protocol for
//! conformance tests.

mod client;
pub mod fixture;
pub mod wire;

pub use client::{batch_rollouts, remote_logits, remote_score, Client, Endpoint, RemoteLm, RemoteScorer};
pub use wire::PROTOCOL_VERSION;
