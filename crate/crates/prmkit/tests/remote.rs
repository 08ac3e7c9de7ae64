use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use prmkit::core::pairgen::{build_tree, PairgenConfig};
use prmkit::core::toy::{Distribution, ToyLm, ToyScorer};
use prmkit::core::{Error, LanguageModel, QualityScorer, TokenId, TokenSequence, TopK, Vocab};
use prmkit::remote::fixture::{FixtureOptions, FixtureServer};
use prmkit::remote::wire::{self, LogitsRequest};
use prmkit::remote::{batch_rollouts, remote_logits, Client, Endpoint, RemoteLm, RemoteScorer};

fn toy() -> ToyLm {
    let vocab = Vocab::chars("abc", "$").unwrap();
    let d = |w: &[f64]| {
        let w: Vec<(TokenId, f64)> = w.iter().enumerate().map(|(i, &x)| (TokenId(i as u32), x)).collect();
        Distribution::from_weights(4, &w).unwrap()
    };
    let next = BTreeMap::from([
        (TokenId(1), d(&[0.2, 0.1, 0.5, 0.2])),
        (TokenId(2), d(&[0.3, 0.3, 0.1, 0.3])),
        (TokenId(3), d(&[0.5, 0.2, 0.2, 0.1])),
    ]);
    ToyLm::bigram("toy", vocab, d(&[0.1, 0.4, 0.3, 0.2]), next)
}

fn serve(opts: FixtureOptions) -> FixtureServer {
    let scorer = ToyScorer::edit_similarity(BTreeMap::from([("abc".to_string(), "cab".to_string())]));
    FixtureServer::start(vec![toy()], vec![("qe".into(), scorer)], opts).unwrap()
}

fn endpoint(server: &FixtureServer) -> Endpoint {
    Endpoint {
        backoff_initial_ms: 5,
        ..Endpoint::new(server.base_url())
    }
}

fn remote(server: &FixtureServer) -> RemoteLm {
    let client = Arc::new(Client::new(endpoint(server)).unwrap());
    RemoteLm::new(client, "toy", TokenId(0), 4).unwrap()
}

fn seq(prompt: &[u32], cont: &[u32]) -> TokenSequence {
    let mut s = TokenSequence::new("toy", prompt.iter().map(|&t| TokenId(t)).collect());
    s.continuation = cont.iter().map(|&t| TokenId(t)).collect();
    s
}

#[test]
fn remote_matches_local() {
    let server = serve(FixtureOptions::default());
    let (local, lm) = (toy(), remote(&server));
    for s in [seq(&[1], &[]), seq(&[1, 2], &[3]), seq(&[2], &[1, 1, 2])] {
        for k in [TopK::Top(2), TopK::All] {
            let (a, b) = (local.next_token_logits(&s, k).unwrap(), lm.next_token_logits(&s, k).unwrap());
            assert_eq!(a.complete, b.complete);
            assert_eq!(a.candidates.len(), b.candidates.len());
            for (x, y) in a.candidates.iter().zip(&b.candidates) {
                assert_eq!(x.token, y.token);
                assert!((x.logprob - y.logprob).abs() < 1e-6);
            }
        }
        if !s.continuation.is_empty() {
            let (a, b) = (local.teacher_forced_logprobs(&s).unwrap(), lm.teacher_forced_logprobs(&s).unwrap());
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6));
        }
        let seeds = [1, 2, 3, 99];
        let got = batch_rollouts(&lm, &s, 4, 0.95, 6, &seeds).unwrap();
        for (r, &seed) in got.iter().zip(&seeds) {
            assert_eq!(*r, local.sample_rollout(&s, 0.95, 6, seed).unwrap());
        }
    }
    assert_eq!(lm.encode("cab").unwrap(), local.encode("cab").unwrap());
    assert_eq!(lm.decode(&[TokenId(3), TokenId(1), TokenId(0)]).unwrap(), "ca");
}

#[test]
fn lang_pair_is_forwarded() {
    let server = serve(FixtureOptions::default());
    let client = Arc::new(Client::new(endpoint(&server)).unwrap());
    let scorer = RemoteScorer::new(client, "qe").with_lang_pair("en-de");
    assert_eq!(scorer.score("abc", "cab").unwrap().value(), 1.0);
    let (path, body) = server.requests().pop().unwrap();
    assert_eq!(path, wire::SCORE);
    let body: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(body["lang_pair"], "en-de");
    assert_eq!(body["protocol_version"], "rt/1");
    assert_eq!(body["hypothesis"], "cab");
}

#[test]
fn version_mismatch_is_fatal() {
    let server = serve(FixtureOptions {
        protocol_version: "rt/2".into(),
        ..Default::default()
    });
    let err = remote(&server).next_token_logits(&seq(&[1], &[]), TopK::All).unwrap_err();
    assert!(matches!(err, Error::ProtocolMismatch(_)), "{err:?}");
    assert!(err.is_fatal());
    assert_eq!(server.hits(), 1);
}

#[test]
fn malformed_response_is_protocol_mismatch() {
    let server = serve(FixtureOptions {
        malformed: true,
        ..Default::default()
    });
    let err = remote(&server).next_token_logits(&seq(&[1], &[]), TopK::All).unwrap_err();
    assert!(matches!(err, Error::ProtocolMismatch(_)), "{err:?}");
}

#[test]
fn transient_failures_are_retried() {
    for status in [503, 429] {
        let server = serve(FixtureOptions {
            fail_first: 2,
            fail_status: status,
            ..Default::default()
        });
        let got = remote(&server).next_token_logits(&seq(&[1], &[]), TopK::Top(2)).unwrap();
        assert_eq!(got.candidates[0].token, TokenId(2));
        assert_eq!(server.hits(), 3);
    }
}

#[test]
fn exhausted_retries_report_unavailable() {
    let server = serve(FixtureOptions {
        fail_first: usize::MAX,
        ..Default::default()
    });
    let ep = Endpoint {
        max_retries: 2,
        ..endpoint(&server)
    };
    let lm = RemoteLm::new(Arc::new(Client::new(ep.clone()).unwrap()), "toy", TokenId(0), 4).unwrap();
    let err = lm.next_token_logits(&seq(&[1], &[]), TopK::All).unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable(_)), "{err:?}");
    assert_eq!(server.hits(), 3);
    let scorer = RemoteScorer::new(Arc::new(Client::new(ep).unwrap()), "qe");
    assert!(matches!(scorer.score("a", "b"), Err(Error::ScorerUnavailable(_))));
}

#[test]
fn unreachable_server_is_unavailable() {
    let url = {
        let server = serve(FixtureOptions::default());
        server.base_url().to_string()
    };
    let ep = Endpoint {
        max_retries: 1,
        backoff_initial_ms: 1,
        timeout_ms: 2000,
        ..Endpoint::new(url)
    };
    let lm = RemoteLm::new(Arc::new(Client::new(ep).unwrap()), "toy", TokenId(0), 4).unwrap();
    let start = Instant::now();
    let err = lm.next_token_logits(&seq(&[1], &[]), TopK::All).unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable(_)), "{err:?}");
    assert!(start.elapsed().as_secs() < 10);
}

#[test]
fn server_side_model_errors() {
    let server = serve(FixtureOptions::default());
    let client = Client::new(endpoint(&server)).unwrap();
    let req = LogitsRequest::new("missing", vec![TokenId(1)], vec![], None);
    let err = remote_logits(&client, &req).unwrap_err();
    assert!(matches!(err, Error::ProtocolMismatch(_)), "{err:?}");
    let req = LogitsRequest::new("toy", vec![TokenId(9)], vec![], None);
    assert!(remote_logits(&client, &req).is_err());
}

#[test]
fn rollouts_are_batched_in_order() {
    let server = serve(FixtureOptions::default());
    let ep = Endpoint {
        batch_size: 3,
        ..endpoint(&server)
    };
    let lm = RemoteLm::new(Arc::new(Client::new(ep).unwrap()), "toy", TokenId(0), 4).unwrap();
    let seeds: Vec<u64> = (10..17).collect();
    let s = seq(&[1], &[2]);
    let got = batch_rollouts(&lm, &s, 7, 1.0, 5, &seeds).unwrap();
    let local = toy();
    let want: Vec<_> = seeds.iter().map(|&x| local.sample_rollout(&s, 1.0, 5, x).unwrap()).collect();
    assert_eq!(got, want);
    let sizes: Vec<usize> = server
        .requests()
        .iter()
        .map(|(_, b)| serde_json::from_str::<serde_json::Value>(b).unwrap()["seeds"].as_array().unwrap().len())
        .collect();
    assert_eq!(sizes, vec![3, 3, 1]);
    assert!(matches!(batch_rollouts(&lm, &s, 3, 1.0, 5, &[1, 2]), Err(Error::InvalidInput(_))));
}

#[test]
fn bearer_token_is_sent() {
    let server = serve(FixtureOptions {
        auth_token: Some("sekrit".into()),
        ..Default::default()
    });
    let err = remote(&server).next_token_logits(&seq(&[1], &[]), TopK::All).unwrap_err();
    assert!(matches!(err, Error::ProviderUnavailable(_)), "{err:?}");
    let ep = Endpoint {
        auth_token: Some("sekrit".into()),
        ..endpoint(&server)
    };
    let lm = RemoteLm::new(Arc::new(Client::new(ep).unwrap()), "toy", TokenId(0), 4).unwrap();
    assert!(lm.next_token_logits(&seq(&[1], &[]), TopK::All).is_ok());
}

#[test]
fn remote_pair_generation_matches_local() {
    let server = serve(FixtureOptions::default());
    let lm = remote(&server);
    let scorer = ToyScorer::edit_similarity(BTreeMap::from([("abc".to_string(), "cab".to_string())]));
    let cfg = PairgenConfig {
        max_len: 4,
        seed: 5,
        ..Default::default()
    };
    let local = build_tree("abc", "en-de", &cfg, &toy(), &scorer).unwrap();
    let over_wire = build_tree("abc", "en-de", &cfg, &lm, &scorer).unwrap();
    assert_eq!(local, over_wire);
}
