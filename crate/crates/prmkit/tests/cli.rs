use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prmkit::run::{decode_cmd, gen_pairs, manifest_path, DecodeArgs, GenPairsArgs};

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo").join(name)
}

fn prmkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prmkit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A config in `dir` using the demo toy models, minus the slots in `drop`.
fn config(dir: &Path, drop: &[&str], extra: &str) -> PathBuf {
    let mut text = String::new();
    for (slot, file) in [
        ("generator", "generator.json"),
        ("prm_policy", "policy.json"),
        ("prm_reference", "reference.json"),
        ("scorer", "scorer.json"),
    ] {
        if !drop.contains(&slot) {
            text += &format!("[providers.{slot}]\ntoy = {:?}\n", s(&demo(file)));
        }
    }
    text += extra;
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn pair_generation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo("demo.toml");
    let run = |name: &str, seed: Option<u64>| {
        let out = dir.path().join(name);
        gen_pairs(&GenPairsArgs {
            config: &cfg,
            out: &out,
            jobs: Some(3),
            seed,
            sources: None,
        })
        .unwrap();
        (fs::read(&out).unwrap(), fs::read_to_string(manifest_path(&out)).unwrap())
    };
    let (a, ma) = run("a.jsonl", None);
    let (b, mb) = run("b.jsonl", None);
    assert_eq!(a, b);
    let manifest: serde_json::Value = serde_json::from_str(&ma).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(ma.replace("b.jsonl", "a.jsonl"), mb.replace("b.jsonl", "a.jsonl"));

    let out = dir.path().join("c.jsonl");
    let bin = prmkit(&["gen-pairs", "--config", s(&cfg), "--out", s(&out), "--jobs", "1"]);
    assert!(bin.status.success(), "{}", String::from_utf8_lossy(&bin.stderr));
    assert_eq!(fs::read(&out).unwrap(), a);

    let (_, mc) = run("d.jsonl", Some(8));
    let manifest: serde_json::Value = serde_json::from_str(&mc).unwrap();
    assert_eq!(manifest["seed"], 8);
}

#[test]
fn pair_lines_have_fixed_field_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.jsonl");
    let bin = prmkit(&["gen-pairs", "--config", s(&demo("demo.toml")), "--out", s(&out)]);
    assert!(bin.status.success());
    let text = fs::read_to_string(&out).unwrap();
    for line in text.lines() {
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(line)
            .unwrap()
            .keys()
            .cloned()
            .collect();
        assert_eq!(keys.len(), 14);
        let positions: Vec<usize> = prmkit::jsonl::PAIR_FIELDS.iter().map(|f| line.find(&format!("\"{f}\":")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{line}");
    }
}

#[test]
fn missing_scorer_names_the_slot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["scorer"], "");
    let out = dir.path().join("p.jsonl");
    let bin = prmkit(&["gen-pairs", "--config", s(&cfg), "--out", s(&out), "--in", s(&demo("sources.jsonl"))]);
    assert_eq!(bin.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bin.stderr).contains("providers.scorer"));
    assert!(!out.exists());
}

#[test]
fn malformed_bench_line_is_cited() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"pair_id":"x","lang_pair":"en-de","level":"token","source_text":"ab","prefix_token_ids":[],"prefix_text":"","chosen_token_id":1,"rejected_token_id":2,"chosen_text":"a","rejected_text":"b","chosen_score":0.9,"rejected_score":0.5,"provider_tag":"chars","seed":1}"#;
    let mut lines = vec![good.to_string(); 9];
    lines[6] = good.replace("\"chosen_score\":0.9", "\"chosen_score\":\"high\"");
    let bench = dir.path().join("bench.jsonl");
    fs::write(&bench, lines.join("\n") + "\n").unwrap();
    let cfg = config(dir.path(), &[], "");
    let bin = prmkit(&["eval", "--config", s(&cfg), "--bench", s(&bench), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(bin.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bin.stderr);
    assert!(err.contains("line 7") && err.contains("chosen_score"), "{err}");

    lines[6] = "{not json".into();
    fs::write(&bench, lines.join("\n")).unwrap();
    let bin = prmkit(&["eval", "--config", s(&cfg), "--bench", s(&bench), "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(bin.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bin.stderr).contains("line 7"));
}

#[test]
fn eval_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let line = |c: u32, r: u32| {
        format!(
            r#"{{"pair_id":"{c}{r}","lang_pair":"en-de","level":"token","source_text":"ab","prefix_token_ids":[1],"prefix_text":"a","chosen_token_id":{c},"rejected_token_id":{r},"chosen_text":"","rejected_text":"","chosen_score":0.9,"rejected_score":0.5,"provider_tag":"chars","seed":1}}"#
        )
    };
    let bench = dir.path().join("bench.jsonl");
    fs::write(&bench, [line(2, 3), line(3, 2), line(2, 4), line(3, 4)].join("\n")).unwrap();
    let out = dir.path().join("r.json");
    let cfg = config(dir.path(), &[], "");
    let bin = prmkit(&["eval", "--config", s(&cfg), "--bench", s(&bench), "--out", s(&out)]);
    assert!(bin.status.success(), "{}", String::from_utf8_lossy(&bin.stderr));
    let tsv = fs::read_to_string(out.with_extension("tsv")).unwrap();
    // policy after "a": b 0.45, c 0.1, d 0.1 against a uniform reference
    assert!(tsv.contains("token\ten-de\t4\t2\t1\t1\t0\t0.5\n"), "{tsv}");
    assert!(fs::read_to_string(out.with_extension("md")).unwrap().contains("| Tok EN→XX |"));
}

#[test]
fn usage_and_runtime_exit_codes() {
    assert_eq!(prmkit(&["--help"]).status.code(), Some(0));
    assert_eq!(prmkit(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(prmkit(&["decode", "--config", "/no/such.toml", "--in", "x", "--out", "y"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("remote.toml");
    fs::write(
        &cfg,
        format!(
            "[providers.generator.remote]\nmodel = \"m\"\neos_id = 0\nvocab_size = 5\n\
             [providers.generator.remote.endpoint]\nbase_url = \"http://127.0.0.1:9\"\nmax_retries = 0\ntimeout_ms = 2000\n\
             [providers.scorer]\ntoy = {:?}\n",
            s(&demo("scorer.json"))
        ),
    )
    .unwrap();
    let out = dir.path().join("p.jsonl");
    let bin = prmkit(&["gen-pairs", "--config", s(&cfg), "--out", s(&out), "--in", s(&demo("sources.jsonl"))]);
    assert_eq!(bin.status.code(), Some(2), "{}", String::from_utf8_lossy(&bin.stderr));
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let cfg = config(dir.path(), &[], "");
    for cmd in ["decode", "score", "gen-pairs"] {
        let out = dir.path().join(format!("{cmd}.out"));
        let bin = prmkit(&[cmd, "--config", s(&cfg), "--in", s(&empty), "--out", s(&out)]);
        assert_eq!(bin.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&bin.stderr));
        assert_eq!(fs::read_to_string(&out).unwrap(), "", "{cmd}");
    }
}

#[test]
fn score_keeps_going_past_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("h.jsonl");
    fs::write(
        &input,
        "{\"source_text\": \"ab\", \"hypothesis_text\": \"ab\"}\n{\"source_text\": \"ab\", \"hypothesis_text\": \"xyz\"}\n{\"source_text\": \"ab\", \"hypothesis_text\": \"\"}\n",
    )
    .unwrap();
    let out = dir.path().join("s.jsonl");
    let cfg = config(dir.path(), &[], "");
    let bin = prmkit(&["score", "--config", s(&cfg), "--in", s(&input), "--out", s(&out)]);
    assert_eq!(bin.status.code(), Some(0));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["tokens"], serde_json::json!(["a", "b"]));
    assert!(lines[1]["error"].as_str().is_some());
    assert!(lines[2]["error"].as_str().unwrap().contains("empty"));
}

#[test]
fn zero_weight_decode_matches_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo("demo.toml");
    let input = demo("sources.jsonl");
    let run = |name: &str, w: Option<f64>, greedy: bool| {
        let out = dir.path().join(name);
        decode_cmd(&DecodeArgs {
            config: &cfg,
            input: &input,
            out: &out,
            jobs: None,
            w,
            k: None,
            greedy,
        })
        .unwrap();
        fs::read(out).unwrap()
    };
    let zero = run("zero.txt", Some(0.0), false);
    assert_eq!(zero, run("greedy.txt", None, true));
    assert_eq!(zero.iter().filter(|&&b| b == b'\n').count(), 4);

    let out = dir.path().join("bin.txt");
    let bin = prmkit(&["decode", "--config", s(&cfg), "--in", s(&input), "--out", s(&out), "--w", "0"]);
    assert!(bin.status.success());
    assert_eq!(fs::read(out).unwrap(), zero);
}

#[test]
fn sweep_uses_default_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.tsv");
    let bin = prmkit(&["sweep", "--config", s(&demo("demo.toml")), "--in", s(&demo("sources.jsonl")), "--out", s(&out)]);
    assert!(bin.status.success(), "{}", String::from_utf8_lossy(&bin.stderr));
    let tsv = fs::read_to_string(&out).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("model\ttask\tw=0\tw=0.3\tw=0.5\tw=0.7"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().any(|r| r.starts_with("toy-prm\ten-de\t")));
    assert!(rows.iter().any(|r| r.starts_with("greedy\tde-en\t")));

    let bin = prmkit(&[
        "sweep", "--config", s(&demo("demo.toml")), "--in", s(&demo("sources.jsonl")), "--out", s(&out), "--w-grid", "0,1",
    ]);
    assert!(bin.status.success());
    assert!(fs::read_to_string(&out).unwrap().starts_with("model\ttask\tw=0\tw=1\n"));
}
