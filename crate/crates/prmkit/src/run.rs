//! The commands behind the CLI. Each reads its inputs, writes its outputs
//! and a manifest, and returns a short summary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use prmkit_core::bench::{judge_item, BenchReport, Verdict};
use prmkit_core::implicit_prm::{credit_report, CreditReport};
use prmkit_core::pairgen::{build_tree, Level, RejectReason, TreeOutcome};
use prmkit_core::tta::{decode, sweep_w, DecodeMode, SweepReport, SweepRow};
use prmkit_core::LanguageModel;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::jsonl::{load_bench, load_records, write_jsonl, HypothesisRecord, PairRecord, SourceRecord};
use crate::report;
use crate::{Error, Result};

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// `out` with its extension replaced, or suffixed when that would clash.
pub fn sibling(out: &Path, ext: &str) -> PathBuf {
    let p = out.with_extension(ext);
    if p == out {
        suffixed(out, &format!(".{ext}"))
    } else {
        p
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    suffixed(out, ".manifest.json")
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: &[&Path],
    counts: serde_json::Value,
    extra: serde_json::Value,
) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs.iter().map(|p| p.to_path_buf()).chain(cfg.toy_files()) {
        hashes.insert(p.display().to_string(), file_sha256(&p)?);
    }
    let mut manifest = json!({
        "command": command,
        "config_sha256": cfg.content_hash(),
        "seed": cfg.effective_seed(),
        "config": cfg,
        "inputs_sha256": hashes,
        "counts": counts,
    });
    if let (Some(m), serde_json::Value::Object(extra)) = (manifest.as_object_mut(), extra) {
        m.extend(extra);
    }
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&manifest_path(out), text.as_bytes())
}

fn jsonl_bytes<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to memory");
    buf
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenPairsSummary {
    pub sources: usize,
    pub cycles: usize,
    pub emitted: usize,
    pub rejected: BTreeMap<&'static str, usize>,
}

pub struct GenPairsArgs<'a> {
    pub config: &'a Path,
    pub out: &'a Path,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    /// Overrides `io.sources`.
    pub sources: Option<&'a Path>,
}

pub fn gen_pairs(args: &GenPairsArgs) -> Result<GenPairsSummary> {
    let mut cfg = RunConfig::load(args.config)?;
    cfg.set_seed(args.seed);
    cfg.require(&["generator", "scorer"])?;
    let sources_path = match (args.sources, &cfg.io.sources) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => return Err(Error::Config("no sources: set io.sources".into())),
    };
    let sources: Vec<SourceRecord> = load_records(&sources_path)?;
    let generator = cfg.language_model("generator")?;
    let scorer = cfg.scorer()?;
    info!("gen-pairs: {} source(s), seed {}", sources.len(), cfg.pairgen.seed);
    let outcomes: Vec<prmkit_core::Result<TreeOutcome>> = pool(args.jobs)?.install(|| {
        sources
            .par_iter()
            .map(|s| {
                let scorer = scorer.for_lang_pair(&s.lang_pair);
                build_tree(&s.source_text, &s.lang_pair, &cfg.pairgen, &*generator, &*scorer)
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut rejected_list = Vec::new();
    let mut summary = GenPairsSummary {
        sources: sources.len(),
        rejected: RejectReason::ALL.iter().map(|r| (r.as_str(), 0)).collect(),
        ..Default::default()
    };
    let mut forced = 0;
    let mut token_pairs = 0;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome.map_err(|e| {
            warn!("source {}: {e}", i + 1);
            e
        })?;
        summary.cycles += outcome.cycles;
        forced += outcome.forced_steps;
        for pair in &outcome.pairs {
            if let Err(msg) = pair.check(&cfg.pairgen) {
                return Err(Error::Core(prmkit_core::Error::InvalidInput(format!(
                    "pair {} violates its invariants: {msg}",
                    pair.pair_id
                ))));
            }
            if pair.level == Level::Token {
                token_pairs += 1;
            }
            records.push(PairRecord::from(pair));
        }
        for r in &outcome.rejected {
            *summary.rejected.entry(r.reason.as_str()).or_default() += 1;
            rejected_list.push(json!({
                "source_index": i,
                "step": r.step,
                "chosen_token_id": r.chosen_token,
                "rejected_token_id": r.rejected_token,
                "reason": r.reason,
                "chosen_score": r.chosen_score,
                "rejected_score": r.rejected_score,
            }));
        }
    }
    summary.emitted = records.len();
    let rejected_total: usize = summary.rejected.values().sum();
    debug_assert_eq!(summary.cycles, token_pairs + rejected_total);
    write_file(args.out, &jsonl_bytes(&records))?;
    write_manifest(
        args.out,
        "gen-pairs",
        &cfg,
        &[&sources_path],
        json!({
            "sources": summary.sources,
            "cycles": summary.cycles,
            "forced_steps": forced,
            "emitted": summary.emitted,
            "emitted_token_level": token_pairs,
            "rejected": rejected_total,
        }),
        json!({
            "rejected_by_reason": summary.rejected,
            "rejected_candidates": rejected_list,
            "outputs": { "pairs": args.out },
        }),
    )?;
    info!(
        "gen-pairs: {} cycle(s), {} pair(s) emitted, {} rejected",
        summary.cycles, summary.emitted, rejected_total
    );
    Ok(summary)
}

pub struct EvalArgs<'a> {
    pub config: &'a Path,
    pub bench: &'a Path,
    pub out: &'a Path,
    pub jobs: Option<usize>,
}

pub fn eval(args: &EvalArgs) -> Result<BenchReport> {
    let cfg = RunConfig::load(args.config)?;
    cfg.require(&["prm_policy", "prm_reference"])?;
    let items = load_bench(args.bench)?;
    if items.is_empty() {
        return Err(Error::Config(format!("{}: no benchmark items", args.bench.display())));
    }
    let policy = cfg.language_model("prm_policy")?;
    let reference = cfg.language_model("prm_reference")?;
    let verdicts: Vec<prmkit_core::Result<Verdict>> = pool(args.jobs)?.install(|| {
        items
            .par_iter()
            .map(|item| judge_item(item, &*policy, &*reference, &cfg.reward))
            .collect()
    });
    for (item, v) in items.iter().zip(&verdicts) {
        if let Err(e) = v {
            warn!("item {}: {e}", item.pair_id);
        }
    }
    let report = BenchReport::from_verdicts(&items, &verdicts)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(args.out, json.as_bytes())?;
    write_file(&sibling(args.out, "tsv"), report::bench_tsv(&report).as_bytes())?;
    write_file(&sibling(args.out, "md"), report::bench_markdown(&cfg.label, &report).as_bytes())?;
    let t = report.totals();
    write_manifest(
        args.out,
        "eval",
        &cfg,
        &[args.bench],
        json!({ "items": t.items, "correct": t.correct, "ties": t.ties, "errors": t.errors }),
        json!({ "outputs": { "report": args.out } }),
    )?;
    info!("eval: {} item(s), accuracy {:.4}, {} tie(s)", t.items, t.accuracy(), t.ties);
    Ok(report)
}

#[derive(Serialize)]
#[serde(untagged)]
enum CreditLine<'a> {
    Ok {
        index: usize,
        #[serde(flatten)]
        report: &'a CreditReport,
    },
    Err {
        index: usize,
        error: &'a str,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSummary {
    pub records: usize,
    pub errors: usize,
}

pub struct ScoreArgs<'a> {
    pub config: &'a Path,
    pub input: &'a Path,
    pub out: &'a Path,
    pub jobs: Option<usize>,
}

/// Writes one credit report per input record; record-level failures are
/// reported in place and counted.
pub fn score(args: &ScoreArgs) -> Result<ScoreSummary> {
    let cfg = RunConfig::load(args.config)?;
    cfg.require(&["prm_policy", "prm_reference"])?;
    let records: Vec<HypothesisRecord> = load_records(args.input)?;
    let policy = cfg.language_model("prm_policy")?;
    let reference = cfg.language_model("prm_reference")?;
    let scorer = if cfg.has_slot("scorer") { Some(cfg.scorer()?) } else { None };
    let results: Vec<prmkit_core::Result<CreditReport>> = pool(args.jobs)?.install(|| {
        records
            .par_iter()
            .map(|r| {
                let seq = prmkit_core::tokenize(&*policy, &r.source_text, &r.hypothesis_text, false)?;
                let s = scorer.as_ref().map(|s| s.for_lang_pair(&r.lang_pair));
                credit_report(&seq, &*policy, &*reference, &cfg.reward, s.as_deref())
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => rows.push((i, Ok(r))),
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                warn!("record {}: {e}", i + 1);
                rows.push((i, Err(e.to_string())));
            }
        }
    }
    let lines: Vec<CreditLine> = rows
        .iter()
        .map(|(i, r)| match r {
            Ok(report) => CreditLine::Ok { index: *i, report },
            Err(e) => CreditLine::Err { index: *i, error: e },
        })
        .collect();
    write_file(args.out, &jsonl_bytes(&lines))?;
    write_file(&sibling(args.out, "tsv"), report::credit_tsv(&rows).as_bytes())?;
    let summary = ScoreSummary {
        records: rows.len(),
        errors: rows.iter().filter(|(_, r)| r.is_err()).count(),
    };
    write_manifest(
        args.out,
        "score",
        &cfg,
        &[args.input],
        json!({ "records": summary.records, "errors": summary.errors }),
        json!({ "outputs": { "reports": args.out } }),
    )?;
    if summary.errors > 0 {
        warn!("score: {} of {} record(s) failed", summary.errors, summary.records);
    }
    Ok(summary)
}

pub struct DecodeArgs<'a> {
    pub config: &'a Path,
    pub input: &'a Path,
    pub out: &'a Path,
    pub jobs: Option<usize>,
    pub w: Option<f64>,
    pub k: Option<usize>,
    pub greedy: bool,
}

fn decode_models(cfg: &RunConfig, mode: DecodeMode) -> Result<[Box<dyn LanguageModel>; 3]> {
    let generator = cfg.language_model("generator")?;
    if mode == DecodeMode::Greedy && !cfg.has_slot("prm_policy") && !cfg.has_slot("prm_reference") {
        // Greedy decoding never queries the PRM.
        let g2 = cfg.language_model("generator")?;
        let g3 = cfg.language_model("generator")?;
        return Ok([generator, g2, g3]);
    }
    cfg.require(&["prm_policy", "prm_reference"])?;
    Ok([generator, cfg.language_model("prm_policy")?, cfg.language_model("prm_reference")?])
}

/// Decodes every source and writes one hypothesis per line.
pub fn decode_cmd(args: &DecodeArgs) -> Result<usize> {
    let mut cfg = RunConfig::load(args.config)?;
    if let Some(w) = args.w {
        cfg.decode.w = w;
    }
    if let Some(k) = args.k {
        cfg.decode.k = k;
    }
    if args.greedy {
        cfg.decode.mode = DecodeMode::Greedy;
    }
    cfg.decode.validate()?;
    cfg.require(&["generator"])?;
    let sources: Vec<SourceRecord> = load_records(args.input)?;
    let [generator, policy, reference] = decode_models(&cfg, cfg.decode.mode)?;
    let outputs: Vec<prmkit_core::Result<String>> = pool(args.jobs)?.install(|| {
        sources
            .par_iter()
            .map(|s| {
                let seq = decode(&s.source_text, &*generator, &*policy, &*reference, &cfg.decode)?;
                generator.decode(&seq.continuation)
            })
            .collect()
    });
    let mut text = Vec::new();
    for o in outputs {
        writeln!(text, "{}", o?).expect("writing to memory");
    }
    write_file(args.out, &text)?;
    write_manifest(
        args.out,
        "decode",
        &cfg,
        &[args.input],
        json!({ "sources": sources.len() }),
        json!({ "outputs": { "hypotheses": args.out } }),
    )?;
    info!("decode: {} hypothesis(es) written", sources.len());
    Ok(sources.len())
}

pub struct SweepArgs<'a> {
    pub config: &'a Path,
    pub input: &'a Path,
    pub out: &'a Path,
    pub jobs: Option<usize>,
    pub w_grid: Option<Vec<f64>>,
}

/// Decodes every source under every `w` and writes the mean-quality grid,
/// one row per task (language pair).
pub fn sweep(args: &SweepArgs) -> Result<SweepReport> {
    let mut cfg = RunConfig::load(args.config)?;
    if let Some(grid) = &args.w_grid {
        if grid.is_empty() {
            return Err(Error::Config("--w-grid is empty".into()));
        }
        cfg.sweep.w_grid = grid.clone();
    }
    cfg.decode.mode = DecodeMode::RewardGuided;
    cfg.require(&["generator", "prm_policy", "prm_reference", "scorer"])?;
    let sources: Vec<SourceRecord> = load_records(args.input)?;
    let [generator, policy, reference] = decode_models(&cfg, DecodeMode::RewardGuided)?;
    let scorer = cfg.scorer()?;
    let mut tasks: Vec<(String, Vec<&str>)> = Vec::new();
    for s in &sources {
        let task = if s.lang_pair.is_empty() { "all" } else { s.lang_pair.as_str() };
        match tasks.iter_mut().find(|(t, _)| t == task) {
            Some((_, v)) => v.push(&s.source_text),
            None => tasks.push((task.to_string(), vec![&s.source_text])),
        }
    }
    let grid = cfg.sweep.w_grid.clone();
    let mut jobs: Vec<(usize, Option<f64>)> = Vec::new();
    for t in 0..tasks.len() {
        if cfg.sweep.greedy_baseline {
            jobs.push((t, None));
        }
        jobs.extend(grid.iter().map(|&w| (t, Some(w))));
    }
    let cells: Vec<prmkit_core::Result<f64>> = pool(args.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(t, w)| {
                let (task, srcs) = &tasks[t];
                let s = scorer.for_lang_pair(if task == "all" { "" } else { task });
                let mut dc = cfg.decode.clone();
                if w.is_none() {
                    dc.mode = DecodeMode::Greedy;
                }
                let w = [w.unwrap_or(0.0)];
                let r = sweep_w(srcs, &*generator, &*policy, &*reference, &dc, &w, &*s, &cfg.label, task)?;
                Ok(r.rows[0].scores[0])
            })
            .collect()
    });
    let mut cells = cells.into_iter();
    let mut report = SweepReport {
        w_values: grid.clone(),
        rows: Vec::new(),
    };
    for (task, _) in &tasks {
        if cfg.sweep.greedy_baseline {
            let g = cells.next().expect("one cell per job")?;
            report.rows.push(SweepRow {
                label: "greedy".into(),
                task: task.clone(),
                scores: vec![g; grid.len()],
            });
        }
        let scores = (0..grid.len())
            .map(|_| cells.next().expect("one cell per job"))
            .collect::<prmkit_core::Result<Vec<_>>>()?;
        report.rows.push(SweepRow {
            label: cfg.label.clone(),
            task: task.clone(),
            scores,
        });
    }
    write_file(args.out, report::sweep_tsv(&report).as_bytes())?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(&sibling(args.out, "json"), json.as_bytes())?;
    write_file(&sibling(args.out, "md"), report::sweep_markdown(&report).as_bytes())?;
    write_manifest(
        args.out,
        "sweep",
        &cfg,
        &[args.input],
        json!({ "sources": sources.len(), "tasks": tasks.len(), "columns": grid.len() }),
        json!({ "outputs": { "grid": args.out } }),
    )?;
    Ok(report)
}
