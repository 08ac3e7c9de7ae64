//! Text renderings of benchmark, credit-assignment and sweep reports.

use std::fmt::Write;

use prmkit_core::bench::{BenchReport, LevelReport};
use prmkit_core::implicit_prm::CreditReport;
use prmkit_core::tta::SweepReport;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn opt3(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// One row per (level, direction) plus the three averages of each level.
pub fn bench_tsv(report: &BenchReport) -> String {
    let mut out = String::from("level\tlang_pair\titems\tcorrect\tincorrect\tties\terrors\taccuracy\n");
    for (level, r) in report.levels() {
        let level = level.as_str();
        for (lp, t) in &r.per_direction {
            let _ = writeln!(
                out,
                "{level}\t{lp}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.items,
                t.correct,
                t.incorrect,
                t.ties,
                t.errors,
                t.accuracy()
            );
        }
        let t = &r.totals;
        let _ = writeln!(
            out,
            "{level}\tALL\t{}\t{}\t{}\t{}\t{}\t{}",
            t.items, t.correct, t.incorrect, t.ties, t.errors, r.accuracy
        );
        let _ = writeln!(out, "{level}\tEN→XX\t\t\t\t\t\t{}", opt(r.en_xx));
        let _ = writeln!(out, "{level}\tXX→EN\t\t\t\t\t\t{}", opt(r.xx_en));
        let _ = writeln!(out, "{level}\tAvg.\t\t\t\t\t\t{}", r.average);
    }
    out
}

fn level_cells(r: Option<&LevelReport>) -> [String; 3] {
    match r {
        Some(r) => [opt3(r.en_xx), opt3(r.xx_en), format!("{:.3}", r.average)],
        None => ["-".into(), "-".into(), "-".into()],
    }
}

/// Sequence-level and token-level EN→XX / XX→EN / Avg. columns, one row.
pub fn bench_markdown(label: &str, report: &BenchReport) -> String {
    let s = level_cells(report.sequence.as_ref());
    let t = level_cells(report.token.as_ref());
    let ties = report.totals().ties;
    format!(
        "| Model | Seq EN→XX | Seq XX→EN | Seq Avg. | Tok EN→XX | Tok XX→EN | Tok Avg. |\n\
         |---|---|---|---|---|---|---|\n\
         | {label} | {} | {} | {} | {} | {} | {} |\n\n\
         Ties count as incorrect ({ties} tie(s)).\n",
        s[0], s[1], s[2], t[0], t[1], t[2]
    )
}

/// Two rows per hypothesis: token texts, then their rewards, each followed
/// by the weighted reward and quality columns.
pub fn credit_tsv(reports: &[(usize, Result<CreditReport, String>)]) -> String {
    let mut out = String::new();
    for (i, r) in reports {
        match r {
            Ok(r) => {
                let tokens: Vec<String> = r.tokens.iter().map(|t| format!("'{t}'")).collect();
                let rewards: Vec<String> = r.rewards.iter().map(|x| format!("{x:.4}")).collect();
                let quality = r.quality.map_or_else(|| "-".to_string(), |q| format!("{q:.4}"));
                let _ = writeln!(out, "{i}\ttokens\t{}\tweighted_reward\tquality", tokens.join("\t"));
                let _ = writeln!(
                    out,
                    "{i}\trewards\t{}\t{:.4}\t{quality}",
                    rewards.join("\t"),
                    r.weighted_reward
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{i}\terror\t{e}");
            }
        }
    }
    out
}

/// Rows are decoding configurations, columns are `w` values.
pub fn sweep_tsv(report: &SweepReport) -> String {
    let mut out = String::from("model\ttask");
    for w in &report.w_values {
        let _ = write!(out, "\tw={w}");
    }
    out.push('\n');
    for row in &report.rows {
        let _ = write!(out, "{}\t{}", row.label, row.task);
        for s in &row.scores {
            let _ = write!(out, "\t{s}");
        }
        out.push('\n');
    }
    out
}

pub fn sweep_markdown(report: &SweepReport) -> String {
    let mut out = String::from("| Model | Task |");
    for w in &report.w_values {
        let _ = write!(out, " w={w} |");
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(report.w_values.len()));
    out.push('\n');
    for row in &report.rows {
        let _ = write!(out, "| {} | {} |", row.label, row.task);
        for s in &row.scores {
            let _ = write!(out, " {s:.4} |");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use prmkit_core::tta::SweepRow;

    #[test]
    fn sweep_grid_shape() {
        let report = SweepReport {
            w_values: vec![0.0, 0.3],
            rows: vec![SweepRow {
                label: "prm".into(),
                task: "zh-en".into(),
                scores: vec![0.5, 0.75],
            }],
        };
        assert_eq!(sweep_tsv(&report), "model\ttask\tw=0\tw=0.3\nprm\tzh-en\t0.5\t0.75\n");
        assert!(sweep_markdown(&report).contains("| prm | zh-en | 0.5000 | 0.7500 |"));
    }

    #[test]
    fn credit_rows() {
        let r = CreditReport {
            source_text: "s".into(),
            hypothesis_text: "ab".into(),
            tokens: vec!["a".into(), "b".into()],
            rewards: vec![0.5, -1.0],
            cumulative: vec![0.5, -0.5],
            weighted_reward: 0.0,
            quality: Some(0.8),
        };
        let text = credit_tsv(&[(0, Ok(r)), (1, Err("empty".into()))]);
        assert_eq!(
            text,
            "0\ttokens\t'a'\t'b'\tweighted_reward\tquality\n0\trewards\t0.5000\t-1.0000\t0.0000\t0.8000\n1\terror\tempty\n"
        );
    }
}
