use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Deserialize;

use super::stages::{probe_file, read_entries, read_fits, train_file, vocab_report_file};
use super::Run;
use crate::error::{Error, Result};
use crate::lexicon::{Condition, Klass};
use crate::stats::{format_p, stars};
use crate::tokenizer::VocabReport;

#[derive(Debug, Deserialize)]
struct SimilarityRow {
    study: String,
    layer: usize,
    kind: String,
    cosine: f64,
}

#[derive(Debug, Deserialize)]
struct LossRow {
    loss: f64,
}

#[derive(Debug, Deserialize)]
struct EvalRow {
    epoch: usize,
    lang: String,
    test_loss: f64,
}

/// Reads an optional stage output: `None` if it was never written, an
/// error if it belongs to another config.
fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MissingStage { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn parse_csv<T: for<'de> Deserialize<'de>>(body: &str, what: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Config(format!("{what}: {e}"))))
        .collect()
}

/// Collates vocabulary, training, surprisal and similarity results of the
/// selected conditions into `report.md`.
pub fn cmd_report(run: &Run) -> Result<PathBuf> {
    let entries = read_entries(run)?;
    let count = |k: Klass| entries.iter().filter(|e| e.klass == k).count();
    let mut reports: BTreeMap<Condition, VocabReport> = BTreeMap::new();
    for &c in &run.conditions {
        let v = run.read_json("tokenize", &vocab_report_file(c))?;
        reports.insert(c, serde_json::from_value(v)?);
    }

    let mut md = String::from("# bilex report\n\n");
    let _ = writeln!(md, "Config hash `{}`, version `{}`.\n", run.hash, super::VERSION);
    md.push_str("## Vocabulary\n\n");
    md.push_str("| Condition | Size | Shared ids | Per-language forms | Forced forms | Parameters |\n|---|---:|---:|---:|---:|---:|\n");
    for (c, r) in &reports {
        let forced: usize = r.by_klass.iter().filter(|(k, _)| ["friend", "falsefriend", "control", "ambiguous"].contains(&k.as_str())).map(|(_, n)| n.shared + n.per_language).sum();
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            c.label(),
            r.size,
            r.total.shared,
            r.total.per_language,
            forced,
            run.config.model.with_vocab(r.size).n_params()
        );
    }
    md.push('\n');
    let size = |c: Condition| reports.get(&c).map(|r| r.size as i64);
    if let (Some(d), Some(b)) = (size(Condition::D), size(Condition::B)) {
        let _ = writeln!(md, "- D − B vocabulary delta = {} (friends shared in B: {})", d - b, count(Klass::Friend));
    }
    if let (Some(d), Some(c)) = (size(Condition::D), size(Condition::C)) {
        let _ = writeln!(md, "- D − C vocabulary delta = {} (false friends shared in C: {})", d - c, count(Klass::FalseFriend));
    }
    let _ = writeln!(
        md,
        "- Overlap classes: {} friends, {} false friends, {} ambiguous, {} other, {} punctuation; {} controls\n",
        count(Klass::Friend),
        count(Klass::FalseFriend),
        count(Klass::Ambiguous),
        count(Klass::Other),
        count(Klass::Punctuation),
        count(Klass::Control)
    );

    md.push_str("## Training\n\n");
    let mut any_train = false;
    for &c in &run.conditions {
        let Some(loss) = optional(run.read_text("train", &train_file(c, "loss.csv")))? else {
            continue;
        };
        if !any_train {
            md.push_str("| Condition | Steps | Final train loss | Test loss (last epoch) |\n|---|---:|---:|---|\n");
            any_train = true;
        }
        let rows: Vec<LossRow> = parse_csv(&loss, "loss.csv")?;
        let evals: Vec<EvalRow> = match optional(run.read_text("train", &train_file(c, "eval.csv")))? {
            Some(b) => parse_csv(&b, "eval.csv")?,
            None => Vec::new(),
        };
        let last_epoch = evals.iter().map(|e| e.epoch).max();
        let test: Vec<String> = evals
            .iter()
            .filter(|e| Some(e.epoch) == last_epoch)
            .map(|e| format!("{} {:.4}", e.lang, e.test_loss))
            .collect();
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            c.label(),
            rows.len(),
            rows.last().map(|r| format!("{:.4}", r.loss)).unwrap_or_default(),
            if test.is_empty() { "n/a".to_string() } else { test.join(", ") }
        );
    }
    if !any_train {
        md.push_str("Not run.\n");
    }
    md.push('\n');

    md.push_str("## Surprisal\n\n");
    match optional(read_fits(run))? {
        None => md.push_str("Not run.\n\n"),
        Some(fits) => {
            md.push_str("Experimental minus control surprisal (bits); WordCategory is sum-coded, so the contrast is 2β. ");
            md.push_str("`*` p < .05, `**` p < .01, `***` p < .001 (Wald, normal approximation).\n\n");
            md.push_str("| Study | Condition | Experimental | Control | Δ | β WordCategory | p | |\n|---|---|---:|---:|---:|---:|---:|---|\n");
            for f in &fits {
                let (b, p) = f.main.coefficient("WordCategory").unwrap_or((f64::NAN, f64::NAN));
                let _ = writeln!(
                    md,
                    "| {} | {} | {:.3} | {:.3} | {:+.3} | {:+.4} | {} | {} |",
                    f.study,
                    f.condition.label(),
                    f.mean_experimental,
                    f.mean_control,
                    f.mean_experimental - f.mean_control,
                    b,
                    format_p(p),
                    stars(p)
                );
            }
            md.push_str("\n### Frequency predictors\n\n| Study | Condition | β FreqS | β FreqO | χ² | df | p |\n|---|---|---:|---:|---:|---:|---:|\n");
            for f in &fits {
                if let (Some(full), Some(l)) = (&f.freq_full, &f.freq_lrt) {
                    let coef = |t| full.coefficient(t).map(|c| format!("{:+.4}", c.0)).unwrap_or_else(|| "n/a".into());
                    let _ = writeln!(
                        md,
                        "| {} | {} | {} | {} | {:.3} | {} | {} |",
                        f.study,
                        f.condition.label(),
                        coef("FreqS"),
                        coef("FreqO"),
                        l.chi2,
                        l.df,
                        format_p(l.p_value)
                    );
                }
            }
            md.push('\n');
        }
    }

    md.push_str("## Cross-lingual similarity\n\n");
    let mut any_sim = false;
    for &c in &run.conditions {
        let Some(body) = optional(run.read_text("probe", &probe_file(c, "similarity.csv")))? else {
            continue;
        };
        if !any_sim {
            md.push_str("Mean cosine between the L1 and L2 pooled embeddings of each word.\n\n");
            md.push_str("| Condition | Study | Layer | Kind | Mean cosine | Words |\n|---|---|---:|---|---:|---:|\n");
            any_sim = true;
        }
        let rows: Vec<SimilarityRow> = parse_csv(&body, "similarity.csv")?;
        let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
        for r in rows {
            groups.entry((r.study, r.layer, r.kind)).or_default().push(r.cosine);
        }
        for ((study, layer, kind), v) in groups {
            let _ = writeln!(
                md,
                "| {} | {study} | {layer} | {kind} | {:.4} | {} |",
                c.label(),
                v.iter().sum::<f64>() / v.len() as f64,
                v.len()
            );
        }
    }
    if !any_sim {
        md.push_str("Not run.\n");
    }
    run.write_text("report.md", &md)
}
