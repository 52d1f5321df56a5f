use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::Run;
use crate::corpus::{log_normalize, FrequencyTable, NormalizedFrequency};
use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::lexicon::{AnnotationFile, Condition, ConditionManifest, Klass, LexiconEntry};
use crate::model::{init_model, train, ModelCheckpoint, Streams};
use crate::probes::{
    calibrate_standardizer, cross_lingual_similarity, read_stimuli, similarity_csv_rows, split_sentences,
    surprisal_csv_rows, surprisal_table, ProbeContext, Sentence, StimulusItem, WordCategory, SIMILARITY_HEADER,
    SURPRISAL_HEADER,
};
use crate::stats::{build_design, fit_mixed, lrt, FitOptions, FitReport, LrtResult, Observation, RegressionSpec};
use crate::tokenizer::ConditionVocabulary;
use crate::workflow::{build_vocabularies, lexicon_stage, pack_stream};

/// The two stimulus studies: overlap class of the experimental words.
pub const STUDIES: [(&str, Klass); 2] = [("friends", Klass::Friend), ("falsefriends", Klass::FalseFriend)];

const LEXICON: &str = "lexicon";
const TOKENIZE: &str = "tokenize";
const TRAIN: &str = "train";
const PROBE: &str = "probe";

pub(super) fn manifest_file(c: Condition) -> String {
    format!("lexicon/manifest_{}.json", c.letter())
}

pub(super) fn vocab_file(c: Condition) -> String {
    format!("tokenizer/vocab_{}.json", c.letter())
}

pub(super) fn vocab_report_file(c: Condition) -> String {
    format!("tokenizer/report_{}.json", c.letter())
}

pub(super) fn train_file(c: Condition, name: &str) -> String {
    format!("train/{}/{name}", c.letter())
}

pub(super) fn probe_file(c: Condition, name: &str) -> String {
    format!("probe/{}/{name}", c.letter())
}

fn strip(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.remove("provenance");
    }
    v
}

/// Frequency tables, overlap classification and the four manifests.
pub fn cmd_lexicon(run: &Run) -> Result<Vec<PathBuf>> {
    let stores = run.corpora()?;
    let annotations = run
        .config
        .paths
        .annotations
        .iter()
        .map(|p| AnnotationFile::load(p))
        .collect::<Result<Vec<_>>>()?;
    let lex = lexicon_stage([&stores[0], &stores[1]], &annotations, &run.extra_ne_forms()?)?;
    let mut out = Vec::new();
    for (lang, table) in LanguageTag::BOTH.iter().zip(&lex.tables) {
        let mut buf = Vec::new();
        table.write_tsv(&mut buf).map_err(|e| Error::io("<tsv>", e))?;
        let body = String::from_utf8(buf).map_err(|e| Error::Corpus(e.to_string()))?;
        out.push(run.write_text(&format!("lexicon/freq_{}.tsv", lang.to_string().to_lowercase()), &body)?);
    }
    let mut by_klass = std::collections::BTreeMap::<&str, usize>::new();
    for e in &lex.entries {
        *by_klass.entry(e.klass.as_str()).or_default() += 1;
    }
    out.push(run.write_json(
        "lexicon/entries.json",
        json!({
            "overlap": lex.overlap.len(),
            "by_klass": by_klass,
            "punctuation": lex.punct,
            "ne_forms": lex.ne_forms.len(),
            "entries": lex.entries,
        }),
    )?);
    for m in &lex.manifests {
        out.push(run.write_json(&manifest_file(m.condition), serde_json::to_value(m)?)?);
    }
    log::info!("lexicon: {} overlapping forms, {:?}", lex.overlap.len(), by_klass);
    Ok(out)
}

pub(super) fn read_entries(run: &Run) -> Result<Vec<LexiconEntry>> {
    let v = run.read_json(LEXICON, "lexicon/entries.json")?;
    Ok(serde_json::from_value(v["entries"].clone())?)
}

pub(super) fn read_manifest(run: &Run, c: Condition) -> Result<ConditionManifest> {
    Ok(serde_json::from_value(strip(run.read_json(LEXICON, &manifest_file(c))?))?)
}

pub(super) fn read_freq(run: &Run, lang: LanguageTag) -> Result<FrequencyTable> {
    let rel = format!("lexicon/freq_{}.tsv", lang.to_string().to_lowercase());
    run.read_text(LEXICON, &rel)?;
    FrequencyTable::read_tsv(&run.path(&rel), lang)
}

/// One tokenizer model per selected condition, all from the same BPE merges.
pub fn cmd_tokenize(run: &Run) -> Result<Vec<PathBuf>> {
    let entries = read_entries(run)?;
    let manifests = run.conditions.iter().map(|&c| read_manifest(run, c)).collect::<Result<Vec<_>>>()?;
    let stores = run.corpora()?;
    let vocabs = build_vocabularies([&stores[0], &stores[1]], &manifests, &entries, &run.config.tokenizer)?;
    let mut out = Vec::new();
    for v in &vocabs {
        let model: Value = serde_json::from_str(&v.to_json())?;
        out.push(run.write_json(&vocab_file(v.condition), model)?);
        out.push(run.write_json(&vocab_report_file(v.condition), serde_json::to_value(v.report())?)?);
        log::info!("tokenize: condition {} has {} ids", v.condition, v.size());
    }
    Ok(out)
}

pub(super) fn load_vocab(run: &Run, c: Condition) -> Result<ConditionVocabulary> {
    let v = strip(run.read_json(TOKENIZE, &vocab_file(c))?);
    ConditionVocabulary::from_json(&serde_json::to_string(&v)?)
}

pub(super) fn load_checkpoint(run: &Run, c: Condition) -> Result<ModelCheckpoint> {
    let path = run.path(&train_file(c, "model.blxc"));
    if !path.is_file() {
        return Err(Error::MissingStage { stage: TRAIN.into(), path });
    }
    let ck = ModelCheckpoint::load(&path)?;
    let found = ck.meta.get("config_hash").cloned().unwrap_or_else(|| "<none>".into());
    if found != run.hash {
        return Err(Error::StaleStage { path, found, expected: run.hash.clone() });
    }
    Ok(ck)
}

/// Trains one model per selected condition: checkpoint plus loss logs.
pub fn cmd_train(run: &Run) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for &c in &run.conditions {
        let vocab = load_vocab(run, c)?;
        let stores = run.corpora()?;
        let streams = [pack_stream(&vocab, &stores[0]), pack_stream(&vocab, &stores[1])];
        let test = run
            .test_corpora()?
            .map(|t| [pack_stream(&vocab, &t[0]), pack_stream(&vocab, &t[1])]);
        let mut ck = init_model(&run.config.model.with_vocab(vocab.size()))?;
        ck.meta.insert("config_hash".into(), run.hash.clone());
        ck.meta.insert("version".into(), super::VERSION.into());
        ck.meta.insert("condition".into(), c.letter().into());
        log::info!("train: condition {c}, {} parameters", ck.weights.n_params());
        let (ck, log) = train(
            ck,
            Streams {
                train: [&streams[0], &streams[1]],
                test: test.as_ref().map(|t| [t[0].as_slice(), t[1].as_slice()]),
            },
            &run.config.train,
        )
        .map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("condition {c}: {m}")),
            other => other,
        })?;
        let path = run.path(&train_file(c, "model.blxc"));
        super::write_file(&path, &ck.to_bytes()?)?;
        out.push(path);
        out.push(run.write_text(&train_file(c, "loss.csv"), &log.to_csv())?);
        out.push(run.write_text(&train_file(c, "eval.csv"), &log.eval_csv())?);
    }
    Ok(out)
}

fn study_items(run: &Run) -> Result<Vec<(&'static str, Vec<StimulusItem>)>> {
    let p = &run.config.paths;
    let mut out = Vec::new();
    for ((study, _), path) in STUDIES.iter().zip([&p.friends_stimuli, &p.falsefriends_stimuli]) {
        match path {
            Some(path) => out.push((*study, read_stimuli(path, &run.config.languages)?)),
            None => log::warn!("no stimuli configured for the {study} study"),
        }
    }
    Ok(out)
}

/// Surprisal on every stimulus item and cross-lingual similarity of every
/// annotated overlap word, per selected condition.
pub fn cmd_probe(run: &Run) -> Result<Vec<PathBuf>> {
    let studies = study_items(run)?;
    let entries = read_entries(run)?;
    let stores = run.corpora()?;
    let sentences = [split_sentences(&stores[0]), split_sentences(&stores[1])];
    let all: Vec<&Sentence> = sentences.iter().flatten().collect();
    let probe = &run.config.probe;
    let mut out = Vec::new();
    for &c in &run.conditions {
        let vocab = load_vocab(run, c)?;
        let ck = load_checkpoint(run, c)?;
        let mut csv = format!("{SURPRISAL_HEADER}\n");
        for (study, items) in &studies {
            let recs = surprisal_table(&ck, &vocab, items)?;
            let ctx = ProbeContext {
                study: study.to_string(),
                condition: c.letter().into(),
                layer: ck.config.n_layers,
                seed: run.config.model.seed,
            };
            surprisal_csv_rows(&ctx, &recs, &mut csv);
        }
        out.push(run.write_text(&probe_file(c, "surprisal.csv"), &csv)?);

        let mut sim = format!("{SIMILARITY_HEADER}\n");
        let mut standardizers = Vec::new();
        let mut skipped = Vec::new();
        for layer in run.config.probe_layers() {
            for &seed in &probe.seeds {
                let std = calibrate_standardizer(&ck, &vocab, &all, layer, probe.n_calibration, seed)?;
                standardizers.push(json!({
                    "layer": layer,
                    "seed": seed,
                    "n_instances": std.n_instances,
                    "excluded_dims": std.excluded,
                }));
                for (study, klass) in STUDIES {
                    let words: Vec<String> = entries.iter().filter(|e| e.klass == klass).map(|e| e.form.clone()).collect();
                    if words.is_empty() {
                        continue;
                    }
                    let res = cross_lingual_similarity(
                        &ck,
                        &vocab,
                        &std,
                        [&sentences[0], &sentences[1]],
                        &words,
                        probe.n_sentences,
                        seed,
                    )?;
                    let ctx = ProbeContext { study: study.into(), condition: c.letter().into(), layer, seed };
                    similarity_csv_rows(&ctx, &res.records, &mut sim);
                    for s in res.skipped {
                        skipped.push(json!({ "study": study, "layer": layer, "seed": seed, "skip": s }));
                    }
                }
            }
        }
        out.push(run.write_text(&probe_file(c, "similarity.csv"), &sim)?);
        out.push(run.write_json(
            &probe_file(c, "probe.json"),
            json!({ "condition": c, "standardizers": standardizers, "skipped": skipped }),
        )?);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct SurprisalRow {
    study: String,
    item_id: String,
    lang: String,
    word_category: String,
    target: String,
    surprisal_bits: f64,
    word_index: usize,
    sentence_words: usize,
}

/// Mixed-model results for one study under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyFit {
    pub study: String,
    pub condition: Condition,
    pub mean_experimental: f64,
    pub mean_control: f64,
    /// REML fit of the main model.
    pub main: FitReport,
    /// ML fits without and with other-language frequency, and their LRT.
    pub freq_restricted: Option<FitReport>,
    pub freq_full: Option<FitReport>,
    pub freq_lrt: Option<LrtResult>,
    #[serde(default)]
    pub notes: Vec<String>,
}

fn read_surprisal(run: &Run, c: Condition) -> Result<Vec<SurprisalRow>> {
    let body = run.read_text(PROBE, &probe_file(c, "surprisal.csv"))?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Stats(format!("{}: {e}", probe_file(c, "surprisal.csv")))))
        .collect()
}

fn normalized(tables: &[FrequencyTable; 2], support: &BTreeSet<String>) -> Option<[NormalizedFrequency; 2]> {
    Some([log_normalize(&tables[0], support).ok()?, log_normalize(&tables[1], support).ok()?])
}

fn fit_study(run: &Run, study: &str, c: Condition, rows: &[&SurprisalRow], tables: &[FrequencyTable; 2]) -> Result<StudyFit> {
    let names = &run.config.languages;
    let support: BTreeSet<String> = rows.iter().map(|r| r.target.clone()).collect();
    let norms = normalized(tables, &support);
    let mut notes = Vec::new();
    let mut obs = Vec::with_capacity(rows.len());
    for r in rows {
        let lang = names
            .parse(&r.lang)
            .ok_or_else(|| Error::Stats(format!("unknown language {:?} in surprisal rows", r.lang)))?;
        let word_category = WordCategory::parse(&r.word_category)
            .ok_or_else(|| Error::Stats(format!("unknown word category {:?}", r.word_category)))?;
        obs.push(Observation {
            item: r.item_id.clone(),
            y: r.surprisal_bits,
            word_category,
            word_index: r.word_index,
            sentence_words: r.sentence_words,
            vocabulary: c.letter().into(),
            freq_s: norms.as_ref().and_then(|n| n[lang.index()].get(&r.target)),
            freq_o: norms.as_ref().and_then(|n| n[lang.other().index()].get(&r.target)),
        });
    }
    let mean = |cat: WordCategory| {
        let v: Vec<f64> = obs.iter().filter(|o| o.word_category == cat).map(|o| o.y).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let mode = run.config.stats.word_index;
    let index_of = |o: &Observation| match mode {
        crate::stats::WordIndexMode::Raw => o.word_index as f64,
        crate::stats::WordIndexMode::Normalized => o.word_index as f64 / o.sentence_words.max(1) as f64,
    };
    let mut base: Vec<&str> = vec!["WordCategory"];
    if obs.iter().any(|o| index_of(o) != index_of(&obs[0])) {
        base.push("WordIndex");
    } else {
        notes.push("WordIndex is constant over the items and was left out".into());
    }
    let spec = |terms: &[&str]| -> Result<RegressionSpec> {
        let mut s = RegressionSpec::new(terms)?;
        s.word_index = mode;
        Ok(s)
    };
    let main_spec = spec(&base)?;
    let main = fit_mixed(&build_design(&obs, &main_spec)?, FitOptions::reml())?;
    let main = FitReport::new(&main_spec, &main);

    let (mut freq_restricted, mut freq_full, mut freq_lrt) = (None, None, None);
    if norms.is_none() {
        notes.push("frequencies do not vary over the targets; frequency models skipped".into());
    } else {
        let mut r_terms = base.clone();
        r_terms.push("FreqS");
        let mut f_terms = r_terms.clone();
        f_terms.push("FreqO");
        let (rs, fs) = (spec(&r_terms)?, spec(&f_terms)?);
        let fitted = build_design(&obs, &rs)
            .and_then(|d| fit_mixed(&d, FitOptions::ml()))
            .and_then(|r| Ok((r, fit_mixed(&build_design(&obs, &fs)?, FitOptions::ml())?)));
        match fitted {
            Ok((r, f)) => {
                freq_lrt = Some(lrt(&r, &f)?);
                freq_restricted = Some(FitReport::new(&rs, &r));
                freq_full = Some(FitReport::new(&fs, &f));
            }
            Err(e) => notes.push(format!("frequency models skipped: {e}")),
        }
    }
    Ok(StudyFit {
        study: study.into(),
        condition: c,
        mean_experimental: mean(WordCategory::Experimental),
        mean_control: mean(WordCategory::Control),
        main,
        freq_restricted,
        freq_full,
        freq_lrt,
        notes,
    })
}

/// Main REML fit and frequency LRT for every study × selected condition.
pub fn cmd_stats(run: &Run) -> Result<Vec<PathBuf>> {
    let tables = [read_freq(run, LanguageTag::L1)?, read_freq(run, LanguageTag::L2)?];
    let mut fits = Vec::new();
    let per_condition: Vec<(Condition, Vec<SurprisalRow>)> =
        run.conditions.iter().map(|&c| Ok((c, read_surprisal(run, c)?))).collect::<Result<_>>()?;
    for (study, _) in STUDIES {
        for (c, rows) in &per_condition {
            let rows: Vec<&SurprisalRow> = rows.iter().filter(|r| r.study == study).collect();
            if rows.is_empty() {
                continue;
            }
            fits.push(fit_study(run, study, *c, &rows, &tables)?);
        }
    }
    let mut md = String::from("# Mixed-effects fits\n\n");
    for f in &fits {
        md.push_str(&f.main.markdown(&format!("{} / condition {}", f.study, f.condition.letter())));
        if let (Some(full), Some(l)) = (&f.freq_full, &f.freq_lrt) {
            let _ = writeln!(
                md,
                "\nAdding FreqO (ML): χ²({}) = {:.3}, p = {}; β(FreqO) = {}.",
                l.df,
                l.chi2,
                crate::stats::format_p(l.p_value),
                full.coefficient("FreqO").map(|b| format!("{:.4}", b.0)).unwrap_or_else(|| "n/a".into())
            );
        }
        for n in &f.notes {
            let _ = writeln!(md, "\nNote: {n}.");
        }
        md.push('\n');
    }
    Ok(vec![
        run.write_json("stats/fits.json", json!({ "fits": fits }))?,
        run.write_text("stats/summary.md", &md)?,
    ])
}

pub(super) fn read_fits(run: &Run) -> Result<Vec<StudyFit>> {
    let v = run.read_json("stats", "stats/fits.json")?;
    Ok(serde_json::from_value(v["fits"].clone())?)
}
