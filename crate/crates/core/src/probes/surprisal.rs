use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::word_tokenize;
use crate::error::{Error, Result};
use crate::lang::{LanguageNames, LanguageTag};
use crate::model::ModelCheckpoint;
use crate::tokenizer::ConditionVocabulary;

/// One minimal-pair sentence frame: the same prefix followed by either the
/// experimental or the control word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusItem {
    pub item_id: String,
    pub lang: LanguageTag,
    pub prefix: String,
    pub target_exp: String,
    pub target_ctl: String,
    /// Position of the target among the sentence's word tokens (0-based).
    pub word_index: usize,
    #[serde(default)]
    pub continuation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordCategory {
    Experimental,
    Control,
}

impl WordCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            WordCategory::Experimental => "experimental",
            WordCategory::Control => "control",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "experimental" => Some(WordCategory::Experimental),
            "control" => Some(WordCategory::Control),
            _ => None,
        }
    }
}

impl StimulusItem {
    pub fn target(&self, which: WordCategory) -> &str {
        match which {
            WordCategory::Experimental => &self.target_exp,
            WordCategory::Control => &self.target_ctl,
        }
    }

    /// Full sentence text with the chosen target and the target's byte range.
    pub fn sentence(&self, which: WordCategory) -> (String, usize, usize) {
        let mut text = self.prefix.clone();
        if !text.is_empty() && !text.ends_with(char::is_whitespace) {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(self.target(which));
        let end = text.len();
        if let Some(c) = &self.continuation {
            text.push_str(c);
        }
        (text, start, end)
    }

    /// Word tokens (punctuation excluded) in the sentence.
    pub fn sentence_words(&self) -> usize {
        let (text, _, _) = self.sentence(WordCategory::Experimental);
        word_tokenize(&text).iter().filter(|w| !w.is_punct).count()
    }
}

/// Reads a stimulus TSV with header
/// `item_id, lang, prefix, target_exp, target_ctl, word_index[, continuation]`.
pub fn read_stimuli(path: &Path, names: &LanguageNames) -> Result<Vec<StimulusItem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stimuli(&text, names).map_err(|(line, msg)| Error::Record {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

pub fn parse_stimuli(text: &str, names: &LanguageNames) -> std::result::Result<Vec<StimulusItem>, (usize, String)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or((1, "empty stimulus file".to_string()))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let want = ["item_id", "lang", "prefix", "target_exp", "target_ctl", "word_index"];
    if cols.len() < want.len() || cols[..want.len()] != want {
        return Err((1, format!("expected header columns {}", want.join(", "))));
    }
    let has_cont = cols.get(6) == Some(&"continuation");
    let mut out = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 6 {
            return Err((ln, format!("expected at least 6 fields, found {}", f.len())));
        }
        let lang = names.parse(f[1].trim()).ok_or((ln, format!("unknown language tag {:?}", f[1])))?;
        let word_index = f[5].trim().parse().map_err(|_| (ln, format!("bad word_index {:?}", f[5])))?;
        let continuation = if has_cont { f.get(6).map(|s| s.to_string()).filter(|s| !s.is_empty()) } else { None };
        out.push(StimulusItem {
            item_id: f[0].trim().to_string(),
            lang,
            prefix: f[2].to_string(),
            target_exp: f[3].trim().to_string(),
            target_ctl: f[4].trim().to_string(),
            word_index,
            continuation,
        });
    }
    Ok(out)
}

/// Serializes items in the format read by [`parse_stimuli`].
pub fn write_stimuli(items: &[StimulusItem], names: &LanguageNames) -> String {
    let mut out = String::from("item_id\tlang\tprefix\ttarget_exp\ttarget_ctl\tword_index\tcontinuation\n");
    for it in items {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            it.item_id,
            names.name(it.lang),
            it.prefix,
            it.target_exp,
            it.target_ctl,
            it.word_index,
            it.continuation.as_deref().unwrap_or("")
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRecord {
    pub item_id: String,
    pub lang: LanguageTag,
    pub word_category: WordCategory,
    pub target: String,
    pub token_id: u32,
    pub surprisal_bits: f64,
    pub word_index: usize,
    pub sentence_words: usize,
}

/// Token ids of the context (end-of-text first) and the target's single id.
pub fn encode_item(vocab: &ConditionVocabulary, item: &StimulusItem, which: WordCategory) -> Result<(Vec<u32>, u32)> {
    let (text, start, end) = item.sentence(which);
    let spans = vocab.encode_spans(&text, &[], item.lang);
    let mut prefix = vec![vocab.end_of_text()];
    prefix.extend(spans.iter().filter(|s| s.end <= start).map(|s| s.id));
    let target: Vec<_> = spans.iter().filter(|s| s.start < end && s.end > start).collect();
    match target.as_slice() {
        [t] if t.start == start && t.end == end => Ok((prefix, t.id)),
        _ => Err(Error::Probe(format!(
            "item {}: target {:?} does not encode to a single token ({} pieces)",
            item.item_id,
            item.target(which),
            target.len()
        ))),
    }
}

/// −log2 p(target | prefix) in bits.
pub fn surprisal(ckpt: &ModelCheckpoint, vocab: &ConditionVocabulary, item: &StimulusItem, which: WordCategory) -> Result<SurprisalRecord> {
    let (prefix, target) = encode_item(vocab, item, which)?;
    if prefix.len() > ckpt.config.context_length {
        return Err(Error::Probe(format!(
            "item {}: context of {} tokens exceeds context length {}",
            item.item_id,
            prefix.len(),
            ckpt.config.context_length
        )));
    }
    let lp = ckpt.next_log_probs(&prefix)?;
    let bits = -lp[target as usize] / std::f64::consts::LN_2;
    Ok(SurprisalRecord {
        item_id: item.item_id.clone(),
        lang: item.lang,
        word_category: which,
        target: item.target(which).to_string(),
        token_id: target,
        surprisal_bits: bits.max(0.0),
        word_index: item.word_index,
        sentence_words: item.sentence_words(),
    })
}

/// Both surprisal records of every item; the two members of a pair must
/// share their prefix encoding.
pub fn surprisal_table(ckpt: &ModelCheckpoint, vocab: &ConditionVocabulary, items: &[StimulusItem]) -> Result<Vec<SurprisalRecord>> {
    let per_item: Vec<Result<[SurprisalRecord; 2]>> = items
        .par_iter()
        .map(|item| {
            let (pe, _) = encode_item(vocab, item, WordCategory::Experimental)?;
            let (pc, _) = encode_item(vocab, item, WordCategory::Control)?;
            if pe != pc {
                return Err(Error::Probe(format!(
                    "item {}: prefix encodes differently before the two targets",
                    item.item_id
                )));
            }
            Ok([
                surprisal(ckpt, vocab, item, WordCategory::Experimental)?,
                surprisal(ckpt, vocab, item, WordCategory::Control)?,
            ])
        })
        .collect();
    let mut out = Vec::with_capacity(2 * items.len());
    for r in per_item {
        out.extend(r?);
    }
    Ok(out)
}

/// Run metadata written next to every probe row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeContext {
    pub study: String,
    pub condition: String,
    pub layer: usize,
    pub seed: u64,
}

pub const SURPRISAL_HEADER: &str =
    "study,condition,layer,seed,item_id,lang,word_category,target,token_id,surprisal_bits,word_index,sentence_words";

pub fn surprisal_csv_rows(ctx: &ProbeContext, records: &[SurprisalRecord], out: &mut String) {
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&ctx.study),
            csv_field(&ctx.condition),
            ctx.layer,
            ctx.seed,
            csv_field(&r.item_id),
            r.lang,
            r.word_category.as_str(),
            csv_field(&r.target),
            r.token_id,
            r.surprisal_bits,
            r.word_index,
            r.sentence_words
        );
    }
}

/// Quotes a CSV field when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
