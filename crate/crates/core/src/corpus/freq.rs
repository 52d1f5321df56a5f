use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{words::word_tokenize, Document, DocumentStore};
use crate::error::{Error, Result};
use crate::lang::LanguageTag;

/// Lowercased word-token counts for one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub lang: LanguageTag,
    pub counts: BTreeMap<String, u64>,
    pub total_tokens: u64,
}

impl FrequencyTable {
    pub fn empty(lang: LanguageTag) -> Self {
        FrequencyTable {
            lang,
            counts: BTreeMap::new(),
            total_tokens: 0,
        }
    }

    pub fn count(&self, form: &str) -> u64 {
        self.counts.get(form).copied().unwrap_or(0)
    }

    pub fn merge(mut self, other: FrequencyTable) -> FrequencyTable {
        debug_assert_eq!(self.lang, other.lang);
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self.total_tokens += other.total_tokens;
        self
    }

    fn add_document(&mut self, doc: &Document) {
        for tok in word_tokenize(&doc.text) {
            if doc.overlaps_ne(tok.start, tok.end) {
                continue;
            }
            *self.counts.entry(tok.text.to_lowercase()).or_insert(0) += 1;
            self.total_tokens += 1;
        }
    }

    /// Rows sorted by descending count, then lexicographically.
    pub fn sorted_rows(&self) -> Vec<(&str, u64)> {
        let mut rows: Vec<(&str, u64)> =
            self.counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        rows
    }

    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (form, count) in self.sorted_rows() {
            writeln!(w, "{form}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_tsv(path: &Path, lang: LanguageTag) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table = FrequencyTable::empty(lang);
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                msg: msg.to_string(),
            };
            let (form, count) = line.split_once('\t').ok_or_else(|| bad("expected form<TAB>count"))?;
            let count: u64 = count.trim().parse().map_err(|_| bad("count is not an integer"))?;
            *table.counts.entry(form.to_string()).or_insert(0) += count;
            table.total_tokens += count;
        }
        Ok(table)
    }
}

/// Counts every word token outside named-entity spans, keyed by its
/// lowercase form.
pub fn count_frequencies(store: &DocumentStore) -> Result<FrequencyTable> {
    let lang = match store.single_language() {
        Ok(Some(lang)) => lang,
        Ok(None) => return Ok(FrequencyTable::empty(LanguageTag::L1)),
        Err(e) => return Err(e),
    };
    let table = store
        .docs
        .par_iter()
        .fold(
            || FrequencyTable::empty(lang),
            |mut t, doc| {
                t.add_document(doc);
                t
            },
        )
        .reduce(|| FrequencyTable::empty(lang), FrequencyTable::merge);
    Ok(table)
}

/// z-scores of `log1p(count)` over a fixed support of forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedFrequency {
    pub lang: LanguageTag,
    pub values: BTreeMap<String, f64>,
    pub mean_log: f64,
    pub sd_log: f64,
}

impl NormalizedFrequency {
    pub fn get(&self, form: &str) -> Option<f64> {
        self.values.get(form).copied()
    }
}

pub fn log_normalize(table: &FrequencyTable, support: &BTreeSet<String>) -> Result<NormalizedFrequency> {
    if support.is_empty() {
        return Err(Error::Corpus("normalization support is empty".into()));
    }
    let logs: Vec<(&String, f64)> = support
        .iter()
        .map(|w| (w, (table.count(w) as f64).ln_1p()))
        .collect();
    let n = logs.len() as f64;
    let mean_log = logs.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = logs.iter().map(|(_, v)| (v - mean_log).powi(2)).sum::<f64>() / n;
    let sd_log = var.sqrt();
    if !(sd_log > 0.0) {
        return Err(Error::Corpus(
            "zero variance: all counts are identical over the support".into(),
        ));
    }
    let values = logs
        .into_iter()
        .map(|(w, v)| (w.clone(), (v - mean_log) / sd_log))
        .collect();
    Ok(NormalizedFrequency {
        lang: table.lang,
        values,
        mean_log,
        sd_log,
    })
}
