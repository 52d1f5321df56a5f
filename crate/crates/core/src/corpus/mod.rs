//! Language-tagged corpora: ingestion, word pre-tokenization and
//! per-language frequency tables.

mod freq;
mod words;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use freq::{count_frequencies, log_normalize, FrequencyTable, NormalizedFrequency};
pub use words::{is_punctuation, is_punctuation_str, word_tokenize, WordToken};

use crate::error::{Error, Result};
use crate::lang::{LanguageNames, LanguageTag};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub lang: LanguageTag,
    /// Half-open byte ranges, sorted and non-overlapping.
    pub ne_spans: Vec<(usize, usize)>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        lang: LanguageTag,
        ne_spans: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let doc = Document {
            id: id.into(),
            text: text.into(),
            lang,
            ne_spans,
        };
        doc.validate_spans().map_err(Error::Corpus)?;
        Ok(doc)
    }

    fn validate_spans(&self) -> std::result::Result<(), String> {
        let mut prev_end = 0usize;
        for (i, &(s, e)) in self.ne_spans.iter().enumerate() {
            if e < s {
                return Err(format!("span end before start: ({s}, {e})"));
            }
            if e > self.text.len() {
                return Err(format!(
                    "span ({s}, {e}) out of bounds for text of {} bytes",
                    self.text.len()
                ));
            }
            if !self.text.is_char_boundary(s) || !self.text.is_char_boundary(e) {
                return Err(format!("span ({s}, {e}) splits a character"));
            }
            if i > 0 && s < prev_end {
                return Err(format!("span ({s}, {e}) overlaps or is out of order"));
            }
            prev_end = e;
        }
        Ok(())
    }

    /// True if the byte range `[start, end)` intersects any NE span.
    pub fn overlaps_ne(&self, start: usize, end: usize) -> bool {
        self.ne_spans.iter().any(|&(s, e)| s < end && start < e)
    }

    pub fn ne_texts(&self) -> impl Iterator<Item = &str> {
        self.ne_spans.iter().map(move |&(s, e)| &self.text[s..e])
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    text: String,
    lang: String,
    #[serde(default)]
    ne_spans: Vec<(usize, usize)>,
}

/// Ordered collection of documents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentStore {
    pub docs: Vec<Document>,
}

impl DocumentStore {
    pub fn from_docs(docs: Vec<Document>) -> Self {
        DocumentStore { docs }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    /// The shared language of all documents, `None` for an empty store.
    pub fn single_language(&self) -> Result<Option<LanguageTag>> {
        let mut it = self.docs.iter();
        let Some(first) = it.next() else {
            return Ok(None);
        };
        if let Some(d) = it.find(|d| d.lang != first.lang) {
            return Err(Error::Corpus(format!(
                "mixed-language store: document {:?} is {} but {:?} is {}",
                first.id, first.lang, d.id, d.lang
            )));
        }
        Ok(Some(first.lang))
    }

    pub fn write_jsonl(&self, w: &mut impl Write, names: &LanguageNames) -> Result<()> {
        for d in &self.docs {
            let rec = Record {
                id: d.id.clone(),
                text: d.text.clone(),
                lang: names.name(d.lang).to_string(),
                ne_spans: d.ne_spans.clone(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("<jsonl writer>", e))?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a DocumentStore {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

/// Reads a JSON Lines corpus. Every record must carry a language name that
/// resolves to `lang`. Blank lines are skipped.
pub fn ingest(path: &Path, lang: LanguageTag, names: &LanguageNames) -> Result<DocumentStore> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| at(format!("malformed record: {e}")))?;
        let tag = names
            .parse(&rec.lang)
            .ok_or_else(|| at(format!("unknown language tag {:?}", rec.lang)))?;
        if tag != lang {
            return Err(at(format!(
                "record language {:?} does not match expected {}",
                rec.lang,
                names.name(lang)
            )));
        }
        let doc = Document {
            id: rec.id,
            text: rec.text,
            lang: tag,
            ne_spans: rec.ne_spans,
        };
        doc.validate_spans().map_err(at)?;
        docs.push(doc);
    }
    Ok(DocumentStore { docs })
}
