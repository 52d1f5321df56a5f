use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::surprisal::{csv_field, ProbeContext};
use crate::corpus::{word_tokenize, DocumentStore};
use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::model::ModelCheckpoint;
use crate::tokenizer::ConditionVocabulary;

const SD_EPS: f64 = 1e-8;

/// A sentence cut from a document, with NE spans rebased to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub ne_spans: Vec<(usize, usize)>,
    pub lang: LanguageTag,
}

/// Splits on newlines and after `.`, `!` or `?` followed by whitespace.
pub fn split_sentences(store: &DocumentStore) -> Vec<Sentence> {
    let mut out = Vec::new();
    for doc in store.iter() {
        let text = &doc.text;
        let mut start = 0;
        let mut prev: Option<char> = None;
        let mut bounds = Vec::new();
        for (i, c) in text.char_indices() {
            if c == '\n' || (c.is_whitespace() && matches!(prev, Some('.' | '!' | '?'))) {
                bounds.push((start, i));
                start = i + c.len_utf8();
            }
            prev = Some(c);
        }
        bounds.push((start, text.len()));
        for (s, e) in bounds {
            let raw = &text[s..e];
            let lead = raw.len() - raw.trim_start().len();
            let (s, e) = (s + lead, s + raw.trim_end().len());
            if s >= e || doc.ne_spans.iter().any(|&(a, b)| a < e && s < b && (a < s || b > e)) {
                continue;
            }
            let ne_spans = doc
                .ne_spans
                .iter()
                .filter(|&&(a, b)| a >= s && b <= e)
                .map(|&(a, b)| (a - s, b - s))
                .collect();
            out.push(Sentence {
                text: text[s..e].to_string(),
                ne_spans,
                lang: doc.lang,
            });
        }
    }
    out
}

/// Byte range of the first standalone occurrence of `word` (case-insensitive).
pub fn find_word(text: &str, word: &str) -> Option<(usize, usize)> {
    word_tokenize(text)
        .into_iter()
        .find(|t| !t.is_punct && t.text.to_lowercase() == word)
        .map(|t| (t.start, t.end))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceSample<'a> {
    pub word: String,
    pub sentences: [Vec<&'a Sentence>; 2],
    /// Matching sentences available per language before sampling.
    pub available: [usize; 2],
}

/// Uniform sample without replacement of up to `n` sentences per language
/// that contain `word` as a word token.
pub fn sample_sentences<'a>(sentences: [&'a [Sentence]; 2], word: &str, n: usize, seed: u64) -> SentenceSample<'a> {
    let mut out: [Vec<&Sentence>; 2] = [Vec::new(), Vec::new()];
    let mut available = [0; 2];
    for lang in LanguageTag::BOTH {
        let hits: Vec<&Sentence> = sentences[lang.index()]
            .iter()
            .filter(|s| find_word(&s.text, word).is_some())
            .collect();
        available[lang.index()] = hits.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((lang.index() as u64) << 32));
        let mut idx = index::sample(&mut rng, hits.len(), n.min(hits.len())).into_vec();
        idx.sort_unstable();
        out[lang.index()] = idx.into_iter().map(|i| hits[i]).collect();
    }
    SentenceSample {
        word: word.to_string(),
        sentences: out,
        available,
    }
}

/// Token ids with a leading end-of-text, truncated to the context length,
/// plus the source byte range of each non-special position.
fn encode_sentence(ckpt: &ModelCheckpoint, vocab: &ConditionVocabulary, s: &Sentence) -> (Vec<u32>, Vec<(usize, usize)>) {
    let spans = vocab.encode_spans(&s.text, &s.ne_spans, s.lang);
    let keep = spans.len().min(ckpt.config.context_length - 1);
    let mut ids = vec![vocab.end_of_text()];
    ids.extend(spans[..keep].iter().map(|t| t.id));
    (ids, spans[..keep].iter().map(|t| (t.start, t.end)).collect())
}

/// Per-dimension z-scoring fitted on hidden states at sampled positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub n_instances: usize,
    /// Dimensions with (near-)zero spread; they standardize to 0.
    pub excluded: Vec<usize>,
}

impl Standardizer {
    pub fn fit(layer: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Probe(format!("standardizer needs at least 2 instances, got {}", rows.len())));
        }
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut sd = vec![0.0; d];
        for r in rows {
            for ((s, x), m) in sd.iter_mut().zip(r).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let mut excluded = Vec::new();
        for (i, s) in sd.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if *s < SD_EPS {
                excluded.push(i);
                *s = 1.0;
            }
        }
        if !excluded.is_empty() {
            log::warn!("layer {layer}: {} zero-variance dimensions excluded", excluded.len());
        }
        Ok(Standardizer {
            layer,
            mean,
            sd,
            n_instances: rows.len(),
            excluded,
        })
    }

    pub fn apply(&self, v: &[f32]) -> Vec<f64> {
        let mut out: Vec<f64> = v
            .iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((&x, m), s)| (x as f64 - m) / s)
            .collect();
        for &i in &self.excluded {
            out[i] = 0.0;
        }
        out
    }
}

/// Fits a standardizer on `n_instances` token positions drawn uniformly
/// without replacement from all sentences of both languages.
pub fn calibrate_standardizer(
    ckpt: &ModelCheckpoint,
    vocab: &ConditionVocabulary,
    sentences: &[&Sentence],
    layer: usize,
    n_instances: usize,
    seed: u64,
) -> Result<Standardizer> {
    Standardizer::fit(layer, &calibration_rows(ckpt, vocab, sentences, layer, n_instances, seed)?)
}

/// The hidden states `calibrate_standardizer` fits on, in sentence order.
pub fn calibration_rows(
    ckpt: &ModelCheckpoint,
    vocab: &ConditionVocabulary,
    sentences: &[&Sentence],
    layer: usize,
    n_instances: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_instances < 2 {
        return Err(Error::Probe(format!("n_instances must be at least 2, got {n_instances}")));
    }
    let encoded: Vec<Vec<u32>> = sentences.par_iter().map(|s| encode_sentence(ckpt, vocab, s).0).collect();
    let counts: Vec<usize> = encoded.iter().map(|e| e.len() - 1).collect();
    let total: usize = counts.iter().sum();
    let take = n_instances.min(total);
    if take < n_instances {
        log::warn!("calibration: only {total} positions available, {n_instances} requested");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, take).into_vec();
    picks.sort_unstable();
    // group sampled global positions by sentence
    let mut wanted: Vec<(usize, Vec<usize>)> = Vec::new();
    let (mut si, mut base) = (0usize, 0usize);
    for p in picks {
        while p >= base + counts[si] {
            base += counts[si];
            si += 1;
        }
        match wanted.last_mut() {
            Some((s, v)) if *s == si => v.push(p - base + 1),
            _ => wanted.push((si, vec![p - base + 1])),
        }
    }
    let rows: Vec<Result<Vec<Vec<f64>>>> = wanted
        .par_iter()
        .map(|(s, pos)| {
            let hs = ckpt.hidden_states(&encoded[*s], layer)?;
            Ok(pos.iter().map(|&p| hs[p].iter().map(|&x| x as f64).collect()).collect())
        })
        .collect();
    let mut all = Vec::with_capacity(take);
    for r in rows {
        all.extend(r?);
    }
    Ok(all)
}

/// Mean-pooled context and word vectors of one language's sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub context: Option<Vec<f64>>,
    pub word: Option<Vec<f64>>,
    pub n_context: usize,
    pub n_word: usize,
    /// Sentences whose target starts the sentence (no context positions).
    pub skipped_initial: usize,
    /// Sentences whose target falls beyond the context window.
    pub skipped_truncated: usize,
    /// Token ids found at the word's positions.
    pub word_ids: BTreeSet<u32>,
}

fn mean_rows(rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = rows.first()?;
    let mut acc = vec![0.0; first.len()];
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
    }
    let n = rows.len() as f64;
    Some(acc.into_iter().map(|a| a / n).collect())
}

/// Per sentence: the mean of standardized states strictly before the word's
/// first token (context) and over the word's tokens (word); then the mean
/// over sentences.
pub fn pool_embeddings(
    ckpt: &ModelCheckpoint,
    vocab: &ConditionVocabulary,
    std: &Standardizer,
    sentences: &[&Sentence],
    word: &str,
) -> Result<Pooled> {
    struct One {
        context: Option<Vec<f64>>,
        word: Option<Vec<f64>>,
        truncated: bool,
        ids: Vec<u32>,
    }
    let per: Vec<Result<One>> = sentences
        .par_iter()
        .map(|s| {
            let (ws, we) = find_word(&s.text, word)
                .ok_or_else(|| Error::Probe(format!("sentence does not contain {word:?}: {:?}", s.text)))?;
            let (ids, ranges) = encode_sentence(ckpt, vocab, s);
            // positions are offset by the leading end-of-text token
            let word_pos: Vec<usize> = (0..ranges.len()).filter(|&i| ranges[i].0 < we && ranges[i].1 > ws).map(|i| i + 1).collect();
            let complete = ranges.last().is_some_and(|r| r.1 >= we);
            if word_pos.is_empty() || !complete {
                return Ok(One { context: None, word: None, truncated: true, ids: vec![] });
            }
            let hs = ckpt.hidden_states(&ids, std.layer)?;
            let z = |p: usize| std.apply(&hs[p]);
            let first = word_pos[0];
            let context = mean_rows(&(1..first).map(z).collect::<Vec<_>>());
            let word_vec = mean_rows(&word_pos.iter().map(|&p| z(p)).collect::<Vec<_>>());
            Ok(One {
                context,
                word: word_vec,
                truncated: false,
                ids: word_pos.iter().map(|&p| ids[p]).collect(),
            })
        })
        .collect();
    let (mut ctx_rows, mut word_rows) = (Vec::new(), Vec::new());
    let mut out = Pooled {
        context: None,
        word: None,
        n_context: 0,
        n_word: 0,
        skipped_initial: 0,
        skipped_truncated: 0,
        word_ids: BTreeSet::new(),
    };
    for r in per {
        let one = r?;
        if one.truncated {
            out.skipped_truncated += 1;
            continue;
        }
        match one.context {
            Some(c) => ctx_rows.push(c),
            None => out.skipped_initial += 1,
        }
        word_rows.extend(one.word);
        out.word_ids.extend(one.ids);
    }
    out.n_context = ctx_rows.len();
    out.n_word = word_rows.len();
    out.context = mean_rows(&ctx_rows);
    out.word = mean_rows(&word_rows);
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Probe(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Probe("cosine of a zero-norm vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Context,
    Word,
}

impl EmbeddingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Context => "context",
            EmbeddingKind::Word => "word",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub word: String,
    pub kind: EmbeddingKind,
    pub cosine: f64,
    pub n_l1: usize,
    pub n_l2: usize,
    /// Whether the word has one token identity across languages.
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedWord {
    pub word: String,
    pub kind: Option<EmbeddingKind>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityResult {
    pub records: Vec<SimilarityRecord>,
    pub skipped: Vec<SkippedWord>,
}

/// Cross-lingual cosine of pooled context and word embeddings for each word.
pub fn cross_lingual_similarity(
    ckpt: &ModelCheckpoint,
    vocab: &ConditionVocabulary,
    std: &Standardizer,
    sentences: [&[Sentence]; 2],
    words: &[String],
    n_per_lang: usize,
    seed: u64,
) -> Result<SimilarityResult> {
    let mut res = SimilarityResult::default();
    for word in words {
        let sample = sample_sentences(sentences, word, n_per_lang, seed);
        if let Some(lang) = LanguageTag::BOTH.into_iter().find(|l| sample.available[l.index()] == 0) {
            res.skipped.push(SkippedWord {
                word: word.clone(),
                kind: None,
                reason: format!("no {lang} sentence contains the word"),
            });
            continue;
        }
        let p1 = pool_embeddings(ckpt, vocab, std, &sample.sentences[0], word)?;
        let p2 = pool_embeddings(ckpt, vocab, std, &sample.sentences[1], word)?;
        let shared = match vocab.forced_id(word, LanguageTag::L1) {
            Some(id) => Some(id) == vocab.forced_id(word, LanguageTag::L2),
            None => p1.word_ids == p2.word_ids,
        };
        if !shared && vocab.forced_id(word, LanguageTag::L1).is_some() && !p1.word_ids.is_disjoint(&p2.word_ids) {
            return Err(Error::Probe(format!(
                "{word}: per-language word shares token ids across languages"
            )));
        }
        for (kind, a, b, n1, n2) in [
            (EmbeddingKind::Context, &p1.context, &p2.context, p1.n_context, p2.n_context),
            (EmbeddingKind::Word, &p1.word, &p2.word, p1.n_word, p2.n_word),
        ] {
            match (a, b) {
                (Some(a), Some(b)) => res.records.push(SimilarityRecord {
                    word: word.clone(),
                    kind,
                    cosine: cosine(a, b)?,
                    n_l1: n1,
                    n_l2: n2,
                    shared,
                }),
                _ => res.skipped.push(SkippedWord {
                    word: word.clone(),
                    kind: Some(kind),
                    reason: "no usable sentence in one language".into(),
                }),
            }
        }
    }
    Ok(res)
}

pub const SIMILARITY_HEADER: &str = "study,condition,layer,seed,word,kind,cosine,n_l1,n_l2,shared";

pub fn similarity_csv_rows(ctx: &ProbeContext, records: &[SimilarityRecord], out: &mut String) {
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_field(&ctx.study),
            csv_field(&ctx.condition),
            ctx.layer,
            ctx.seed,
            csv_field(&r.word),
            r.kind.as_str(),
            r.cosine,
            r.n_l1,
            r.n_l2,
            r.shared
        );
    }
}
