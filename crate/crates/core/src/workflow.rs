//! In-memory composition of the corpus, lexicon and tokenizer stages.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{count_frequencies, DocumentStore, FrequencyTable};
use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::lexicon::{
    build_manifest, check_manifest_relations, classify, find_overlap, punctuation_forms, AnnotationFile, Condition,
    ConditionManifest, LexiconEntry, ManifestInputs,
};
use crate::tokenizer::{train_bpe, train_ne_bpe, ConditionVocabulary, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerSizes {
    pub vocab_size: usize,
    pub min_frequency: u64,
    pub ne_vocab_size: usize,
    pub ne_min_frequency: u64,
}

impl Default for TokenizerSizes {
    fn default() -> Self {
        TokenizerSizes {
            vocab_size: 64_000,
            min_frequency: 2,
            ne_vocab_size: 4_000,
            ne_min_frequency: 2,
        }
    }
}

/// Frequency tables, overlap classification and the four manifests.
#[derive(Debug, Clone)]
pub struct LexiconStage {
    pub tables: [FrequencyTable; 2],
    pub overlap: BTreeSet<String>,
    pub entries: Vec<LexiconEntry>,
    pub punct: BTreeSet<String>,
    pub ne_forms: BTreeSet<String>,
    /// In `Condition::ALL` order.
    pub manifests: Vec<ConditionManifest>,
}

impl LexiconStage {
    pub fn manifest(&self, c: Condition) -> &ConditionManifest {
        &self.manifests[Condition::ALL.iter().position(|x| *x == c).expect("known condition")]
    }

    pub fn forced(&self) -> &BTreeSet<String> {
        &self.manifests[0].forced_single
    }
}

fn check_store(store: &DocumentStore, lang: LanguageTag) -> Result<()> {
    match store.single_language()? {
        Some(l) if l != lang => Err(Error::Corpus(format!("expected an {lang} store, found {l} documents"))),
        _ => Ok(()),
    }
}

/// NE surface forms of both stores plus any extra marker forms.
pub fn ne_forms(stores: [&DocumentStore; 2], extra: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = extra.clone();
    for s in stores {
        for d in s.iter() {
            out.extend(d.ne_texts().map(str::to_string));
        }
    }
    out
}

pub fn lexicon_stage(stores: [&DocumentStore; 2], annotations: &[AnnotationFile], extra_ne: &BTreeSet<String>) -> Result<LexiconStage> {
    check_store(stores[0], LanguageTag::L1)?;
    check_store(stores[1], LanguageTag::L2)?;
    let mut t1 = count_frequencies(stores[0])?;
    t1.lang = LanguageTag::L1;
    let mut t2 = count_frequencies(stores[1])?;
    t2.lang = LanguageTag::L2;
    let overlap = find_overlap(&t1, &t2)?;
    let entries = classify(&overlap, annotations);
    let punct = punctuation_forms([&t1, &t2]);
    let ne = ne_forms(stores, extra_ne);
    let inputs = ManifestInputs {
        entries: &entries,
        overlap: &overlap,
        punct: &punct,
        ne_marker_forms: &ne,
        tables: Some([&t1, &t2]),
    };
    let manifests: Vec<ConditionManifest> = Condition::ALL.iter().map(|c| build_manifest(*c, &inputs)).collect();
    check_manifest_relations(&manifests[0], &manifests[1], &manifests[2], &manifests[3], &entries)?;
    Ok(LexiconStage {
        tables: [t1, t2],
        overlap,
        entries,
        punct,
        ne_forms: ne,
        manifests,
    })
}

/// Trains the shared main and NE BPE models once and derives every
/// condition's vocabulary from them, in `Condition::ALL` order.
pub fn tokenizer_stage(stores: [&DocumentStore; 2], lex: &LexiconStage, sizes: &TokenizerSizes) -> Result<Vec<ConditionVocabulary>> {
    build_vocabularies(stores, &lex.manifests, &lex.entries, sizes)
}

/// Vocabularies for the given manifests, which must agree on the forced set.
pub fn build_vocabularies(
    stores: [&DocumentStore; 2],
    manifests: &[ConditionManifest],
    entries: &[LexiconEntry],
    sizes: &TokenizerSizes,
) -> Result<Vec<ConditionVocabulary>> {
    let forced = match manifests.first() {
        Some(m) => &m.forced_single,
        None => return Ok(Vec::new()),
    };
    if manifests.iter().any(|m| &m.forced_single != forced) {
        return Err(Error::Lexicon("manifests disagree on the forced single-token set".into()));
    }
    let bpe = train_bpe(&stores, sizes.vocab_size, sizes.min_frequency, forced)?;
    let ne_texts: Vec<&str> = stores.iter().flat_map(|s| s.iter().flat_map(|d| d.ne_texts())).collect();
    let ne_bpe = train_ne_bpe(ne_texts, sizes.ne_vocab_size, sizes.ne_min_frequency)?;
    manifests
        .iter()
        .map(|m| ConditionVocabulary::build(&bpe, &ne_bpe, m, entries))
        .collect()
}

/// Encodes every document and joins them into one stream, each document
/// followed by end-of-text.
pub fn pack_stream(vocab: &ConditionVocabulary, store: &DocumentStore) -> Vec<u32> {
    let eot = vocab.end_of_text();
    let seqs: Vec<TokenSequence> = {
        use rayon::prelude::*;
        store.docs.par_iter().map(|d| vocab.encode(d)).collect()
    };
    let mut out = Vec::with_capacity(seqs.iter().map(|s| s.ids.len() + 1).sum());
    for s in seqs {
        out.extend(s.ids);
        out.push(eot);
    }
    out
}
