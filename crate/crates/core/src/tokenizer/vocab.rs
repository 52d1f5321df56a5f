use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::bpe::{BpeModel, Symbol};
use super::pretok::{segment_text, PieceKind};
use crate::corpus::{is_punctuation_str, word_tokenize, Document};
use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::lexicon::{Condition, ConditionManifest, Klass, LexiconEntry};

pub const END_OF_TEXT: &str = "<|endoftext|>";
pub const FORMAT_VERSION: u32 = 1;

/// Token namespaces. Forced word tokens live in `Main`, merged with any BPE
/// symbol of the same byte string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Special,
    Main,
    Ne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identity {
    Shared(u32),
    PerLanguage { l1: u32, l2: u32 },
}

impl Identity {
    pub fn id(self, lang: LanguageTag) -> u32 {
        match self {
            Identity::Shared(id) => id,
            Identity::PerLanguage { l1, l2 } => match lang {
                LanguageTag::L1 => l1,
                LanguageTag::L2 => l2,
            },
        }
    }

    pub fn is_shared(self) -> bool {
        matches!(self, Identity::Shared(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub ns: Namespace,
    pub token: Symbol,
    pub identity: Identity,
    /// Lexicon class for forced word tokens.
    pub klass: Option<Klass>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub lang: LanguageTag,
}

/// A token id with the byte range of the source text it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

/// Condition-specific token inventory with shared or per-language ids.
#[derive(Debug, Clone)]
pub struct ConditionVocabulary {
    pub condition: Condition,
    entries: Vec<VocabEntry>,
    lookup: HashMap<(Namespace, Symbol), usize>,
    by_id: Vec<(usize, Option<LanguageTag>)>,
    forced: BTreeSet<String>,
    bpe: BpeModel,
    ne_bpe: BpeModel,
}

fn check_forced_form(form: &str) -> Result<()> {
    let toks = word_tokenize(form);
    if toks.len() != 1 || toks[0].is_punct || toks[0].text != form {
        return Err(Error::Tokenizer(format!(
            "forced form {form:?} is not a single word token"
        )));
    }
    Ok(())
}

impl ConditionVocabulary {
    /// Assembles the inventory (main symbols ∪ NE symbols ∪ forced words)
    /// and assigns identities. Ids are dense: the shared block first, then
    /// the L1 block, then the L2 block, each sorted by (namespace, bytes).
    pub fn build(
        bpe: &BpeModel,
        ne_bpe: &BpeModel,
        manifest: &ConditionManifest,
        lexicon: &[LexiconEntry],
    ) -> Result<Self> {
        let klass_of: HashMap<&str, Klass> = lexicon.iter().map(|e| (e.form.as_str(), e.klass)).collect();
        for form in &manifest.forced_single {
            check_forced_form(form)?;
        }
        let mut items: BTreeMap<(Namespace, Symbol), (bool, Option<Klass>)> = BTreeMap::new();
        items.insert((Namespace::Special, END_OF_TEXT.as_bytes().to_vec()), (true, None));
        for s in bpe.symbols() {
            let shared = match std::str::from_utf8(s) {
                Ok(text) => manifest.shared_forms.contains(text) || is_punctuation_str(text),
                Err(_) => false,
            } || manifest.condition == Condition::A;
            items.insert((Namespace::Main, s.clone()), (shared, None));
        }
        for form in &manifest.forced_single {
            let shared = manifest.shared_forms.contains(form);
            let klass = klass_of.get(form.as_str()).copied().or(Some(Klass::Control));
            items.insert((Namespace::Main, form.as_bytes().to_vec()), (shared, klass));
        }
        for s in ne_bpe.symbols() {
            items.insert((Namespace::Ne, s.clone()), (true, None));
        }
        Ok(Self::assign(manifest.condition, items, manifest.forced_single.clone(), bpe.clone(), ne_bpe.clone()))
    }

    fn assign(
        condition: Condition,
        items: BTreeMap<(Namespace, Symbol), (bool, Option<Klass>)>,
        forced: BTreeSet<String>,
        bpe: BpeModel,
        ne_bpe: BpeModel,
    ) -> Self {
        let n_shared = items.values().filter(|v| v.0).count() as u32;
        let n_per = items.len() as u32 - n_shared;
        let (mut next_shared, mut next_per) = (0u32, 0u32);
        let mut entries = Vec::with_capacity(items.len());
        let mut by_id = vec![(0usize, None); (n_shared + 2 * n_per) as usize];
        let mut lookup = HashMap::with_capacity(items.len());
        for ((ns, token), (shared, klass)) in items {
            let idx = entries.len();
            let identity = if shared {
                let id = next_shared;
                next_shared += 1;
                by_id[id as usize] = (idx, None);
                Identity::Shared(id)
            } else {
                let l1 = n_shared + next_per;
                let l2 = n_shared + n_per + next_per;
                next_per += 1;
                by_id[l1 as usize] = (idx, Some(LanguageTag::L1));
                by_id[l2 as usize] = (idx, Some(LanguageTag::L2));
                Identity::PerLanguage { l1, l2 }
            };
            lookup.insert((ns, token.clone()), idx);
            entries.push(VocabEntry {
                ns,
                token,
                identity,
                klass,
            });
        }
        ConditionVocabulary {
            condition,
            entries,
            lookup,
            by_id,
            forced,
            bpe,
            ne_bpe,
        }
    }

    /// Number of distinct ids (embedding rows).
    pub fn size(&self) -> usize {
        self.by_id.len()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn forced(&self) -> &BTreeSet<String> {
        &self.forced
    }

    pub fn bpe(&self) -> &BpeModel {
        &self.bpe
    }

    pub fn ne_bpe(&self) -> &BpeModel {
        &self.ne_bpe
    }

    pub fn entry(&self, ns: Namespace, token: &[u8]) -> Option<&VocabEntry> {
        self.lookup.get(&(ns, token.to_vec())).map(|&i| &self.entries[i])
    }

    pub fn entry_for_id(&self, id: u32) -> Option<(&VocabEntry, Option<LanguageTag>)> {
        self.by_id.get(id as usize).map(|&(i, l)| (&self.entries[i], l))
    }

    pub fn end_of_text(&self) -> u32 {
        self.entry(Namespace::Special, END_OF_TEXT.as_bytes())
            .expect("vocabulary always holds the end-of-text token")
            .identity
            .id(LanguageTag::L1)
    }

    /// Id of a forced word form in the given language.
    pub fn forced_id(&self, form: &str, lang: LanguageTag) -> Option<u32> {
        if !self.forced.contains(form) {
            return None;
        }
        self.entry(Namespace::Main, form.as_bytes()).map(|e| e.identity.id(lang))
    }

    fn id_of(&self, ns: Namespace, token: &[u8], lang: LanguageTag) -> u32 {
        self.entry(ns, token)
            .unwrap_or_else(|| panic!("symbol {token:?} missing from {ns:?} namespace"))
            .identity
            .id(lang)
    }

    /// Encodes `text` with the given NE spans and records source byte ranges.
    pub fn encode_spans(&self, text: &str, ne_spans: &[(usize, usize)], lang: LanguageTag) -> Vec<TokenSpan> {
        let mut out = Vec::new();
        for p in segment_text(text, ne_spans, &self.forced) {
            let bytes = &text.as_bytes()[p.start..p.end];
            match p.kind {
                PieceKind::Forced => out.push(TokenSpan {
                    id: self.id_of(Namespace::Main, bytes, lang),
                    start: p.start,
                    end: p.end,
                }),
                PieceKind::Main | PieceKind::Ne => {
                    let (model, ns) = if p.kind == PieceKind::Main {
                        (&self.bpe, Namespace::Main)
                    } else {
                        (&self.ne_bpe, Namespace::Ne)
                    };
                    let mut cursor = p.start;
                    for sym in model.encode_chunk(bytes) {
                        let s = model.symbol(sym);
                        out.push(TokenSpan {
                            id: self.id_of(ns, s, lang),
                            start: cursor,
                            end: cursor + s.len(),
                        });
                        cursor += s.len();
                    }
                }
            }
        }
        out
    }

    pub fn encode(&self, doc: &Document) -> TokenSequence {
        TokenSequence {
            ids: self.encode_spans(&doc.text, &doc.ne_spans, doc.lang).into_iter().map(|t| t.id).collect(),
            lang: doc.lang,
        }
    }

    pub fn encode_text(&self, text: &str, lang: LanguageTag) -> TokenSequence {
        TokenSequence {
            ids: self.encode_spans(text, &[], lang).into_iter().map(|t| t.id).collect(),
            lang,
        }
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let (e, _) = self
                .entry_for_id(id)
                .ok_or_else(|| Error::Tokenizer(format!("unknown token id {id}")))?;
            out.extend_from_slice(&e.token);
        }
        Ok(out)
    }

    pub fn decode(&self, seq: &TokenSequence) -> Result<String> {
        self.decode_ids(&seq.ids)
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?)
            .map_err(|_| Error::Tokenizer("decoded bytes are not valid UTF-8".into()))
    }

    pub fn report(&self) -> VocabReport {
        let mut r = VocabReport {
            condition: self.condition,
            size: self.size(),
            ..Default::default()
        };
        for e in &self.entries {
            let counts = match e.ns {
                Namespace::Special => &mut r.special,
                Namespace::Main => &mut r.main,
                Namespace::Ne => &mut r.ne,
            };
            counts.add(e.identity);
            if let Some(k) = e.klass {
                r.by_klass.entry(k.as_str().to_string()).or_default().add(e.identity);
            }
            let punct = e.ns == Namespace::Main
                && std::str::from_utf8(&e.token).is_ok_and(is_punctuation_str);
            if punct {
                r.punctuation.add(e.identity);
            }
            r.total.add(e.identity);
        }
        r
    }

    // ---- model file ----

    pub fn to_json(&self) -> String {
        let sym = |s: &[u8]| Value::String(latin1(s));
        let merges = |m: &BpeModel| Value::Array(m.merges().iter().map(|(l, r)| json!([sym(l), sym(r)])).collect());
        let entries: Vec<Value> = self
            .entries
            .iter()
            .map(|e| {
                let (identity, ids) = match e.identity {
                    Identity::Shared(id) => ("shared", json!({ "shared": id })),
                    Identity::PerLanguage { l1, l2 } => ("per_language", json!({ "L1": l1, "L2": l2 })),
                };
                let mut v = json!({ "token": sym(&e.token), "ns": e.ns, "identity": identity, "ids": ids });
                if let Some(k) = e.klass {
                    v["klass"] = json!(k);
                }
                v
            })
            .collect();
        let v = json!({
            "format_version": FORMAT_VERSION,
            "condition": self.condition,
            "budget_includes_byte_alphabet": true,
            "token_encoding": "latin1",
            "vocab_size": self.bpe.vocab_size_target,
            "min_frequency": self.bpe.min_frequency,
            "ne_vocab_size": self.ne_bpe.vocab_size_target,
            "ne_min_frequency": self.ne_bpe.min_frequency,
            "merges": merges(&self.bpe),
            "ne_merges": merges(&self.ne_bpe),
            "entries": entries,
            "forced": self.forced,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("json values always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::Tokenizer(format!(
                "unsupported tokenizer format version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        let pairs = |m: Vec<(String, String)>| m.into_iter().map(|(l, r)| Ok((unlatin1(&l)?, unlatin1(&r)?))).collect::<Result<Vec<_>>>();
        let bpe = BpeModel::from_merges(pairs(file.merges)?, file.vocab_size, file.min_frequency)?;
        let ne_bpe = BpeModel::from_merges(pairs(file.ne_merges)?, file.ne_vocab_size, file.ne_min_frequency)?;
        let mut items = BTreeMap::new();
        let mut stated: Vec<(Namespace, Symbol, Identity)> = Vec::new();
        for e in file.entries {
            let token = unlatin1(&e.token)?;
            let identity = match (e.identity.as_str(), e.ids.get("shared"), e.ids.get("L1"), e.ids.get("L2")) {
                ("shared", Some(&id), None, None) => Identity::Shared(id),
                ("per_language", None, Some(&l1), Some(&l2)) => Identity::PerLanguage { l1, l2 },
                _ => return Err(Error::Tokenizer(format!("malformed entry for token {:?}", e.token))),
            };
            if items.insert((e.ns, token.clone()), (identity.is_shared(), e.klass)).is_some() {
                return Err(Error::Tokenizer(format!("duplicate entry for token {:?}", e.token)));
            }
            stated.push((e.ns, token, identity));
        }
        let vocab = Self::assign(file.condition, items, file.forced, bpe, ne_bpe);
        for (ns, token, identity) in stated {
            if vocab.entry(ns, &token).map(|e| e.identity) != Some(identity) {
                return Err(Error::Tokenizer("entry ids are not in canonical dense order".into()));
            }
        }
        for s in vocab.bpe.symbols() {
            if vocab.entry(Namespace::Main, s).is_none() {
                return Err(Error::Tokenizer("main BPE symbol missing from entries".into()));
            }
        }
        for s in vocab.ne_bpe.symbols() {
            if vocab.entry(Namespace::Ne, s).is_none() {
                return Err(Error::Tokenizer("NE BPE symbol missing from entries".into()));
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Deserialize)]
struct ModelFile {
    format_version: u32,
    condition: Condition,
    vocab_size: usize,
    min_frequency: u64,
    ne_vocab_size: usize,
    ne_min_frequency: u64,
    merges: Vec<(String, String)>,
    ne_merges: Vec<(String, String)>,
    entries: Vec<EntryFile>,
    forced: BTreeSet<String>,
}

#[derive(Deserialize)]
struct EntryFile {
    token: String,
    ns: Namespace,
    identity: String,
    ids: BTreeMap<String, u32>,
    #[serde(default)]
    klass: Option<Klass>,
}

fn latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| b as char).collect()
}

fn unlatin1(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| u8::try_from(c as u32).map_err(|_| Error::Tokenizer(format!("token char {c:?} outside latin1"))))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityCounts {
    pub shared: usize,
    pub per_language: usize,
}

impl IdentityCounts {
    fn add(&mut self, identity: Identity) {
        if identity.is_shared() {
            self.shared += 1;
        } else {
            self.per_language += 1;
        }
    }

    /// Embedding rows taken by these entries.
    pub fn rows(&self) -> usize {
        self.shared + 2 * self.per_language
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabReport {
    pub condition: Condition,
    pub size: usize,
    pub total: IdentityCounts,
    pub special: IdentityCounts,
    pub main: IdentityCounts,
    pub ne: IdentityCounts,
    pub punctuation: IdentityCounts,
    pub by_klass: BTreeMap<String, IdentityCounts>,
}

impl Default for VocabReport {
    fn default() -> Self {
        VocabReport {
            condition: Condition::A,
            size: 0,
            total: Default::default(),
            special: Default::default(),
            main: Default::default(),
            ne: Default::default(),
            punctuation: Default::default(),
            by_klass: Default::default(),
        }
    }
}
