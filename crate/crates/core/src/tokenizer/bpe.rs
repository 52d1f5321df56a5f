use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use super::pretok::chunks;
use crate::corpus::DocumentStore;
use crate::error::{Error, Result};

pub type Symbol = Vec<u8>;

/// Ordered byte-level merge rules over a 256-byte base alphabet.
#[derive(Debug, Clone)]
pub struct BpeModel {
    merges: Vec<(Symbol, Symbol)>,
    pub vocab_size_target: usize,
    pub min_frequency: u64,
    symbols: Vec<Symbol>,
    symbol_ids: HashMap<Symbol, u32>,
    /// (left, right) -> (rank, merged symbol id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl PartialEq for BpeModel {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges
            && self.vocab_size_target == other.vocab_size_target
            && self.min_frequency == other.min_frequency
    }
}

impl BpeModel {
    /// Rebuilds a model from its merge list. Every merge must combine symbols
    /// that are constructible from earlier merges.
    pub fn from_merges(merges: Vec<(Symbol, Symbol)>, vocab_size_target: usize, min_frequency: u64) -> Result<Self> {
        let mut symbols: Vec<Symbol> = (0..=255u8).map(|b| vec![b]).collect();
        let mut symbol_ids: HashMap<Symbol, u32> =
            symbols.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        let mut ranks = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            let (Some(&li), Some(&ri)) = (symbol_ids.get(l), symbol_ids.get(r)) else {
                return Err(Error::Tokenizer(format!(
                    "merge {rank} refers to a symbol not constructible before it"
                )));
            };
            let merged: Symbol = l.iter().chain(r).copied().collect();
            let id = *symbol_ids.entry(merged.clone()).or_insert_with(|| {
                symbols.push(merged);
                (symbols.len() - 1) as u32
            });
            ranks.entry((li, ri)).or_insert((rank, id));
        }
        Ok(BpeModel {
            merges,
            vocab_size_target,
            min_frequency,
            symbols,
            symbol_ids,
            ranks,
        })
    }

    pub fn merges(&self) -> &[(Symbol, Symbol)] {
        &self.merges
    }

    /// Distinct symbols: the byte alphabet plus every merge product.
    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn symbol(&self, id: u32) -> &[u8] {
        &self.symbols[id as usize]
    }

    pub fn symbol_id(&self, s: &[u8]) -> Option<u32> {
        self.symbol_ids.get(s).copied()
    }

    /// Applies merges to one chunk, lowest rank first.
    pub fn encode_chunk(&self, chunk: &[u8]) -> Vec<u32> {
        let mut syms: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min_by_key(|x| x.0);
            let Some((_, pair, merged)) = best else {
                break;
            };
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            syms = next;
        }
        syms
    }
}

/// Trains byte-level BPE on pre-tokenized chunk counts. The budget
/// `vocab_size` counts the 256 byte symbols.
pub fn train_from_chunks(chunk_counts: HashMap<Symbol, u64>, vocab_size: usize, min_freq: u64) -> Result<BpeModel> {
    if vocab_size <= 256 {
        return Err(Error::Tokenizer(format!(
            "vocab_size must exceed byte alphabet (256), got {vocab_size}"
        )));
    }
    if min_freq == 0 {
        return Err(Error::Tokenizer("min_freq must be at least 1".into()));
    }
    let mut symbols: Vec<Symbol> = (0..=255u8).map(|b| vec![b]).collect();
    let mut symbol_ids: HashMap<Symbol, u32> =
        symbols.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    // Deterministic word order (HashMap iteration order is not).
    let mut words: Vec<(Vec<u32>, u64)> = chunk_counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| b as u32).collect(), c))
        .collect();
    words.sort();
    let mut merges = Vec::new();

    while symbols.len() < vocab_size {
        let counts = words
            .par_iter()
            .fold(HashMap::<(u32, u32), u64>::new, |mut m, (w, c)| {
                for p in w.windows(2) {
                    *m.entry((p[0], p[1])).or_insert(0) += c;
                }
                m
            })
            .reduce(HashMap::new, |mut a, b| {
                for (k, v) in b {
                    *a.entry(k).or_insert(0) += v;
                }
                a
            });
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                // lexicographically smaller pair wins ties
                let ka = (&symbols[pa.0 as usize], &symbols[pa.1 as usize]);
                let kb = (&symbols[pb.0 as usize], &symbols[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), count)) = best else { break };
        if count < min_freq {
            break;
        }
        let merged: Symbol = symbols[l as usize].iter().chain(&symbols[r as usize]).copied().collect();
        let id = *symbol_ids.entry(merged.clone()).or_insert_with(|| {
            symbols.push(merged);
            (symbols.len() - 1) as u32
        });
        merges.push((symbols[l as usize].clone(), symbols[r as usize].clone()));
        for (w, _) in words.iter_mut() {
            if w.len() < 2 {
                continue;
            }
            let mut i = 0;
            let mut out = Vec::with_capacity(w.len());
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    out.push(id);
                    i += 2;
                } else {
                    out.push(w[i]);
                    i += 1;
                }
            }
            *w = out;
        }
    }
    BpeModel::from_merges(merges, vocab_size, min_freq)
}

/// Trains the main model on both languages. Standalone words in `exclude`
/// are whole tokens and contribute no pair statistics; text inside
/// named-entity spans is left to the NE model.
pub fn train_bpe(stores: &[&DocumentStore], vocab_size: usize, min_freq: u64, exclude: &BTreeSet<String>) -> Result<BpeModel> {
    let mut counts: HashMap<Symbol, u64> = HashMap::new();
    for store in stores {
        for doc in store.iter() {
            let mut cursor = 0;
            let mut regions: Vec<(usize, usize)> = Vec::new();
            for &(s, e) in &doc.ne_spans {
                regions.push((cursor, s));
                cursor = e;
            }
            regions.push((cursor, doc.text.len()));
            for (s, e) in regions {
                for c in chunks(&doc.text[s..e], exclude) {
                    *counts.entry(c.to_vec()).or_insert(0) += 1;
                }
            }
        }
    }
    train_from_chunks(counts, vocab_size, min_freq)
}

/// Trains the named-entity model on extracted span texts only.
pub fn train_ne_bpe<'a>(ne_texts: impl IntoIterator<Item = &'a str>, vocab_size: usize, min_freq: u64) -> Result<BpeModel> {
    let none = BTreeSet::new();
    let mut counts: HashMap<Symbol, u64> = HashMap::new();
    for t in ne_texts {
        for c in chunks(t, &none) {
            *counts.entry(c.to_vec()).or_insert(0) += 1;
        }
    }
    train_from_chunks(counts, vocab_size, min_freq)
}
