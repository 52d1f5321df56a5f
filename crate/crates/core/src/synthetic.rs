//! Seeded generator for small bilingual corpora with a controlled overlap
//! lexicon, used by the desk-scale experiments and as a pipeline fixture.
//!
//! Both languages share one sentence grammar (`det [adj] noun verb det
//! [adj] noun .`) but draw every word from disjoint pseudo-word
//! inventories, except for the designated overlap forms:
//!
//! * friends are nouns in both languages; in L2 each friend has the same
//!   sampling weight as its paired control, and its L1 weight is varied
//!   log-uniformly across friends;
//! * false friends are verbs in L1 and nouns in L2, again weight-matched to
//!   an L2 control.
//!
//! Stimuli are L2 frames whose object noun is the experimental or the
//! control word.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DocumentStore};
use crate::error::{Error, Result};
use crate::lang::{LanguageNames, LanguageTag};
use crate::lexicon::{AnnotationFile, Klass};
use crate::probes::{write_stimuli, StimulusItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Sentences (one per document) per language.
    pub sentences: [usize; 2],
    pub friends: usize,
    pub false_friends: usize,
    pub determiners: usize,
    pub adjectives: usize,
    pub verbs: usize,
    /// Language-unique nouns per language besides the controls.
    pub filler_nouns: usize,
    /// Range of the L2 weight of each experimental/control pair, relative
    /// to a filler noun's weight of 1.
    pub pair_weight: (f64, f64),
    /// Range of the L1 weight of friends (log-uniform, evenly spaced).
    pub friend_l1_weight: (f64, f64),
    /// L1 verb-slot weight of each false friend.
    pub false_friend_l1_weight: f64,
    /// Stimulus frames per experimental/control pair.
    pub frames: usize,
    /// Share of sentences that start with a named entity.
    pub ne_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            sentences: [6000, 2000],
            friends: 16,
            false_friends: 8,
            determiners: 3,
            adjectives: 8,
            verbs: 10,
            filler_nouns: 20,
            pair_weight: (1.0, 3.0),
            friend_l1_weight: (0.1, 10.0),
            false_friend_l1_weight: 1.0,
            frames: 2,
            ne_rate: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic: {m}")));
        if self.sentences.iter().any(|&n| n == 0) {
            return bad("both languages need at least one sentence".into());
        }
        if self.friends + self.false_friends == 0 {
            return bad("no overlap words requested".into());
        }
        if self.determiners == 0 || self.adjectives == 0 || self.verbs == 0 || self.filler_nouns == 0 {
            return bad("every word class needs at least one member".into());
        }
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        for (name, (lo, hi)) in [("pair_weight", self.pair_weight), ("friend_l1_weight", self.friend_l1_weight)] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return bad(format!("{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
            }
        }
        if !(self.false_friend_l1_weight > 0.0) {
            return bad("false_friend_l1_weight must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ne_rate) {
            return bad(format!("ne_rate must lie in [0, 1), got {}", self.ne_rate));
        }
        Ok(())
    }
}

/// An experimental word with its matched control and sampling weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordPair {
    pub experimental: String,
    pub control: String,
    pub l2_weight: f64,
    pub l1_weight: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub stores: [DocumentStore; 2],
    pub annotations: AnnotationFile,
    pub friend_pairs: Vec<WordPair>,
    pub false_friend_pairs: Vec<WordPair>,
    /// Friend study, then false-friend study.
    pub stimuli: [Vec<StimulusItem>; 2],
}

impl SyntheticCorpus {
    pub fn friends(&self) -> impl Iterator<Item = &str> {
        self.friend_pairs.iter().map(|p| p.experimental.as_str())
    }

    /// Writes `l1.jsonl`, `l2.jsonl`, `annotations.tsv`,
    /// `stimuli_friends.tsv` and `stimuli_falsefriends.tsv`.
    pub fn write_to(&self, dir: &Path, names: &LanguageNames) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (lang, file) in [(LanguageTag::L1, "l1.jsonl"), (LanguageTag::L2, "l2.jsonl")] {
            let mut buf = Vec::new();
            self.stores[lang.index()].write_jsonl(&mut buf, names)?;
            write(&dir.join(file), &buf)?;
        }
        let mut ann = String::from("# form\tclass\tpos\n");
        for (form, (klass, pos)) in &self.annotations.rows {
            ann.push_str(&format!("{form}\t{klass}\t{}\n", pos.as_deref().unwrap_or("")));
        }
        write(&dir.join("annotations.tsv"), ann.as_bytes())?;
        write(&dir.join("stimuli_friends.tsv"), write_stimuli(&self.stimuli[0], names).as_bytes())?;
        write(&dir.join("stimuli_falsefriends.tsv"), write_stimuli(&self.stimuli[1], names).as_bytes())?;
        Ok(())
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 4] = ["", "n", "s", "k"];

struct Namer {
    used: BTreeSet<String>,
}

impl Namer {
    fn word(&mut self, rng: &mut ChaCha8Rng, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(rng).expect("nonempty"));
                w.push_str(VOWELS.choose(rng).expect("nonempty"));
            }
            w.push_str(CODAS.choose(rng).expect("nonempty"));
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, rng: &mut ChaCha8Rng, n: usize, syllables: usize) -> Vec<String> {
        (0..n).map(|_| self.word(rng, syllables)).collect()
    }
}

/// Weighted word list with a sampler.
struct Slot {
    words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Slot {
    fn new(entries: Vec<(String, f64)>) -> Self {
        let dist = WeightedIndex::new(entries.iter().map(|e| e.1)).expect("positive weights");
        Slot { words: entries.into_iter().map(|e| e.0).collect(), dist }
    }

    fn uniform(words: &[String]) -> Self {
        Slot::new(words.iter().map(|w| (w.clone(), 1.0)).collect())
    }

    fn draw<'a>(&'a self, rng: &mut ChaCha8Rng) -> &'a str {
        &self.words[self.dist.sample(rng)]
    }
}

struct Grammar {
    det: Slot,
    adj: Slot,
    noun: Slot,
    verb: Slot,
}

fn log_spaced((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![(lo * hi).sqrt(); n];
    }
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

const NAMES: [&str; 8] = ["Anna", "Pieter", "Marie", "Jan", "Sofie", "Lucas", "Emma", "Daan"];

fn sentence(g: &Grammar, rng: &mut ChaCha8Rng, ne_rate: f64) -> (String, Vec<(usize, usize)>) {
    let mut words: Vec<&str> = Vec::with_capacity(8);
    let mut spans = Vec::new();
    let mut text = String::new();
    if rng.gen::<f64>() < ne_rate {
        let name = NAMES.choose(rng).expect("nonempty");
        spans.push((0, name.len()));
        text.push_str(name);
    } else {
        words.push(g.det.draw(rng));
        if rng.gen_bool(0.5) {
            words.push(g.adj.draw(rng));
        }
        words.push(g.noun.draw(rng));
    }
    words.push(g.verb.draw(rng));
    words.push(g.det.draw(rng));
    if rng.gen_bool(0.5) {
        words.push(g.adj.draw(rng));
    }
    words.push(g.noun.draw(rng));
    for w in words {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(w);
    }
    text.push_str(" .");
    (text, spans)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut namer = Namer { used: BTreeSet::new() };
    let n_pairs = cfg.friends + cfg.false_friends;

    let friends = namer.words(&mut rng, cfg.friends, 2);
    let false_friends = namer.words(&mut rng, cfg.false_friends, 2);
    let controls = namer.words(&mut rng, n_pairs, 2);

    let mut pair_w = log_spaced(cfg.pair_weight, n_pairs);
    pair_w.shuffle(&mut rng);
    let mut l1_w = log_spaced(cfg.friend_l1_weight, cfg.friends);
    l1_w.shuffle(&mut rng);

    let friend_pairs: Vec<WordPair> = (0..cfg.friends)
        .map(|i| WordPair {
            experimental: friends[i].clone(),
            control: controls[i].clone(),
            l2_weight: pair_w[i],
            l1_weight: l1_w[i],
        })
        .collect();
    let false_friend_pairs: Vec<WordPair> = (0..cfg.false_friends)
        .map(|i| WordPair {
            experimental: false_friends[i].clone(),
            control: controls[cfg.friends + i].clone(),
            l2_weight: pair_w[cfg.friends + i],
            l1_weight: cfg.false_friend_l1_weight,
        })
        .collect();

    let grammars: Vec<Grammar> = LanguageTag::BOTH
        .iter()
        .map(|&lang| {
            let det = namer.words(&mut rng, cfg.determiners, 1);
            let adj = namer.words(&mut rng, cfg.adjectives, 2);
            let verbs = namer.words(&mut rng, cfg.verbs, 3);
            let fillers = namer.words(&mut rng, cfg.filler_nouns, 2);
            let mut nouns: Vec<(String, f64)> = fillers.into_iter().map(|w| (w, 1.0)).collect();
            let mut verb_slot: Vec<(String, f64)> = verbs.into_iter().map(|w| (w, 1.0)).collect();
            match lang {
                LanguageTag::L1 => {
                    nouns.extend(friend_pairs.iter().map(|p| (p.experimental.clone(), p.l1_weight)));
                    verb_slot.extend(false_friend_pairs.iter().map(|p| (p.experimental.clone(), p.l1_weight)));
                }
                LanguageTag::L2 => {
                    for p in friend_pairs.iter().chain(&false_friend_pairs) {
                        nouns.push((p.experimental.clone(), p.l2_weight));
                        nouns.push((p.control.clone(), p.l2_weight));
                    }
                }
            }
            Grammar {
                det: Slot::uniform(&det),
                adj: Slot::uniform(&adj),
                noun: Slot::new(nouns),
                verb: Slot::new(verb_slot),
            }
        })
        .collect();

    let mut stores = [DocumentStore::default(), DocumentStore::default()];
    for lang in LanguageTag::BOTH {
        let g = &grammars[lang.index()];
        let mut docs = Vec::with_capacity(cfg.sentences[lang.index()]);
        for i in 0..cfg.sentences[lang.index()] {
            let (text, spans) = sentence(g, &mut rng, cfg.ne_rate);
            docs.push(Document::new(format!("{}-{i:06}", lang.to_string().to_lowercase()), text, lang, spans)?);
        }
        stores[lang.index()] = DocumentStore::from_docs(docs);
    }

    let mut rows = BTreeMap::new();
    for p in &friend_pairs {
        rows.insert(p.experimental.clone(), (Klass::Friend, Some("noun".to_string())));
        rows.insert(p.control.clone(), (Klass::Control, Some("noun".to_string())));
    }
    for p in &false_friend_pairs {
        rows.insert(p.experimental.clone(), (Klass::FalseFriend, Some("noun".to_string())));
        rows.insert(p.control.clone(), (Klass::Control, Some("noun".to_string())));
    }
    let annotations = AnnotationFile { source: "synthetic".into(), rows };

    let l2 = &grammars[LanguageTag::L2.index()];
    let mut frames = |pairs: &[WordPair], tag: &str| -> Vec<StimulusItem> {
        let mut out = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            for f in 0..cfg.frames {
                let mut words = vec![l2.det.draw(&mut rng)];
                let subject_adj = rng.gen_bool(0.5);
                if subject_adj {
                    words.push(l2.adj.draw(&mut rng));
                }
                words.push(l2.noun.draw(&mut rng));
                words.push(l2.verb.draw(&mut rng));
                words.push(l2.det.draw(&mut rng));
                if !subject_adj && rng.gen_bool(0.5) {
                    words.push(l2.adj.draw(&mut rng));
                }
                let word_index = words.len();
                let prefix = words.join(" ");
                out.push(StimulusItem {
                    item_id: format!("{tag}{:02}-{f}", i + 1),
                    lang: LanguageTag::L2,
                    prefix,
                    target_exp: p.experimental.clone(),
                    target_ctl: p.control.clone(),
                    word_index,
                    continuation: Some(" .".into()),
                });
            }
        }
        out
    };
    let stimuli = [frames(&friend_pairs, "f"), frames(&false_friend_pairs, "ff")];

    Ok(SyntheticCorpus {
        stores,
        annotations,
        friend_pairs,
        false_friend_pairs,
        stimuli,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::count_frequencies;
    use crate::lexicon::find_overlap;

    fn small() -> SyntheticConfig {
        SyntheticConfig { sentences: [3000, 1500], ..Default::default() }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.stores, b.stores);
        assert_eq!(a.stimuli, b.stimuli);
        let c = generate(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.stores, c.stores);
    }

    #[test]
    fn overlap_is_exactly_the_designated_words() {
        let s = generate(&small()).unwrap();
        let mut t1 = count_frequencies(&s.stores[0]).unwrap();
        t1.lang = LanguageTag::L1;
        let mut t2 = count_frequencies(&s.stores[1]).unwrap();
        t2.lang = LanguageTag::L2;
        let overlap: BTreeSet<String> = find_overlap(&t1, &t2).unwrap().into_iter().filter(|w| w != ".").collect();
        let want: BTreeSet<String> = s
            .friend_pairs
            .iter()
            .chain(&s.false_friend_pairs)
            .map(|p| p.experimental.clone())
            .collect();
        assert_eq!(overlap, want);
        for p in s.friend_pairs.iter().chain(&s.false_friend_pairs) {
            assert_eq!(t1.count(&p.control), 0);
            assert!(t2.count(&p.control) > 0);
        }
    }

    #[test]
    fn controls_track_their_friends_in_l2() {
        let cfg = SyntheticConfig { sentences: [500, 20000], ..Default::default() };
        let s = generate(&cfg).unwrap();
        let t2 = count_frequencies(&s.stores[1]).unwrap();
        for p in &s.friend_pairs {
            let (a, b) = (t2.count(&p.experimental) as f64, t2.count(&p.control) as f64);
            assert!((a - b).abs() < 5.0 * (a + b).sqrt(), "{p:?}: {a} vs {b}");
        }
    }

    #[test]
    fn l1_exposure_spans_the_range() {
        let s = generate(&small()).unwrap();
        let w: Vec<f64> = s.friend_pairs.iter().map(|p| p.l1_weight).collect();
        let max = w.iter().cloned().fold(f64::MIN, f64::max);
        let min = w.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 10.0).abs() < 1e-9 && (min - 0.1).abs() < 1e-9);
    }

    #[test]
    fn stimuli_share_prefixes_and_end_with_targets() {
        let s = generate(&small()).unwrap();
        assert_eq!(s.stimuli[0].len(), 16 * 2);
        assert_eq!(s.stimuli[1].len(), 8 * 2);
        for it in s.stimuli.iter().flatten() {
            assert_eq!(it.sentence_words(), it.word_index + 1);
            assert!((4..=5).contains(&it.word_index));
            assert_eq!(it.prefix.split(' ').count(), it.word_index);
        }
    }

    #[test]
    fn ne_spans_cover_names() {
        let s = generate(&small()).unwrap();
        let names: Vec<&str> = s.stores[0].iter().flat_map(|d| d.ne_texts()).collect();
        assert!(!names.is_empty());
        assert!(names.iter().all(|n| NAMES.contains(n)));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate(&SyntheticConfig { sentences: [0, 10], ..Default::default() }).is_err());
        assert!(generate(&SyntheticConfig { pair_weight: (0.0, 1.0), ..Default::default() }).is_err());
        assert!(generate(&SyntheticConfig { friends: 0, false_friends: 0, ..Default::default() }).is_err());
    }
}
