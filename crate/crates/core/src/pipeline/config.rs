use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::LanguageNames;
use crate::lexicon::Condition;
use crate::model::{ModelConfig, TrainConfig};
use crate::stats::WordIndexMode;
use crate::workflow::TokenizerSizes;

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub l1_corpus: PathBuf,
    pub l2_corpus: PathBuf,
    #[serde(default)]
    pub l1_test: Option<PathBuf>,
    #[serde(default)]
    pub l2_test: Option<PathBuf>,
    #[serde(default)]
    pub annotations: Vec<PathBuf>,
    /// Extra NE surface forms, one per line.
    #[serde(default)]
    pub ne_lists: Vec<PathBuf>,
    #[serde(default)]
    pub friends_stimuli: Option<PathBuf>,
    #[serde(default)]
    pub falsefriends_stimuli: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl Paths {
    pub fn inputs(&self) -> Vec<(&'static str, &PathBuf)> {
        let mut v = vec![("l1_corpus", &self.l1_corpus), ("l2_corpus", &self.l2_corpus)];
        v.extend(self.l1_test.iter().map(|p| ("l1_test", p)));
        v.extend(self.l2_test.iter().map(|p| ("l2_test", p)));
        v.extend(self.annotations.iter().map(|p| ("annotations", p)));
        v.extend(self.ne_lists.iter().map(|p| ("ne_lists", p)));
        v.extend(self.friends_stimuli.iter().map(|p| ("friends_stimuli", p)));
        v.extend(self.falsefriends_stimuli.iter().map(|p| ("falsefriends_stimuli", p)));
        v
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.l1_corpus);
        fix(&mut self.l2_corpus);
        self.l1_test.iter_mut().for_each(fix);
        self.l2_test.iter_mut().for_each(fix);
        self.annotations.iter_mut().for_each(fix);
        self.ne_lists.iter_mut().for_each(fix);
        self.friends_stimuli.iter_mut().for_each(fix);
        self.falsefriends_stimuli.iter_mut().for_each(fix);
        fix(&mut self.output);
    }
}

/// Transformer settings; the vocabulary size comes from each condition's
/// tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_length: usize,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
    #[serde(default = "yes")]
    pub tied_embeddings: bool,
}

fn yes() -> bool {
    true
}

impl ModelSettings {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            context_length: self.context_length,
            vocab_size,
            dropout: self.dropout,
            seed: self.seed,
            tied_embeddings: self.tied_embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    /// Hidden-state layers for the similarity probe; empty means the last.
    #[serde(default)]
    pub layers: Vec<usize>,
    #[serde(default = "default_n_sentences")]
    pub n_sentences: usize,
    #[serde(default = "default_n_calibration")]
    pub n_calibration: usize,
    pub seeds: Vec<u64>,
}

fn default_n_sentences() -> usize {
    500
}

fn default_n_calibration() -> usize {
    30_000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSettings {
    #[serde(default)]
    pub word_index: WordIndexMode,
}

/// `"all"` or one condition letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConditionSelector {
    #[default]
    All,
    One(Condition),
}

impl ConditionSelector {
    pub fn conditions(self) -> Vec<Condition> {
        match self {
            ConditionSelector::All => Condition::ALL.to_vec(),
            ConditionSelector::One(c) => vec![c],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            Ok(ConditionSelector::All)
        } else {
            Ok(ConditionSelector::One(s.parse()?))
        }
    }
}

impl Serialize for ConditionSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ConditionSelector::All => s.serialize_str("all"),
            ConditionSelector::One(c) => s.serialize_str(c.letter()),
        }
    }
}

impl<'de> Deserialize<'de> for ConditionSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ConditionSelector::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub condition: ConditionSelector,
    #[serde(default)]
    pub languages: LanguageNames,
    pub paths: Paths,
    #[serde(default)]
    pub tokenizer: TokenizerSizes,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub probe: ProbeSettings,
    #[serde(default)]
    pub stats: StatsSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets every seed (model init, data order, probe sampling).
    pub fn override_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.probe.seeds = vec![seed];
    }

    pub fn probe_layers(&self) -> Vec<usize> {
        if self.probe.layers.is_empty() {
            vec![self.model.n_layers]
        } else {
            self.probe.layers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in self.paths.inputs() {
            if !p.is_file() {
                return bad(format!("paths.{name}: {} does not exist", p.display()));
            }
        }
        LanguageNames::new(self.languages.l1.clone(), self.languages.l2.clone())?;
        if self.tokenizer.vocab_size <= 256 || self.tokenizer.ne_vocab_size <= 256 {
            return bad("tokenizer vocab sizes must exceed the 256-byte alphabet".into());
        }
        self.model.with_vocab(self.tokenizer.vocab_size).validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.probe.seeds.is_empty() {
            return bad("probe.seeds must list at least one seed".into());
        }
        if self.probe.n_sentences == 0 || self.probe.n_calibration < 2 {
            return bad("probe.n_sentences must be positive and probe.n_calibration at least 2".into());
        }
        if let Some(&l) = self.probe.layers.iter().find(|&&l| l > self.model.n_layers) {
            return bad(format!("probe layer {l} exceeds n_layers {}", self.model.n_layers));
        }
        Ok(())
    }
}
