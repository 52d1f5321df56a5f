//! Config-driven stages. Every run writes into `{output}/{config hash}/`, and
//! every file it writes records the config hash and the build version so that
//! later stages and the report can refuse mixed outputs.

mod config;
mod report;
mod stages;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

pub use config::{ConditionSelector, ExperimentConfig, ModelSettings, Paths, ProbeSettings, StatsSettings};
pub use report::cmd_report;
pub use stages::{cmd_lexicon, cmd_probe, cmd_stats, cmd_tokenize, cmd_train, StudyFit, STUDIES};

use crate::corpus::{ingest, DocumentStore};
use crate::error::{Error, Result};
use crate::lang::{LanguageNames, LanguageTag};
use crate::lexicon::Condition;
use crate::model::TrainConfig;
use crate::synthetic::{generate, SyntheticConfig};
use crate::workflow::TokenizerSizes;

/// Package version plus the commit the binary was built from.
pub const VERSION: &str = env!("BILEX_VERSION");

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub condition: Option<ConditionSelector>,
    pub out: Option<PathBuf>,
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    pub conditions: Vec<Condition>,
    pub hash: String,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(mut config: ExperimentConfig, opts: &RunOptions) -> Result<Self> {
        if let Some(seed) = opts.seed_override {
            config.override_seed(seed);
        }
        if let Some(out) = &opts.out {
            config.paths.output = out.clone();
        }
        if let Some(c) = opts.condition {
            config.condition = c;
        }
        config.validate()?;
        let hash = config_hash(&config)?;
        let dir = config.paths.output.join(&hash);
        Ok(Run {
            conditions: config.condition.conditions(),
            config,
            hash,
            dir,
        })
    }

    pub fn load(config_path: &Path, opts: &RunOptions) -> Result<Self> {
        Run::new(ExperimentConfig::load(config_path)?, opts)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// `# bilex <version> config <hash>`, the first line of every text output.
    pub fn stamp(&self) -> String {
        format!("# bilex {VERSION} config {}", self.hash)
    }

    fn provenance(&self) -> Value {
        serde_json::json!({ "config_hash": self.hash, "version": VERSION })
    }

    fn write_text(&self, rel: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        let mut text = self.stamp();
        text.push('\n');
        text.push_str(body);
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }

    fn write_json(&self, rel: &str, mut v: Value) -> Result<PathBuf> {
        let path = self.path(rel);
        match &mut v {
            Value::Object(m) => {
                m.insert("provenance".into(), self.provenance());
            }
            _ => return Err(Error::Config("stage JSON outputs must be objects".into())),
        }
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Reads a text output of `stage`, checking its stamp; returns the body
    /// without the stamp line.
    fn read_text(&self, stage: &str, rel: &str) -> Result<String> {
        let path = self.path(rel);
        let text = read_stage_file(stage, &path)?;
        let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
        let found = first
            .strip_prefix("# bilex ")
            .and_then(|r| r.split(" config ").nth(1))
            .unwrap_or("<none>")
            .trim()
            .to_string();
        if found != self.hash {
            return Err(Error::StaleStage { path, found, expected: self.hash.clone() });
        }
        Ok(body.to_string())
    }

    fn read_json(&self, stage: &str, rel: &str) -> Result<Value> {
        let path = self.path(rel);
        let text = read_stage_file(stage, &path)?;
        let v: Value = serde_json::from_str(&text)?;
        let found = v["provenance"]["config_hash"].as_str().unwrap_or("<none>").to_string();
        if found != self.hash {
            return Err(Error::StaleStage { path, found, expected: self.hash.clone() });
        }
        Ok(v)
    }

    pub(crate) fn corpora(&self) -> Result<[DocumentStore; 2]> {
        let p = &self.config.paths;
        let names = &self.config.languages;
        Ok([ingest(&p.l1_corpus, LanguageTag::L1, names)?, ingest(&p.l2_corpus, LanguageTag::L2, names)?])
    }

    pub(crate) fn test_corpora(&self) -> Result<Option<[DocumentStore; 2]>> {
        let p = &self.config.paths;
        match (&p.l1_test, &p.l2_test) {
            (Some(a), Some(b)) => {
                let names = &self.config.languages;
                Ok(Some([ingest(a, LanguageTag::L1, names)?, ingest(b, LanguageTag::L2, names)?]))
            }
            (None, None) => Ok(None),
            _ => Err(Error::Config("paths.l1_test and paths.l2_test must be given together".into())),
        }
    }

    pub(crate) fn extra_ne_forms(&self) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for p in &self.config.paths.ne_lists {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            out.extend(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from));
        }
        Ok(out)
    }
}

/// Writes a synthetic data set and a matching config (`bilex.toml`) into
/// `dir`; returns the config path.
pub fn write_demo(dir: &Path, synthetic: &SyntheticConfig) -> Result<PathBuf> {
    let corpus = generate(synthetic)?;
    let names = LanguageNames::default();
    corpus.write_to(dir, &names)?;
    let config = ExperimentConfig {
        condition: ConditionSelector::All,
        languages: names,
        paths: Paths {
            l1_corpus: "l1.jsonl".into(),
            l2_corpus: "l2.jsonl".into(),
            l1_test: None,
            l2_test: None,
            annotations: vec!["annotations.tsv".into()],
            ne_lists: Vec::new(),
            friends_stimuli: Some("stimuli_friends.tsv".into()),
            falsefriends_stimuli: Some("stimuli_falsefriends.tsv".into()),
            output: "runs".into(),
        },
        tokenizer: TokenizerSizes { vocab_size: 700, min_frequency: 2, ne_vocab_size: 300, ne_min_frequency: 1 },
        model: ModelSettings {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            context_length: 32,
            dropout: 0.0,
            seed: synthetic.seed,
            tied_embeddings: true,
        },
        train: TrainConfig {
            lr: 1e-3,
            warmup_steps: 20,
            effective_batch_tokens: 32 * 32,
            epochs: 4,
            seed: synthetic.seed,
            log_every: 50,
            ..Default::default()
        },
        probe: ProbeSettings { layers: Vec::new(), n_sentences: 100, n_calibration: 3000, seeds: vec![synthetic.seed] },
        stats: StatsSettings::default(),
    };
    let path = dir.join("bilex.toml");
    write_file(&path, config.to_toml()?.as_bytes())?;
    Ok(path)
}

fn read_stage_file(stage: &str, path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingStage {
            stage: stage.to_string(),
            path: path.to_path_buf(),
        });
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of every setting that affects outputs plus the contents of every
/// input file. The condition selector and the output location are excluded.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let mut v = serde_json::to_value(config)?;
    if let Value::Object(m) = &mut v {
        m.remove("condition");
        m.remove("paths");
    }
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&v)?);
    for (role, path) in config.paths.inputs() {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        h.update(role.as_bytes());
        h.update(sha256_hex(&bytes).as_bytes());
    }
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}
