use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probes::WordCategory;

/// Predictors available to the regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factor {
    WordCategory,
    WordIndex,
    Vocabulary,
    FreqS,
    FreqO,
}

impl Factor {
    pub fn name(self) -> &'static str {
        match self {
            Factor::WordCategory => "WordCategory",
            Factor::WordIndex => "WordIndex",
            Factor::Vocabulary => "Vocabulary",
            Factor::FreqS => "FreqS",
            Factor::FreqO => "FreqO",
        }
    }
}

impl FromStr for Factor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "WordCategory" => Factor::WordCategory,
            "WordIndex" => Factor::WordIndex,
            "Vocabulary" => Factor::Vocabulary,
            "FreqS" => Factor::FreqS,
            "FreqO" => Factor::FreqO,
            other => return Err(Error::Stats(format!("unknown term {other:?}"))),
        })
    }
}

/// A main effect or a two-way interaction (`A:B`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Main(Factor),
    Interaction(Factor, Factor),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(a) => f.write_str(a.name()),
            Term::Interaction(a, b) => write!(f, "{}:{}", a.name(), b.name()),
        }
    }
}

impl FromStr for Term {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None => Ok(Term::Main(s.parse()?)),
            Some((a, b)) => {
                let (a, b): (Factor, Factor) = (a.parse()?, b.parse()?);
                if a == b {
                    return Err(Error::Stats(format!("interaction of {} with itself", a.name())));
                }
                Ok(Term::Interaction(a.min(b), a.max(b)))
            }
        }
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordIndexMode {
    #[default]
    Raw,
    /// Position divided by the sentence's word count.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub terms: Vec<Term>,
    #[serde(default)]
    pub word_index: WordIndexMode,
}

impl RegressionSpec {
    pub fn new(terms: &[&str]) -> Result<Self> {
        Ok(RegressionSpec {
            terms: terms.iter().map(|t| t.parse()).collect::<Result<_>>()?,
            word_index: WordIndexMode::Raw,
        })
    }

    pub fn formula(&self) -> String {
        let mut s = String::from("surprisal ~ 1");
        for t in &self.terms {
            s.push_str(" + ");
            s.push_str(&t.to_string());
        }
        s.push_str(" + (1|Item)");
        s
    }
}

/// One surprisal measurement with its predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub item: String,
    pub y: f64,
    pub word_category: WordCategory,
    pub word_index: usize,
    pub sentence_words: usize,
    pub vocabulary: String,
    pub freq_s: Option<f64>,
    pub freq_o: Option<f64>,
}

/// Fixed-effect design with the grouping of rows into items.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub y: Vec<f64>,
    pub groups: Vec<usize>,
    pub group_names: Vec<String>,
}

impl Design {
    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }

    /// Design without all-zero columns, their names, and the dropped names.
    pub fn fit_matrix(&self) -> (DMatrix<f64>, Vec<String>, Vec<String>) {
        let keep: Vec<usize> = (0..self.x.ncols()).filter(|&j| self.x.column(j).iter().any(|&v| v != 0.0)).collect();
        let dropped: Vec<String> = (0..self.x.ncols())
            .filter(|j| !keep.contains(j))
            .map(|j| self.names[j].clone())
            .collect();
        for d in &dropped {
            log::warn!("design column {d} is all zero and was dropped (rank deficient)");
        }
        (self.x.select_columns(&keep), keep.iter().map(|&j| self.names[j].clone()).collect(), dropped)
    }

    pub fn data_key(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (y, g) in self.y.iter().zip(&self.groups) {
            y.to_bits().hash(&mut h);
            self.group_names[*g].hash(&mut h);
        }
        h.finish()
    }

    /// Appends a named column (used to probe rank handling).
    pub fn with_column(&self, name: &str, values: &[f64]) -> Design {
        let mut x = self.x.clone().insert_column(self.x.ncols(), 0.0);
        for (i, v) in values.iter().enumerate() {
            x[(i, self.x.ncols())] = *v;
        }
        let mut names = self.names.clone();
        names.push(name.into());
        Design { x, names, ..self.clone() }
    }
}

fn columns_of(f: Factor, obs: &[Observation], mode: WordIndexMode, levels: &[String]) -> Result<Vec<(String, Vec<f64>)>> {
    let col = |name: &str, get: &dyn Fn(&Observation) -> Result<f64>| -> Result<Vec<(String, Vec<f64>)>> {
        Ok(vec![(name.to_string(), obs.iter().map(get).collect::<Result<_>>()?)])
    };
    match f {
        Factor::WordCategory => col("WordCategory", &|o| {
            Ok(match o.word_category {
                WordCategory::Experimental => 1.0,
                WordCategory::Control => -1.0,
            })
        }),
        Factor::WordIndex => col("WordIndex", &|o| {
            Ok(match mode {
                WordIndexMode::Raw => o.word_index as f64,
                WordIndexMode::Normalized => {
                    if o.sentence_words == 0 {
                        return Err(Error::Stats(format!("item {}: sentence word count is zero", o.item)));
                    }
                    o.word_index as f64 / o.sentence_words as f64
                }
            })
        }),
        Factor::FreqS => col("FreqS", &|o| o.freq_s.ok_or_else(|| missing("FreqS", o))),
        Factor::FreqO => col("FreqO", &|o| o.freq_o.ok_or_else(|| missing("FreqO", o))),
        Factor::Vocabulary => {
            let k = levels.len();
            Ok((0..k.saturating_sub(1))
                .map(|j| {
                    let vals = obs
                        .iter()
                        .map(|o| {
                            if o.vocabulary == levels[j] {
                                1.0
                            } else if o.vocabulary == levels[k - 1] {
                                -1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    (format!("Vocabulary[{}]", levels[j]), vals)
                })
                .collect())
        }
    }
}

fn missing(col: &str, o: &Observation) -> Error {
    Error::Stats(format!("missing column {col} for item {}", o.item))
}

/// Intercept plus coded columns for each term, rows grouped by item.
pub fn build_design(obs: &[Observation], spec: &RegressionSpec) -> Result<Design> {
    if obs.is_empty() {
        return Err(Error::Stats("no observations".into()));
    }
    let mut seen = BTreeSet::new();
    for t in &spec.terms {
        if !seen.insert(*t) {
            return Err(Error::Stats(format!("duplicate term {t}")));
        }
    }
    let levels: Vec<String> = obs.iter().map(|o| o.vocabulary.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut cols: Vec<(String, Vec<f64>)> = vec![("(Intercept)".into(), vec![1.0; obs.len()])];
    for t in &spec.terms {
        match *t {
            Term::Main(f) => cols.extend(columns_of(f, obs, spec.word_index, &levels)?),
            Term::Interaction(a, b) => {
                for (na, va) in columns_of(a, obs, spec.word_index, &levels)? {
                    for (nb, vb) in columns_of(b, obs, spec.word_index, &levels)? {
                        let v = va.iter().zip(&vb).map(|(x, y)| x * y).collect();
                        cols.push((format!("{na}:{nb}"), v));
                    }
                }
            }
        }
    }
    for (name, v) in &cols[1..] {
        let first = v[0];
        if first != 0.0 && v.iter().all(|&x| x == first) {
            return Err(Error::Stats(format!("column {name} is constant (rank deficient with the intercept)")));
        }
    }
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut group_names = Vec::new();
    let groups = obs
        .iter()
        .map(|o| {
            *index.entry(o.item.as_str()).or_insert_with(|| {
                group_names.push(o.item.clone());
                group_names.len() - 1
            })
        })
        .collect();
    let x = DMatrix::from_fn(obs.len(), cols.len(), |i, j| cols[j].1[i]);
    Ok(Design {
        x,
        names: cols.into_iter().map(|c| c.0).collect(),
        y: obs.iter().map(|o| o.y).collect(),
        groups,
        group_names,
    })
}
