//! Overlapping surface forms, their friend / false-friend classification, and
//! the per-condition manifests of which forms share one token identity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_punctuation_str, FrequencyTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Klass {
    Friend,
    FalseFriend,
    Ambiguous,
    Control,
    NamedEntity,
    Punctuation,
    Other,
}

impl Klass {
    pub fn as_str(self) -> &'static str {
        match self {
            Klass::Friend => "friend",
            Klass::FalseFriend => "falsefriend",
            Klass::Ambiguous => "ambiguous",
            Klass::Control => "control",
            Klass::NamedEntity => "namedentity",
            Klass::Punctuation => "punctuation",
            Klass::Other => "other",
        }
    }
}

impl fmt::Display for Klass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four vocabulary-sharing conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "A_full")]
    A,
    #[serde(rename = "B_friends")]
    B,
    #[serde(rename = "C_falsefriends")]
    C,
    #[serde(rename = "D_minimal")]
    D,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::A, Condition::B, Condition::C, Condition::D];

    pub fn label(self) -> &'static str {
        match self {
            Condition::A => "A_full",
            Condition::B => "B_friends",
            Condition::C => "C_falsefriends",
            Condition::D => "D_minimal",
        }
    }

    pub fn letter(self) -> &'static str {
        &self.label()[..1]
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| s.eq_ignore_ascii_case(c.letter()) || s.eq_ignore_ascii_case(c.label()))
            .ok_or_else(|| Error::Config(format!("unknown condition {s:?} (expected A, B, C or D)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub form: String,
    pub klass: Klass,
    /// Annotation provenance (file sources joined with `+`).
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<String>,
}

/// One annotation TSV: `form<TAB>klass[<TAB>pos]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationFile {
    pub source: String,
    pub rows: BTreeMap<String, (Klass, Option<String>)>,
}

impl AnnotationFile {
    pub fn parse(source: impl Into<String>, text: &str) -> Result<Self> {
        let source = source.into();
        let mut rows: BTreeMap<String, (Klass, Option<String>)> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Lexicon(format!("{source}:{}: {msg}", i + 1));
            let mut cols = line.split('\t');
            let form = cols.next().unwrap_or_default().trim();
            let klass = cols.next().map(str::trim).unwrap_or_default();
            let pos = cols.next().map(|p| p.trim().to_string()).filter(|p| !p.is_empty());
            if form.is_empty() {
                return Err(err("empty form".into()));
            }
            if form != form.to_lowercase() {
                return Err(err(format!("form {form:?} is not lowercase")));
            }
            let klass = match klass {
                "friend" => Klass::Friend,
                "falsefriend" => Klass::FalseFriend,
                "control" => Klass::Control,
                other => return Err(err(format!("unknown class {other:?}"))),
            };
            match rows.get(form) {
                Some((k, _)) if *k != klass => {
                    return Err(err(format!(
                        "conflicting rows for {form:?}: {k} and {klass}"
                    )))
                }
                Some(_) => {}
                None => {
                    rows.insert(form.to_string(), (klass, pos));
                }
            }
        }
        Ok(AnnotationFile { source, rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path.display().to_string(), &text)
    }
}

/// Forms attested (count ≥ 1) in both languages.
pub fn find_overlap(freq_l1: &FrequencyTable, freq_l2: &FrequencyTable) -> Result<BTreeSet<String>> {
    if freq_l1.lang == freq_l2.lang {
        return Err(Error::Lexicon(format!(
            "overlap needs tables of two languages, both are {}",
            freq_l1.lang
        )));
    }
    Ok(freq_l1
        .counts
        .iter()
        .filter(|(w, c)| **c > 0 && freq_l2.count(w) > 0)
        .map(|(w, _)| w.clone())
        .collect())
}

/// Assigns one class to every overlapping form and appends annotated controls.
/// A form annotated as both friend and false friend becomes ambiguous.
pub fn classify(overlap: &BTreeSet<String>, annotations: &[AnnotationFile]) -> Vec<LexiconEntry> {
    let mut marks: BTreeMap<&str, (BTreeSet<Klass>, BTreeSet<&str>, Option<&str>)> = BTreeMap::new();
    for file in annotations {
        for (form, (klass, pos)) in &file.rows {
            let e = marks.entry(form.as_str()).or_default();
            e.0.insert(*klass);
            e.1.insert(file.source.as_str());
            if e.2.is_none() {
                e.2 = pos.as_deref();
            }
        }
    }
    let mut out = Vec::new();
    for form in overlap {
        let mark = marks.get(form.as_str());
        let klass = if is_punctuation_str(form) {
            Klass::Punctuation
        } else {
            match mark.map(|m| &m.0) {
                Some(k) if k.contains(&Klass::Friend) && k.contains(&Klass::FalseFriend) => {
                    Klass::Ambiguous
                }
                Some(k) if k.contains(&Klass::Friend) => Klass::Friend,
                Some(k) if k.contains(&Klass::FalseFriend) => Klass::FalseFriend,
                Some(k) if k.contains(&Klass::Control) => Klass::Control,
                _ => Klass::Other,
            }
        };
        out.push(entry(form, klass, mark));
    }
    for (form, mark) in &marks {
        if !overlap.contains(*form) && mark.0.contains(&Klass::Control) {
            out.push(entry(form, Klass::Control, Some(mark)));
        }
    }
    out.sort_by(|a, b| a.form.cmp(&b.form));
    out
}

fn entry(form: &str, klass: Klass, mark: Option<&(BTreeSet<Klass>, BTreeSet<&str>, Option<&str>)>) -> LexiconEntry {
    let source = match mark {
        Some(m) => m.1.iter().copied().collect::<Vec<_>>().join("+"),
        None => "unannotated".to_string(),
    };
    LexiconEntry {
        form: form.to_string(),
        klass,
        source,
        pos: mark.and_then(|m| m.2.map(str::to_string)),
    }
}

/// Punctuation forms attested in any of the tables.
pub fn punctuation_forms<'a>(tables: impl IntoIterator<Item = &'a FrequencyTable>) -> BTreeSet<String> {
    tables
        .into_iter()
        .flat_map(|t| t.counts.keys())
        .filter(|w| is_punctuation_str(w))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionManifest {
    pub condition: Condition,
    pub shared_forms: BTreeSet<String>,
    pub forced_single: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ConditionManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Shared inputs of every condition's manifest.
#[derive(Debug, Clone)]
pub struct ManifestInputs<'a> {
    pub entries: &'a [LexiconEntry],
    pub overlap: &'a BTreeSet<String>,
    pub punct: &'a BTreeSet<String>,
    pub ne_marker_forms: &'a BTreeSet<String>,
    /// When given, forced forms attested in neither table raise a warning.
    pub tables: Option<[&'a FrequencyTable; 2]>,
}

pub fn build_manifest(condition: Condition, inputs: &ManifestInputs<'_>) -> ConditionManifest {
    let of_klass = |k: Klass| {
        inputs
            .entries
            .iter()
            .filter(move |e| e.klass == k)
            .map(|e| e.form.clone())
    };
    let mut shared: BTreeSet<String> = inputs.punct.union(inputs.ne_marker_forms).cloned().collect();
    match condition {
        Condition::A => shared.extend(inputs.overlap.iter().cloned()),
        Condition::B => shared.extend(of_klass(Klass::Friend)),
        Condition::C => shared.extend(of_klass(Klass::FalseFriend)),
        Condition::D => {}
    }
    let forced: BTreeSet<String> = of_klass(Klass::Friend)
        .chain(of_klass(Klass::FalseFriend))
        .chain(of_klass(Klass::Control))
        .collect();
    let mut warnings = Vec::new();
    if let Some([t1, t2]) = inputs.tables {
        for f in &forced {
            if t1.count(f) == 0 && t2.count(f) == 0 {
                warnings.push(format!("forced form {f:?} is absent from both corpora"));
            }
        }
    }
    for w in &warnings {
        log::warn!("{condition}: {w}");
    }
    ConditionManifest {
        condition,
        shared_forms: shared,
        forced_single: forced,
        warnings,
    }
}

/// Checks the set-algebra relations between the four manifests.
pub fn check_manifest_relations(
    a: &ConditionManifest,
    b: &ConditionManifest,
    c: &ConditionManifest,
    d: &ConditionManifest,
    entries: &[LexiconEntry],
) -> Result<()> {
    let fail = |m: &str| Err(Error::Lexicon(format!("manifest relation violated: {m}")));
    if !d.shared_forms.is_subset(&b.shared_forms) || !d.shared_forms.is_subset(&c.shared_forms) {
        return fail("D ⊆ B and D ⊆ C");
    }
    let bc: BTreeSet<_> = b.shared_forms.intersection(&c.shared_forms).cloned().collect();
    if bc != d.shared_forms {
        return fail("B ∩ C = D");
    }
    if !b.shared_forms.is_subset(&a.shared_forms) || !c.shared_forms.is_subset(&a.shared_forms) {
        return fail("A ⊇ B ∪ C");
    }
    for e in entries.iter().filter(|e| e.klass == Klass::Ambiguous) {
        if b.shared_forms.contains(&e.form) || c.shared_forms.contains(&e.form) {
            return fail("ambiguous forms are never shared in B or C");
        }
    }
    Ok(())
}
