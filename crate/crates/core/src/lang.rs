use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two languages of an experiment. `L1` is the dominant language
/// presented first in each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LanguageTag {
    L1,
    L2,
}

impl LanguageTag {
    pub const BOTH: [LanguageTag; 2] = [LanguageTag::L1, LanguageTag::L2];

    pub fn other(self) -> LanguageTag {
        match self {
            LanguageTag::L1 => LanguageTag::L2,
            LanguageTag::L2 => LanguageTag::L1,
        }
    }

    pub fn index(self) -> usize {
        match self {
            LanguageTag::L1 => 0,
            LanguageTag::L2 => 1,
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LanguageTag::L1 => f.write_str("L1"),
            LanguageTag::L2 => f.write_str("L2"),
        }
    }
}

/// Display names of the two languages, e.g. `nl` / `en`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageNames {
    pub l1: String,
    pub l2: String,
}

impl Default for LanguageNames {
    fn default() -> Self {
        LanguageNames {
            l1: "nl".to_string(),
            l2: "en".to_string(),
        }
    }
}

impl LanguageNames {
    pub fn new(l1: impl Into<String>, l2: impl Into<String>) -> Result<Self> {
        let names = LanguageNames {
            l1: l1.into(),
            l2: l2.into(),
        };
        if names.l1 == names.l2 {
            return Err(Error::Config(format!(
                "language names must differ, got {:?} twice",
                names.l1
            )));
        }
        Ok(names)
    }

    pub fn name(&self, tag: LanguageTag) -> &str {
        match tag {
            LanguageTag::L1 => &self.l1,
            LanguageTag::L2 => &self.l2,
        }
    }

    /// Resolves a display name (or the literal `L1`/`L2`) to a tag.
    pub fn parse(&self, s: &str) -> Option<LanguageTag> {
        if s == self.l1 || s == "L1" {
            Some(LanguageTag::L1)
        } else if s == self.l2 || s == "L2" {
            Some(LanguageTag::L2)
        } else {
            None
        }
    }
}
