use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }
}

/// Position of a schema feature inside an [`Instance`](super::Instance):
/// continuous features and categorical features live in separate vectors,
/// each in schema order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Continuous(usize),
    Categorical(usize),
}

/// Declared layout of a tabular data set: the ordered feature list
/// (the index set `Q = {0, .., q-1}` used by every coalition), the response
/// column holding claim counts and an optional exposure column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposure: Option<String>,
}

impl FeatureSchema {
    pub fn new(
        features: Vec<FeatureSpec>,
        response: impl Into<String>,
        exposure: Option<String>,
    ) -> Result<Self> {
        let schema = Self {
            features,
            response: response.into(),
            exposure,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("at least one feature is required".into()));
        }
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            if let FeatureKind::Categorical { levels } = &f.kind {
                if levels.is_empty() {
                    return Err(Error::Schema(format!(
                        "categorical feature `{}` declares no levels",
                        f.name
                    )));
                }
                let mut seen = HashSet::new();
                for level in levels {
                    if !seen.insert(level.as_str()) {
                        return Err(Error::Schema(format!(
                            "categorical feature `{}` declares level `{level}` twice",
                            f.name
                        )));
                    }
                }
            }
        }
        if names.contains(self.response.as_str()) {
            return Err(Error::Schema(format!(
                "response `{}` is also declared as a feature",
                self.response
            )));
        }
        if let Some(e) = &self.exposure {
            if names.contains(e.as_str()) || *e == self.response {
                return Err(Error::Schema(format!(
                    "exposure `{e}` clashes with another column"
                )));
            }
        }
        Ok(())
    }

    /// Number of features `q`.
    pub fn q(&self) -> usize {
        self.features.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.features.iter().filter(|f| !f.is_categorical()).count()
    }

    pub fn n_categorical(&self) -> usize {
        self.features.iter().filter(|f| f.is_categorical()).count()
    }

    /// Declared level counts of the categorical features, in schema order.
    pub fn level_counts(&self) -> Vec<usize> {
        self.features
            .iter()
            .filter_map(|f| match &f.kind {
                FeatureKind::Categorical { levels } => Some(levels.len()),
                FeatureKind::Continuous => None,
            })
            .collect()
    }

    pub fn slots(&self) -> Vec<Slot> {
        let (mut c, mut k) = (0, 0);
        self.features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Continuous => {
                    c += 1;
                    Slot::Continuous(c - 1)
                }
                FeatureKind::Categorical { .. } => {
                    k += 1;
                    Slot::Categorical(k - 1)
                }
            })
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Stable hex digest of the schema, stored in model files.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
