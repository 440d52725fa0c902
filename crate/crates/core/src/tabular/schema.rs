use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

const ADULT_SCHEMA: &str = include_str!("../../assets/schemas/adult.toml");
const CREDIT_SCHEMA: &str = include_str!("../../assets/schemas/credit.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// One model-visible feature after preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    /// Source columns whose arithmetic mean becomes this feature. Empty means
    /// the feature is read from the column called `name`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mean_of: Vec<String>,
    /// Fixed number of decimals when rendered. `None` renders integers bare.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decimals: Option<usize>,
    /// Raw categorical value → display value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, String>,
}

impl FeatureDef {
    pub fn source_columns(&self) -> Vec<&str> {
        if self.mean_of.is_empty() {
            vec![self.name.as_str()]
        } else {
            self.mean_of.iter().map(String::as_str).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDef {
    pub column: String,
    /// Raw values meaning y = 1.
    pub positive: Vec<String>,
    /// Raw values meaning y = 0.
    pub negative: Vec<String>,
    /// Answer text for y = 1, e.g. "greater than 50K".
    pub positive_text: String,
    /// Answer text for y = 0.
    pub negative_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveDef {
    pub column: String,
    /// Raw value mapped to z = 0.
    pub minority: String,
    /// Raw value mapped to z = 1.
    pub majority: String,
    /// Display text for the two groups; defaults to the raw values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minority_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_text: Option<String>,
}

impl SensitiveDef {
    pub fn display(&self, z: u8) -> &str {
        if z == 0 {
            self.minority_text.as_deref().unwrap_or(&self.minority)
        } else {
            self.majority_text.as_deref().unwrap_or(&self.majority)
        }
    }
}

fn default_missing() -> Vec<String> {
    vec!["?".to_string(), String::new(), "NA".to_string()]
}

/// Column layout and value mappings for one tabular dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub features: Vec<FeatureDef>,
    pub label: LabelDef,
    pub sensitive: SensitiveDef,
    /// Header columns present in the file but ignored.
    #[serde(default)]
    pub drop: Vec<String>,
    /// Raw tokens treated as a missing value.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

impl DatasetSchema {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let schema: DatasetSchema = toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Shipped schema for the UCI Adult income layout.
    pub fn adult() -> Self {
        Self::from_toml_str(ADULT_SCHEMA).expect("shipped adult schema is valid")
    }

    /// Shipped schema for the UCI default-of-credit-card-clients layout.
    pub fn credit() -> Self {
        Self::from_toml_str(CREDIT_SCHEMA).expect("shipped credit schema is valid")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "adult" => Some(Self::adult()),
            "credit" => Some(Self::credit()),
            _ => None,
        }
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureDef> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn is_missing(&self, raw: &str) -> bool {
        self.missing.iter().any(|m| m == raw)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let err = |msg: String| Err(DataError::Schema(msg));
        if self.label.column == self.sensitive.column {
            return err(format!("label and sensitive column are both {:?}", self.label.column));
        }
        if self.sensitive.minority == self.sensitive.majority {
            return err("minority and majority codes must differ".into());
        }
        if self.label.positive.is_empty() || self.label.negative.is_empty() {
            return err("label needs at least one positive and one negative value".into());
        }
        if self.label.positive.iter().any(|p| self.label.negative.contains(p)) {
            return err("a raw label value is both positive and negative".into());
        }
        if self.label.positive_text.trim().is_empty() || self.label.negative_text.trim().is_empty() {
            return err("label display strings must be non-empty".into());
        }
        if self.features.is_empty() {
            return err("schema declares no features".into());
        }
        let mut names = BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return err(format!("duplicate feature {:?}", f.name));
            }
            if f.name == self.label.column || f.name == self.sensitive.column {
                return err(format!("feature {:?} shadows the label or sensitive column", f.name));
            }
            if !f.mean_of.is_empty() && f.kind != FeatureKind::Numeric {
                return err(format!("aggregated feature {:?} must be numeric", f.name));
            }
            for src in f.source_columns() {
                if src == self.label.column || src == self.sensitive.column {
                    return err(format!("feature {:?} reads a reserved column", f.name));
                }
            }
        }
        Ok(())
    }
}
