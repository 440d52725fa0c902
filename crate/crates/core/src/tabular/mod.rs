//! Tabular records: schema, CSV loading, seeded splits, (z, y) subgroups.

mod load;
mod schema;
mod split;
mod subgroup;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use load::{load_dataset, read_dataset, LoadSummary};
pub use schema::{DatasetSchema, FeatureDef, FeatureKind, LabelDef, SensitiveDef};
pub use split::{extract_balanced, split_dataset, DatasetSplit, SplitRatio};
pub use subgroup::{compute_ratios, partition_subgroups, Ratios, Subgroup, SubgroupPartition};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("row {row}: expected {expected} columns, found {found}")]
    Malformed { row: u64, expected: usize, found: usize },
    #[error("row {row}: column {column:?}: {value:?} is not a number")]
    BadNumber { row: u64, column: String, value: String },
    #[error("schema: row {row}: unknown label value {value:?}")]
    UnknownLabel { row: u64, value: String },
    #[error("schema: row {row}: unknown sensitive value {value:?}")]
    UnknownSensitive { row: u64, value: String },
    #[error("split needs at least 3 records, got {0}")]
    TooFewRecords(usize),
    #[error("split ratio components must be positive, got {0:?}")]
    BadRatio([u32; 3]),
    #[error("ratios are undefined for an empty subset")]
    EmptySubset,
    #[error("balanced extraction of {size} needs {needed} records in {cell}, only {available} available")]
    InsufficientCell {
        size: usize,
        cell: Subgroup,
        needed: usize,
        available: usize,
    },
    #[error("balanced extraction size {0} is not a multiple of 4")]
    UnbalancedSize(usize),
}

/// A single feature value as loaded from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Number(f64),
    Category(String),
    Missing,
}

impl FeatureValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            FeatureValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, FeatureValue::Missing)
    }
}

/// One row: features in schema order, binary label `y`, binary sensitive
/// attribute `z` (0 = minority, 1 = majority).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub features: Vec<(String, FeatureValue)>,
    pub y: u8,
    pub z: u8,
}

impl SampleRecord {
    pub fn subgroup(&self) -> Subgroup {
        Subgroup::of(self.z, self.y)
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureValue> {
        self.features.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}
