//! Dense numeric encoding of records: z-scored numerics, one-hot categoricals.

use std::collections::BTreeSet;

use crate::tabular::{FeatureValue, SampleRecord};

#[derive(Debug, Clone, PartialEq)]
enum Column {
    Numeric {
        mean: f64,
        scale: f64,
    },
    /// Sorted category labels; a missing value is its own category.
    OneHot {
        categories: Vec<Option<String>>,
    },
}

/// Encoder fitted on a slice of records. A column is numeric if any fitted
/// value is a number, categorical otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    names: Vec<String>,
    columns: Vec<Column>,
    dim: usize,
}

impl FeatureEncoder {
    pub fn fit(records: &[SampleRecord]) -> Self {
        let names: Vec<String> = records
            .first()
            .map(|r| r.features.iter().map(|(n, _)| n.clone()).collect())
            .unwrap_or_default();
        let mut columns = Vec::with_capacity(names.len());
        for i in 0..names.len() {
            let values = records.iter().map(|r| &r.features[i].1);
            let numbers: Vec<f64> = values.clone().filter_map(FeatureValue::as_number).collect();
            if !numbers.is_empty() {
                let n = numbers.len() as f64;
                let mean = numbers.iter().sum::<f64>() / n;
                let var = numbers.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                columns.push(Column::Numeric {
                    mean,
                    scale: if sd > 0.0 { sd } else { 1.0 },
                });
            } else {
                let categories: BTreeSet<Option<String>> = values
                    .map(|v| match v {
                        FeatureValue::Category(c) => Some(c.clone()),
                        _ => None,
                    })
                    .collect();
                columns.push(Column::OneHot {
                    categories: categories.into_iter().collect(),
                });
            }
        }
        let dim = columns
            .iter()
            .map(|c| match c {
                Column::Numeric { .. } => 1,
                Column::OneHot { categories } => categories.len(),
            })
            .sum();
        FeatureEncoder { names, columns, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    /// Encoded offset of each feature, in feature order.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.columns
            .iter()
            .map(|c| {
                let w = match c {
                    Column::Numeric { .. } => 1,
                    Column::OneHot { categories } => categories.len(),
                };
                let span = (at, w);
                at += w;
                span
            })
            .collect()
    }

    /// Index of the one-hot slot for `feature == category`, if fitted.
    pub fn category_slot(&self, feature: &str, category: &str) -> Option<usize> {
        let pos = self.names.iter().position(|n| n == feature)?;
        let (start, _) = self.offsets()[pos];
        match &self.columns[pos] {
            Column::OneHot { categories } => categories
                .iter()
                .position(|c| c.as_deref() == Some(category))
                .map(|i| start + i),
            Column::Numeric { .. } => None,
        }
    }

    /// Slot of a numeric feature, if fitted as numeric.
    pub fn numeric_slot(&self, feature: &str) -> Option<usize> {
        let pos = self.names.iter().position(|n| n == feature)?;
        match self.columns[pos] {
            Column::Numeric { .. } => Some(self.offsets()[pos].0),
            Column::OneHot { .. } => None,
        }
    }

    /// Missing numerics encode as the column mean (0); unseen categories as an
    /// all-zero block.
    pub fn encode(&self, features: &[(String, FeatureValue)]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        for (col, (_, value)) in self.columns.iter().zip(features) {
            match col {
                Column::Numeric { mean, scale } => {
                    out.push(value.as_number().map_or(0.0, |v| (v - mean) / scale));
                }
                Column::OneHot { categories } => {
                    let key = match value {
                        FeatureValue::Category(c) => Some(c.as_str()),
                        FeatureValue::Number(_) => Some(""),
                        FeatureValue::Missing => None,
                    };
                    out.extend(categories.iter().map(|c| if c.as_deref() == key { 1.0 } else { 0.0 }));
                }
            }
        }
        out
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
