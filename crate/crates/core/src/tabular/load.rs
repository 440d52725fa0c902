use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::{DataError, DatasetSchema, FeatureKind, FeatureValue, SampleRecord};

/// Row counts from a load. Rows with a missing label or sensitive value are
/// skipped rather than failing the whole file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub rows: usize,
    pub rejected_missing_label: usize,
    pub rejected_missing_sensitive: usize,
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<Vec<SampleRecord>, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (records, summary) = read_dataset(file, schema)?;
    let rejected = summary.rejected_missing_label + summary.rejected_missing_sensitive;
    if rejected > 0 {
        log::warn!(
            "{}: rejected {rejected} of {} rows with a missing label or sensitive value",
            path.display(),
            summary.rows
        );
    }
    Ok(records)
}

enum Source {
    Column(usize),
    Mean(Vec<usize>),
}

/// Parse a header-first CSV stream into records. Record ids are the 0-based
/// data row index, so rejected rows leave gaps rather than renumbering.
pub fn read_dataset<R: Read>(reader: R, schema: &DatasetSchema) -> Result<(Vec<SampleRecord>, LoadSummary), DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut index = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if index.insert(name.as_str(), i).is_some() {
            return Err(DataError::Schema(format!("duplicate header column {name:?}")));
        }
    }
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| DataError::Schema(format!("header is missing column {name:?}")))
    };

    let label_col = col(&schema.label.column)?;
    let sensitive_col = col(&schema.sensitive.column)?;
    let mut sources = Vec::with_capacity(schema.features.len());
    let mut used = vec![false; header.len()];
    used[label_col] = true;
    used[sensitive_col] = true;
    for f in &schema.features {
        let src = if f.mean_of.is_empty() {
            let c = col(&f.name)?;
            used[c] = true;
            Source::Column(c)
        } else {
            let cols = f.mean_of.iter().map(|s| col(s)).collect::<Result<Vec<_>, _>>()?;
            for &c in &cols {
                used[c] = true;
            }
            Source::Mean(cols)
        };
        sources.push(src);
    }
    for d in &schema.drop {
        if let Some(&c) = index.get(d.as_str()) {
            used[c] = true;
        }
    }
    if let Some(i) = used.iter().position(|u| !u) {
        return Err(DataError::Schema(format!(
            "header column {:?} is not declared by the schema",
            header[i]
        )));
    }

    let mut records = Vec::new();
    let mut summary = LoadSummary::default();
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(idx as u64 + 2);
        summary.rows += 1;
        if row.len() != header.len() {
            return Err(DataError::Malformed {
                row: line,
                expected: header.len(),
                found: row.len(),
            });
        }

        let raw_label = &row[label_col];
        if schema.is_missing(raw_label) {
            summary.rejected_missing_label += 1;
            continue;
        }
        let y = if schema.label.positive.iter().any(|p| p == raw_label) {
            1
        } else if schema.label.negative.iter().any(|n| n == raw_label) {
            0
        } else {
            return Err(DataError::UnknownLabel {
                row: line,
                value: raw_label.to_string(),
            });
        };

        let raw_z = &row[sensitive_col];
        if schema.is_missing(raw_z) {
            summary.rejected_missing_sensitive += 1;
            continue;
        }
        let z = if raw_z == schema.sensitive.minority {
            0
        } else if raw_z == schema.sensitive.majority {
            1
        } else {
            return Err(DataError::UnknownSensitive {
                row: line,
                value: raw_z.to_string(),
            });
        };

        let mut features = Vec::with_capacity(schema.features.len());
        for (def, src) in schema.features.iter().zip(&sources) {
            let value = match (def.kind, src) {
                (FeatureKind::Numeric, Source::Column(c)) => parse_number(schema, &row[*c], line, &header[*c])?,
                (FeatureKind::Numeric, Source::Mean(cols)) => {
                    let mut sum = 0.0;
                    let mut missing = false;
                    for &c in cols {
                        match parse_number(schema, &row[c], line, &header[c])? {
                            FeatureValue::Number(v) => sum += v,
                            _ => missing = true,
                        }
                    }
                    if missing {
                        FeatureValue::Missing
                    } else {
                        FeatureValue::Number(sum / cols.len() as f64)
                    }
                }
                (FeatureKind::Categorical, Source::Column(c)) => {
                    let raw = &row[*c];
                    if schema.is_missing(raw) {
                        FeatureValue::Missing
                    } else {
                        let shown = def.values.get(raw).map(String::as_str).unwrap_or(raw);
                        FeatureValue::Category(shown.to_string())
                    }
                }
                (FeatureKind::Categorical, Source::Mean(_)) => unreachable!("validated"),
            };
            features.push((def.name.clone(), value));
        }

        records.push(SampleRecord {
            id: idx as u64,
            features,
            y,
            z,
        });
    }
    Ok((records, summary))
}

fn parse_number(schema: &DatasetSchema, raw: &str, row: u64, column: &str) -> Result<FeatureValue, DataError> {
    if schema.is_missing(raw) {
        return Ok(FeatureValue::Missing);
    }
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(FeatureValue::Number)
        .ok_or_else(|| DataError::BadNumber {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}
