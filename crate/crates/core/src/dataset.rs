//! Indicator schema, raw entity data and peer-group imputation.
//!
//! Input CSV layout: `entity_id,group,<indicator names in schema order>`.
//! Empty cells are missing values. The schema is a JSON array of
//! `{"name": ..., "direction": "positive" | "negative"}`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Larger raw values are better.
    Positive,
    /// Larger raw values are worse.
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Indicator {
    pub name: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Indicator>", into = "Vec<Indicator>")]
pub struct IndicatorSchema {
    indicators: Vec<Indicator>,
}

impl IndicatorSchema {
    pub fn new(indicators: Vec<Indicator>) -> Result<Self> {
        if indicators.len() < 2 {
            return Err(Error::invalid(format!(
                "schema needs at least 2 indicators, got {}",
                indicators.len()
            )));
        }
        let mut seen = HashSet::new();
        for ind in &indicators {
            if ind.name.trim().is_empty() {
                return Err(Error::invalid("schema has an indicator with an empty name"));
            }
            if !seen.insert(ind.name.as_str()) {
                return Err(Error::invalid(format!(
                    "schema lists indicator `{}` twice",
                    ind.name
                )));
            }
        }
        Ok(IndicatorSchema { indicators })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("schema: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn indicators(&self) -> &[Indicator] {
        &self.indicators
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }
}

impl TryFrom<Vec<Indicator>> for IndicatorSchema {
    type Error = Error;

    fn try_from(v: Vec<Indicator>) -> Result<Self> {
        IndicatorSchema::new(v)
    }
}

impl From<IndicatorSchema> for Vec<Indicator> {
    fn from(s: IndicatorSchema) -> Self {
        s.indicators
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityRecord {
    pub entity_id: String,
    pub group: String,
    /// One slot per schema indicator; `None` marks a missing value.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: IndicatorSchema,
    records: Vec<EntityRecord>,
    year_label: String,
}

impl Dataset {
    pub fn new(
        schema: IndicatorSchema,
        records: Vec<EntityRecord>,
        year_label: impl Into<String>,
    ) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::invalid(format!(
                "dataset needs at least 2 entities, got {}",
                records.len()
            )));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.entity_id.as_str()) {
                return Err(Error::invalid(format!("duplicate entity id `{}`", r.entity_id)));
            }
            if r.values.len() != schema.len() {
                return Err(Error::invalid(format!(
                    "entity `{}` has {} values, schema has {} indicators",
                    r.entity_id,
                    r.values.len(),
                    schema.len()
                )));
            }
            if let Some(j) = r.values.iter().position(|v| v.is_some_and(|x| !x.is_finite())) {
                return Err(Error::invalid(format!(
                    "entity `{}` has a non-finite value for `{}`",
                    r.entity_id, schema.indicators[j].name
                )));
            }
        }
        Ok(Dataset {
            schema,
            records,
            year_label: year_label.into(),
        })
    }

    pub fn schema(&self) -> &IndicatorSchema {
        &self.schema
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn year_label(&self) -> &str {
        &self.year_label
    }

    pub fn with_year_label(mut self, label: impl Into<String>) -> Self {
        self.year_label = label.into();
        self
    }

    pub fn entity_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.entity_id.clone()).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.records
            .iter()
            .flat_map(|r| &r.values)
            .filter(|v| v.is_none())
            .count()
    }
}

/// Reads a dataset CSV; the year label defaults to the file stem.
pub fn load_dataset(path: impl AsRef<Path>, schema: &IndicatorSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_dataset(file, schema, label)
}

pub fn read_dataset(
    reader: impl Read,
    schema: &IndicatorSchema,
    year_label: impl Into<String>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(&e))?.clone();
    let expected: Vec<&str> = ["entity_id", "group"]
        .into_iter()
        .chain(schema.indicators().iter().map(|i| i.name.as_str()))
        .collect();
    if header.len() != expected.len() {
        return Err(Error::Parse {
            line: 1,
            column: header.len().min(expected.len()) + 1,
            message: format!(
                "header has {} columns, expected {}",
                header.len(),
                expected.len()
            ),
        });
    }
    for (c, (got, want)) in header.iter().zip(&expected).enumerate() {
        if got.trim() != *want {
            return Err(Error::Parse {
                line: 1,
                column: c + 1,
                message: format!("header column is `{got}`, expected `{want}`"),
            });
        }
    }

    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(&e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != expected.len() {
            return Err(Error::Parse {
                line,
                column: row.len().min(expected.len()) + 1,
                message: format!("row has {} columns, expected {}", row.len(), expected.len()),
            });
        }
        let entity_id = row[0].trim().to_owned();
        if entity_id.is_empty() {
            return Err(Error::Parse {
                line,
                column: 1,
                message: "empty entity id".into(),
            });
        }
        if !seen.insert(entity_id.clone()) {
            return Err(Error::Parse {
                line,
                column: 1,
                message: format!("duplicate entity id `{entity_id}`"),
            });
        }
        let group = row[1].trim().to_owned();
        let mut values = Vec::with_capacity(schema.len());
        for c in 2..row.len() {
            let cell = row[c].trim();
            if cell.is_empty() {
                values.push(None);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(x) if x.is_finite() => values.push(Some(x)),
                _ => {
                    return Err(Error::Parse {
                        line,
                        column: c + 1,
                        message: format!("`{cell}` is not a finite number"),
                    })
                }
            }
        }
        records.push(EntityRecord {
            entity_id,
            group,
            values,
        });
    }
    if records.len() < 2 {
        return Err(Error::Parse {
            line: 2,
            column: 1,
            message: format!("need at least 2 data rows, got {}", records.len()),
        });
    }
    Dataset::new(schema.clone(), records, year_label)
}

fn csv_error(e: &csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line()),
        column: 0,
        message: e.to_string(),
    }
}

/// Replaces each missing value with the mean of present values for that indicator
/// within the record's group. Present values are never modified.
pub fn impute_missing(ds: &Dataset) -> Result<Dataset> {
    let n = ds.schema.len();
    // group -> per-indicator (sum, count) over present values
    let mut stats: BTreeMap<&str, Vec<(f64, usize)>> = BTreeMap::new();
    for r in &ds.records {
        let entry = stats.entry(r.group.as_str()).or_insert_with(|| vec![(0.0, 0); n]);
        for (s, v) in entry.iter_mut().zip(&r.values) {
            if let Some(x) = v {
                s.0 += x;
                s.1 += 1;
            }
        }
    }
    let mut records = ds.records.clone();
    for r in &mut records {
        let group_stats = &stats[r.group.as_str()];
        for (j, v) in r.values.iter_mut().enumerate() {
            if v.is_none() {
                let (sum, count) = group_stats[j];
                if count == 0 {
                    return Err(Error::Imputation {
                        group: r.group.clone(),
                        indicator: ds.schema.indicators[j].name.clone(),
                    });
                }
                *v = Some(sum / count as f64);
            }
        }
    }
    Ok(Dataset {
        schema: ds.schema.clone(),
        records,
        year_label: ds.year_label.clone(),
    })
}
