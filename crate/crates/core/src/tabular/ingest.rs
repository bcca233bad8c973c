use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Column, ColumnData, ColumnKind, Dataset, TabularError, Timestamp};

fn default_null_tokens() -> Vec<String> {
    vec![String::new(), "NA".to_owned(), "null".to_owned()]
}

fn default_max_unique() -> usize {
    5
}

fn default_threshold() -> i64 {
    3
}

/// Column names and threshold for the binary label
/// `(Q1 and Q2) and (Q3 >= t or Q4 >= t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    #[serde(rename = "q1")]
    pub q1_name: String,
    #[serde(rename = "q2")]
    pub q2_name: String,
    #[serde(rename = "q3")]
    pub q3_name: String,
    #[serde(rename = "q4")]
    pub q4_name: String,
    #[serde(rename = "threshold", default = "default_threshold")]
    pub pain_threshold: i64,
}

impl LabelRule {
    pub fn new(q1: &str, q2: &str, q3: &str, q4: &str) -> Self {
        LabelRule {
            q1_name: q1.to_owned(),
            q2_name: q2.to_owned(),
            q3_name: q3.to_owned(),
            q4_name: q4.to_owned(),
            pain_threshold: default_threshold(),
        }
    }

    pub fn evaluate(&self, q1: bool, q2: bool, q3: f64, q4: f64) -> bool {
        let t = self.pain_threshold as f64;
        (q1 && q2) && (q3 >= t || q4 >= t)
    }

    fn names(&self) -> [&str; 4] {
        [&self.q1_name, &self.q2_name, &self.q3_name, &self.q4_name]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnFilterPolicy {
    pub max_categorical_unique: usize,
    /// Case-insensitive substrings; a column whose name contains any of them is dropped.
    pub drop_name_patterns: Vec<String>,
}

impl Default for ColumnFilterPolicy {
    fn default() -> Self {
        ColumnFilterPolicy {
            max_categorical_unique: default_max_unique(),
            drop_name_patterns: Vec::new(),
        }
    }
}

/// The schema file: column kinds, participant key, label rule and filter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub participant_key: String,
    pub columns: BTreeMap<String, ColumnKind>,
    /// Kind for headers missing from `columns`; when absent such headers are an error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_kind: Option<ColumnKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_rule: Option<LabelRule>,
    #[serde(default = "default_null_tokens")]
    pub null_tokens: Vec<String>,
    #[serde(default)]
    pub drop_name_patterns: Vec<String>,
    #[serde(default = "default_max_unique")]
    pub max_categorical_unique: usize,
}

impl Schema {
    pub fn new(participant_key: &str) -> Self {
        Schema {
            participant_key: participant_key.to_owned(),
            columns: BTreeMap::new(),
            default_kind: None,
            label_rule: None,
            null_tokens: default_null_tokens(),
            drop_name_patterns: Vec::new(),
            max_categorical_unique: default_max_unique(),
        }
    }

    pub fn with_column(mut self, name: &str, kind: ColumnKind) -> Self {
        self.columns.insert(name.to_owned(), kind);
        self
    }

    pub fn filter_policy(&self) -> ColumnFilterPolicy {
        ColumnFilterPolicy {
            max_categorical_unique: self.max_categorical_unique,
            drop_name_patterns: self.drop_name_patterns.clone(),
        }
    }

    fn kind_of(&self, column: &str) -> Result<ColumnKind, TabularError> {
        self.columns
            .get(column)
            .copied()
            .or(self.default_kind)
            .ok_or_else(|| TabularError::UnknownColumnKind {
                column: column.to_owned(),
            })
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset, TabularError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TabularError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset, TabularError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_owned()).collect();

    let mut columns = headers
        .iter()
        .map(|h| {
            let data = match schema.kind_of(h)? {
                ColumnKind::Numeric => ColumnData::Numeric(Vec::new()),
                ColumnKind::DateTime => ColumnData::DateTime(Vec::new()),
                ColumnKind::Categorical => ColumnData::Categorical(Vec::new()),
            };
            Ok(Column::new(h.clone(), data))
        })
        .collect::<Result<Vec<_>, TabularError>>()?;

    if !headers.contains(&schema.participant_key) {
        return Err(TabularError::MissingParticipantKey(schema.participant_key.clone()));
    }

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(TabularError::MalformedCsv {
                line,
                expected: headers.len(),
                found: record.len(),
            });
        }
        for (col, raw) in columns.iter_mut().zip(record.iter()) {
            let value = raw.trim();
            if schema.null_tokens.iter().any(|t| t == value) {
                col.data.push_null();
                continue;
            }
            let (name, kind) = (&col.name, col.data.kind());
            let bad = || TabularError::UnparseableCell {
                line,
                column: name.clone(),
                value: value.to_owned(),
                kind,
            };
            match &mut col.data {
                ColumnData::Numeric(v) => {
                    let x: f64 = value.parse().map_err(|_| bad())?;
                    if !x.is_finite() {
                        return Err(bad());
                    }
                    v.push(Some(x));
                }
                ColumnData::DateTime(v) => v.push(Some(Timestamp::parse_iso8601(value).ok_or_else(bad)?)),
                ColumnData::Categorical(v) => v.push(Some(value.to_owned())),
            }
        }
    }

    Dataset::new(columns, schema.participant_key.clone())
}

/// Collapses repeated responses to one row per participant holding the last
/// non-null value of every column. Participants keep first-appearance order.
pub fn collapse_responses(ds: &Dataset) -> Dataset {
    let key = ds
        .column(ds.participant_key())
        .expect("dataset invariant: participant key exists");

    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in 0..ds.row_count() {
        let k = key.data.cell_text(row).expect("dataset invariant: key has no nulls");
        let slot = *index.entry(k).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[slot].push(row);
    }

    let columns = ds
        .columns()
        .iter()
        .map(|c| {
            let mut out = c.data.empty_like();
            for rows in &order {
                match rows.iter().rev().find(|&&r| !c.data.is_null(r)) {
                    Some(&r) => out.push_from(&c.data, r),
                    None => out.push_null(),
                }
            }
            Column::new(c.name.clone(), out)
        })
        .collect();
    Dataset::from_parts_unchecked(columns, ds.participant_key().to_owned(), order.len())
}

fn yes_no(column: &str, row: usize, value: &str) -> Result<bool, TabularError> {
    if value.eq_ignore_ascii_case("yes") {
        Ok(true)
    } else if value.eq_ignore_ascii_case("no") {
        Ok(false)
    } else {
        Err(TabularError::NonBinaryAnswer {
            column: column.to_owned(),
            row,
            value: value.to_owned(),
        })
    }
}

/// Computes the binary label per row and removes the four source columns.
///
/// Rows with a null in any of the four label columns are dropped, so the
/// returned dataset and label vector can be shorter than the input.
pub fn derive_label(ds: &Dataset, rule: &LabelRule) -> Result<(Dataset, Vec<bool>), TabularError> {
    let fetch = |name: &str, kind: ColumnKind| -> Result<&ColumnData, TabularError> {
        let col = ds
            .column(name)
            .ok_or_else(|| TabularError::MissingLabelColumn(name.to_owned()))?;
        if col.kind() != kind {
            return Err(TabularError::LabelColumnKind {
                column: name.to_owned(),
                expected: kind,
            });
        }
        Ok(&col.data)
    };
    let (ColumnData::Categorical(q1), ColumnData::Categorical(q2), ColumnData::Numeric(q3), ColumnData::Numeric(q4)) = (
        fetch(&rule.q1_name, ColumnKind::Categorical)?,
        fetch(&rule.q2_name, ColumnKind::Categorical)?,
        fetch(&rule.q3_name, ColumnKind::Numeric)?,
        fetch(&rule.q4_name, ColumnKind::Numeric)?,
    ) else {
        unreachable!("kinds checked above");
    };

    let mut keep = Vec::new();
    let mut labels = Vec::new();
    for row in 0..ds.row_count() {
        let (Some(a), Some(b), Some(c), Some(d)) = (&q1[row], &q2[row], q3[row], q4[row]) else {
            continue;
        };
        let a = yes_no(&rule.q1_name, row, a)?;
        let b = yes_no(&rule.q2_name, row, b)?;
        keep.push(row);
        labels.push(rule.evaluate(a, b, c, d));
    }

    let names = rule.names();
    let out = ds
        .retain_columns(|c| !names.contains(&c.name.as_str()))
        .select_rows(&keep);
    Ok((out, labels))
}

/// Drops columns matching a name pattern and categorical columns with too many levels.
pub fn filter_columns(ds: &Dataset, policy: &ColumnFilterPolicy) -> Result<Dataset, TabularError> {
    if policy.max_categorical_unique < 1 {
        return Err(TabularError::BadPolicy);
    }
    let patterns: Vec<String> = policy.drop_name_patterns.iter().map(|p| p.to_lowercase()).collect();
    Ok(ds.retain_columns(|c| {
        let lower = c.name.to_lowercase();
        if patterns.iter().any(|p| lower.contains(p.as_str())) {
            return false;
        }
        match &c.data {
            ColumnData::Categorical(v) => {
                let distinct: std::collections::HashSet<&str> = v.iter().flatten().map(String::as_str).collect();
                distinct.len() <= policy.max_categorical_unique
            }
            _ => true,
        }
    }))
}
