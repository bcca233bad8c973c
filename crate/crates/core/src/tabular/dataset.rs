use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, TabularError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    DateTime,
    Categorical,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnKind::Numeric => "numeric",
            ColumnKind::DateTime => "datetime",
            ColumnKind::Categorical => "categorical",
        })
    }
}

/// Milliseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    /// Parses ISO-8601 dates, naive date-times and RFC 3339 date-times.
    pub fn parse_iso8601(s: &str) -> Option<Timestamp> {
        use chrono::{DateTime, NaiveDate, NaiveDateTime};

        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Some(Timestamp(dt.timestamp_millis()));
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Some(Timestamp(dt.and_utc().timestamp_millis()));
            }
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .ok()
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .map(|dt| Timestamp(dt.and_utc().timestamp_millis()))
    }

    pub fn to_rfc3339(self) -> String {
        chrono::DateTime::from_timestamp_millis(self.0)
            .map(|dt| dt.to_rfc3339_opts(chrono::SecondsFormat::Millis, true))
            .unwrap_or_else(|| self.0.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    DateTime(Vec<Option<Timestamp>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnData {
    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::DateTime(_) => ColumnKind::DateTime,
            ColumnData::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::DateTime(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::DateTime(v) => v[row].is_none(),
            ColumnData::Categorical(v) => v[row].is_none(),
        }
    }

    pub(crate) fn empty_like(&self) -> ColumnData {
        match self {
            ColumnData::Numeric(_) => ColumnData::Numeric(Vec::new()),
            ColumnData::DateTime(_) => ColumnData::DateTime(Vec::new()),
            ColumnData::Categorical(_) => ColumnData::Categorical(Vec::new()),
        }
    }

    /// Appends row `row` of `src` (same kind) to `self`.
    pub(crate) fn push_from(&mut self, src: &ColumnData, row: usize) {
        match (self, src) {
            (ColumnData::Numeric(d), ColumnData::Numeric(s)) => d.push(s[row]),
            (ColumnData::DateTime(d), ColumnData::DateTime(s)) => d.push(s[row]),
            (ColumnData::Categorical(d), ColumnData::Categorical(s)) => d.push(s[row].clone()),
            _ => unreachable!("push_from across column kinds"),
        }
    }

    pub(crate) fn push_null(&mut self) {
        match self {
            ColumnData::Numeric(d) => d.push(None),
            ColumnData::DateTime(d) => d.push(None),
            ColumnData::Categorical(d) => d.push(None),
        }
    }

    pub(crate) fn take_rows(&self, rows: &[usize]) -> ColumnData {
        let mut out = self.empty_like();
        for &r in rows {
            out.push_from(self, r);
        }
        out
    }

    /// String form of a non-null cell, used for grouping keys and CSV export.
    pub fn cell_text(&self, row: usize) -> Option<String> {
        match self {
            ColumnData::Numeric(v) => v[row].map(|x| x.to_string()),
            ColumnData::DateTime(v) => v[row].map(Timestamp::to_rfc3339),
            ColumnData::Categorical(v) => v[row].clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, data: ColumnData) -> Self {
        Column {
            name: name.into(),
            data,
        }
    }

    pub fn kind(&self) -> ColumnKind {
        self.data.kind()
    }
}

/// A typed table of survey responses keyed by participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    participant_key: String,
    row_count: usize,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, participant_key: impl Into<String>) -> Result<Self, TabularError> {
        let participant_key = participant_key.into();
        let row_count = columns.first().map(|c| c.data.len()).unwrap_or(0);
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(TabularError::DuplicateColumn(c.name.clone()));
            }
            if c.data.len() != row_count {
                return Err(TabularError::RaggedColumn {
                    column: c.name.clone(),
                    expected: row_count,
                    found: c.data.len(),
                });
            }
        }
        let key = columns
            .iter()
            .find(|c| c.name == participant_key)
            .ok_or_else(|| TabularError::MissingParticipantKey(participant_key.clone()))?;
        if let Some(row) = (0..row_count).find(|&r| key.data.is_null(r)) {
            return Err(TabularError::NullParticipantKey {
                column: participant_key.clone(),
                row,
            });
        }
        Ok(Dataset {
            columns,
            participant_key,
            row_count,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn participant_key(&self) -> &str {
        &self.participant_key
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    /// Columns other than the participant key, in table order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(move |c| c.name != self.participant_key)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column::new(c.name.clone(), c.data.take_rows(rows)))
                .collect(),
            participant_key: self.participant_key.clone(),
            row_count: rows.len(),
        }
    }

    /// Keeps columns for which `keep` returns true; the participant key is always kept.
    pub fn retain_columns(&self, mut keep: impl FnMut(&Column) -> bool) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .filter(|c| c.name == self.participant_key || keep(c))
                .cloned()
                .collect(),
            participant_key: self.participant_key.clone(),
            row_count: self.row_count,
        }
    }

    /// Wraps a dense matrix as numeric columns plus a generated row-number key
    /// (`__row`, with extra underscores if a feature already uses that name).
    pub fn from_feature_matrix(fm: &FeatureMatrix) -> Dataset {
        let mut key = String::from("__row");
        while fm.feature_names().contains(&key) {
            key.insert(0, '_');
        }
        let mut columns = vec![Column::new(
            key.clone(),
            ColumnData::Numeric((0..fm.n_rows()).map(|r| Some(r as f64)).collect()),
        )];
        for (name, col) in fm.feature_names().iter().zip(fm.columns()) {
            columns.push(Column::new(
                name.clone(),
                ColumnData::Numeric(col.iter().map(|&v| Some(v)).collect()),
            ));
        }
        Dataset {
            columns,
            participant_key: key,
            row_count: fm.n_rows(),
        }
    }

    pub(crate) fn from_parts_unchecked(columns: Vec<Column>, participant_key: String, row_count: usize) -> Dataset {
        Dataset {
            columns,
            participant_key,
            row_count,
        }
    }
}
