//! Survey-style tabular data: typed columns, response collapsing, label
//! derivation, column filtering and the impute/encode/scale pipeline that
//! turns a [`Dataset`] into a dense [`FeatureMatrix`].

mod dataset;
mod ingest;
mod preprocess;

pub use dataset::{Column, ColumnData, ColumnKind, Dataset, Timestamp};
pub use ingest::{
    collapse_responses, derive_label, filter_columns, load_csv, read_csv, ColumnFilterPolicy,
    LabelRule, Schema,
};
pub use preprocess::{
    apply_preprocess, fit_preprocess, ColumnPlan, ColumnTransform, FeatureMatrix,
    PreprocessPlan, Preprocessed,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed csv at line {line}: expected {expected} fields, found {found}")]
    MalformedCsv {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column:?}: cannot parse {value:?} as {kind}")]
    UnparseableCell {
        line: u64,
        column: String,
        value: String,
        kind: ColumnKind,
    },
    #[error("column {column:?} has no kind in the schema and no default_kind is set")]
    UnknownColumnKind { column: String },
    #[error("participant key column {0:?} not found")]
    MissingParticipantKey(String),
    #[error("participant key column {column:?} is null at row {row}")]
    NullParticipantKey { column: String, row: usize },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("column {column:?} has {found} rows, expected {expected}")]
    RaggedColumn {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),
    #[error("label column {column:?} must be {expected}")]
    LabelColumnKind {
        column: String,
        expected: ColumnKind,
    },
    #[error("label column {column:?}, row {row}: {value:?} is not Yes/No")]
    NonBinaryAnswer {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column {0:?} has zero rows")]
    EmptyColumn(String),
    #[error("plan mismatch: {0}")]
    PlanMismatch(String),
    #[error("max_categorical_unique must be at least 1")]
    BadPolicy,
}
