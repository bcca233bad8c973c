//! Classifiers, ranking metrics and the split / flat-CV / grid-search harness.

mod classifiers;
mod cv;
mod metrics;
mod pipeline;

pub use classifiers::{
    gnb_predict_proba, knn_predict_proba, train_gnb, train_knn, Classifier, ClassifierSpec, GnbModel, KnnModel,
};
pub use cv::{split_train_test, stratified_folds, CvPlan};
pub use metrics::{auprc, auroc};
pub use pipeline::{
    cross_validate, evaluate, fit_pipeline, grid_search, ChosenConfig, CvOutcome, EvalReport, FittedPipeline,
    GridPointSummary, GridSpec, PipelineSpec, ProtocolSummary, ScorerChoice,
};

use thiserror::Error;

use crate::scoring::ScoringError;
use crate::selection::SelectionError;
use crate::tabular::TabularError;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("no training rows")]
    EmptyTraining,
    #[error("n_neighbors {n_neighbors} is not in 1..={rows}")]
    BadNeighbors { n_neighbors: usize, rows: usize },
    #[error("AUROC needs both classes")]
    SingleClass,
    #[error("AUPRC needs at least one positive")]
    NoPositives,
    #[error("class {label} has {found} members, need at least {needed}")]
    TooFewPerClass { label: bool, found: usize, needed: usize },
    #[error("invalid CV plan: {0}")]
    BadPlan(&'static str),
    #[error("the grid is empty")]
    EmptyGrid,
    #[error("{0}")]
    Stage(String),
}

impl From<TabularError> for EvalError {
    fn from(e: TabularError) -> Self {
        EvalError::Stage(e.to_string())
    }
}

impl From<ScoringError> for EvalError {
    fn from(e: ScoringError) -> Self {
        EvalError::Stage(e.to_string())
    }
}

impl From<SelectionError> for EvalError {
    fn from(e: SelectionError) -> Self {
        EvalError::Stage(e.to_string())
    }
}
