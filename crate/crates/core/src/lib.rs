//! Feature selection for tabular data from two score families: kNN estimates
//! of mutual information with the label, and cosine similarity between
//! feature-name and target-name embeddings. Scores feed top-N, threshold or
//! mRMR selection, and a cross-validated classifier harness evaluates the result.

pub mod cli;
pub mod embed;
pub mod model_eval;
pub mod scoring;
pub mod selection;
pub mod synthbench;
pub mod tabular;

pub use embed::{EmbeddingSource, EmbeddingStore, StsScoreConfig, WordVectorTable};
pub use model_eval::{CvPlan, EvalReport, GridSpec, PipelineSpec};
pub use scoring::{MiConfig, ScoreSet, ScorerKind};
pub use selection::{SelectionConfig, SelectionResult};
pub use tabular::{Dataset, FeatureMatrix, Schema};
