//! Synthetic survey-like data with planted semantic structure: a few features
//! whose names embed close to the target name and whose values carry the label
//! signal, among many unrelated features with random name embeddings.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingStore;
use crate::selection::SelectionResult;
use crate::tabular::{ColumnKind, FeatureMatrix, LabelRule, Schema};

pub const TARGET_NAME: &str = "target";
pub const PARTICIPANT_KEY: &str = "participant_id";
/// Label source columns written by [`write_survey_csv`].
pub const LABEL_COLUMNS: [&str; 4] = ["q1", "q2", "q3", "q4"];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    BadSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_relevant: usize,
    pub n_irrelevant: usize,
    pub noise_epsilon: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Mean shift of each relevant feature between the classes, in standard deviations.
    pub effect_size: f64,
    pub positive_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dim: 32,
            n_relevant: 10,
            n_irrelevant: 150,
            noise_epsilon: 0.3,
            n_train: 100,
            n_test: 2000,
            effect_size: 1.0,
            positive_rate: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Skewed preset: 4% positives and a larger training set so both classes
    /// survive a stratified split.
    pub fn imbalanced() -> Self {
        SynthSpec {
            positive_rate: 0.04,
            n_train: 600,
            ..SynthSpec::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" | "balanced" => Some(SynthSpec::default()),
            "imbalanced" => Some(SynthSpec::imbalanced()),
            _ => None,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_relevant + self.n_irrelevant
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadSpec(m.to_owned()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.n_relevant < 1 {
            return bad("n_relevant must be at least 1");
        }
        if !(self.noise_epsilon >= 0.0 && self.noise_epsilon.is_finite()) {
            return bad("noise_epsilon must be finite and >= 0");
        }
        if self.n_train < 2 || self.n_test < 2 {
            return bad("n_train and n_test must be at least 2");
        }
        if !self.effect_size.is_finite() {
            return bad("effect_size must be finite");
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad("positive_rate must be in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Training rows, labels attached.
    pub train: FeatureMatrix,
    /// Test rows drawn from the same model, labels attached.
    pub test: FeatureMatrix,
    pub train_labels: Vec<bool>,
    pub test_labels: Vec<bool>,
    /// Every feature name plus [`TARGET_NAME`].
    pub embeddings: EmbeddingStore,
    /// Ascending feature indices of the relevant features.
    pub planted: Vec<usize>,
}

impl SynthOutput {
    pub fn planted_names(&self) -> Vec<String> {
        self.planted.iter().map(|&j| self.train.feature_names()[j].clone()).collect()
    }
}

const EMBED_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return normalize(v);
        }
    }
}

pub fn feature_name(j: usize) -> String {
    format!("feature_{j:03}")
}

fn draw_rows(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    n: usize,
    names: &[String],
    relevant: &BTreeSet<usize>,
) -> (FeatureMatrix, Vec<bool>) {
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(spec.positive_rate)).collect();
    let columns = (0..spec.n_features())
        .map(|j| {
            let shift = if relevant.contains(&j) { spec.effect_size } else { 0.0 };
            labels
                .iter()
                .map(|&y| shift * f64::from(u8::from(y)) + rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let fm = FeatureMatrix::from_columns(names.to_vec(), columns).with_labels(labels.clone());
    (fm, labels)
}

/// Draws embeddings, then training rows, then test rows, each from its own
/// stream of the seeded generator.
///
/// Relevant names embed as `normalize(e_t + eps * g)` with `g ~ N(0, I/dim)`,
/// so `|g|` is about one and the expected cosine to the target is near
/// `1/sqrt(1 + eps²)`. Other names are independent random unit vectors.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let p = spec.n_features();
    let names: Vec<String> = (0..p).map(feature_name).collect();

    let mut er = rng(spec.seed, EMBED_STREAM);
    let mut planted = sample(&mut er, p, spec.n_relevant).into_vec();
    planted.sort_unstable();
    let relevant: BTreeSet<usize> = planted.iter().copied().collect();

    let target = unit_vector(&mut er, spec.dim);
    let mut store = EmbeddingStore::new(spec.dim, format!("synthbench(seed={}, eps={})", spec.seed, spec.noise_epsilon));
    let scale = spec.noise_epsilon / (spec.dim as f64).sqrt();
    let insert = |store: &mut EmbeddingStore, name: String, v: Vec<f64>| {
        store.insert(name, v).map_err(|e| SynthError::BadSpec(e.to_string()))
    };
    insert(&mut store, TARGET_NAME.to_owned(), target.clone())?;
    for (j, name) in names.iter().enumerate() {
        let v = if relevant.contains(&j) {
            let v: Vec<f64> = target
                .iter()
                .map(|t| t + scale * er.sample::<f64, _>(StandardNormal))
                .collect();
            if v.iter().all(|&x| x == 0.0) {
                unit_vector(&mut er, spec.dim)
            } else {
                normalize(v)
            }
        } else {
            unit_vector(&mut er, spec.dim)
        };
        insert(&mut store, name.clone(), v)?;
    }

    let (train, train_labels) = draw_rows(&mut rng(spec.seed, TRAIN_STREAM), spec, spec.n_train, &names, &relevant);
    let (test, test_labels) = draw_rows(&mut rng(spec.seed, TEST_STREAM), spec, spec.n_test, &names, &relevant);
    Ok(SynthOutput {
        train,
        test,
        train_labels,
        test_labels,
        embeddings: store,
        planted,
    })
}

/// Fraction of planted features present in the selection.
pub fn planted_recovery(selection: &SelectionResult, planted: &[usize]) -> f64 {
    if planted.is_empty() {
        return 0.0;
    }
    let chosen: BTreeSet<usize> = selection.selected.iter().copied().collect();
    let hits = planted.iter().filter(|j| chosen.contains(j)).count();
    hits as f64 / planted.len() as f64
}

/// Schema matching [`write_survey_csv`] output.
pub fn survey_schema(feature_names: &[String]) -> Schema {
    let mut schema = Schema::new(PARTICIPANT_KEY).with_column(PARTICIPANT_KEY, ColumnKind::Categorical);
    for n in feature_names {
        schema = schema.with_column(n, ColumnKind::Numeric);
    }
    schema = schema
        .with_column(LABEL_COLUMNS[0], ColumnKind::Categorical)
        .with_column(LABEL_COLUMNS[1], ColumnKind::Categorical)
        .with_column(LABEL_COLUMNS[2], ColumnKind::Numeric)
        .with_column(LABEL_COLUMNS[3], ColumnKind::Numeric);
    schema.label_rule = Some(LabelRule::new(
        LABEL_COLUMNS[0],
        LABEL_COLUMNS[1],
        LABEL_COLUMNS[2],
        LABEL_COLUMNS[3],
    ));
    schema
}

/// Writes rows as a survey CSV whose four answer columns reproduce `labels`
/// under the default label rule. Participant ids start at `first_id`.
pub fn write_survey_csv<W: Write>(fm: &FeatureMatrix, labels: &[bool], first_id: usize, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![PARTICIPANT_KEY.to_owned()];
    header.extend(fm.feature_names().iter().cloned());
    header.extend(LABEL_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (r, &y) in labels.iter().enumerate() {
        let mut rec = vec![format!("p{:05}", first_id + r)];
        rec.extend(fm.row(r).iter().map(|v| v.to_string()));
        // positive: both gates open and one score at threshold; negative: first gate closed
        let answers = if y { ["yes", "yes", "4", "0"] } else { ["no", "yes", "4", "0"] };
        rec.extend(answers.iter().map(|s| s.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
