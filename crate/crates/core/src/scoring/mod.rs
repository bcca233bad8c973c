//! Relevance vectors and redundancy matrices from the three scorer kinds:
//! kNN mutual information, name-embedding similarity, and their combination
//! `MI + alpha * STS`.

mod mi;

pub use mi::{mi_continuous, mi_discrete_target, MiConfig, MiError};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{sts_redundancy, sts_relevance, EmbedError, EmbeddingSource, StsScoreConfig};
use crate::tabular::FeatureMatrix;
use mi::{ksg_prepared, Prepared};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("alpha grid needs 0 < lo < hi and n >= 2 (lo {lo}, hi {hi}, n {n})")]
    BadRange { lo: f64, hi: f64, n: usize },
    #[error("scorer needs an embedding store or word-vector table")]
    MissingEmbeddings,
    #[error("{0} labels for {1} rows")]
    LabelCount(usize, usize),
    #[error("invalid score set: {0}")]
    InvalidScoreSet(String),
}

/// Which scorer to run. Serialises as the scorer descriptor of a [`ScoreSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerKind {
    Mi {
        #[serde(flatten)]
        mi: MiConfig,
    },
    Sts {
        #[serde(flatten)]
        sts: StsScoreConfig,
    },
    Combined {
        alpha: f64,
        mi: MiConfig,
        sts: StsScoreConfig,
    },
}

impl ScorerKind {
    pub fn validate(&self) -> Result<(), ScoringError> {
        match self {
            ScorerKind::Mi { mi } => mi.validate()?,
            ScorerKind::Sts { .. } => {}
            ScorerKind::Combined { alpha, mi, .. } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(ScoringError::BadAlpha(*alpha));
                }
                mi.validate()?;
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            ScorerKind::Mi { .. } => "mi".into(),
            ScorerKind::Sts { .. } => "sts".into(),
            ScorerKind::Combined { alpha, .. } => format!("combined(alpha={alpha})"),
        }
    }
}

/// A scorer kind bound to the embeddings it reads, if any.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub kind: &'a ScorerKind,
    pub embeddings: Option<&'a EmbeddingSource>,
}

impl<'a> Scorer<'a> {
    pub fn new(kind: &'a ScorerKind, embeddings: Option<&'a EmbeddingSource>) -> Self {
        Scorer { kind, embeddings }
    }

    fn source(&self) -> Result<&'a EmbeddingSource, ScoringError> {
        self.embeddings.ok_or(ScoringError::MissingEmbeddings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerDescriptor {
    #[serde(flatten)]
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_provenance: Option<String>,
}

/// Relevance (feature→target) scores plus an optional symmetric redundancy
/// (feature→feature) matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub feature_names: Vec<String>,
    pub relevance: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redundancy: Option<Vec<Vec<f64>>>,
    pub scorer: ScorerDescriptor,
}

impl ScoreSet {
    pub fn new(
        feature_names: Vec<String>,
        relevance: Vec<f64>,
        redundancy: Option<Vec<Vec<f64>>>,
        scorer: ScorerDescriptor,
    ) -> Result<Self, ScoringError> {
        let s = ScoreSet {
            feature_names,
            relevance,
            redundancy,
            scorer,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let n = self.feature_names.len();
        let bad = |m: String| Err(ScoringError::InvalidScoreSet(m));
        if self.relevance.len() != n {
            return bad(format!("{} relevance values for {n} features", self.relevance.len()));
        }
        if self.relevance.iter().any(|v| !v.is_finite()) {
            return bad("non-finite relevance".into());
        }
        if let Some(m) = &self.redundancy {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return bad(format!("redundancy must be {n}x{n}"));
            }
            for i in 0..n {
                for j in 0..i {
                    if m[i][j].to_bits() != m[j][i].to_bits() {
                        return bad(format!("redundancy not symmetric at ({i}, {j})"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_names.is_empty()
    }

    /// `feature,relevance` rows.
    pub fn write_relevance_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "relevance"])?;
        for (name, r) in self.feature_names.iter().zip(&self.relevance) {
            w.write_record([name.as_str(), &r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Square matrix with feature names as the header row and first column.
    /// Writes nothing when there is no redundancy matrix.
    pub fn write_redundancy_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let Some(m) = &self.redundancy else { return Ok(()) };
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.feature_names.iter().zip(m) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn embedding_names(fm: &FeatureMatrix, cfg: &StsScoreConfig) -> Vec<String> {
    if cfg.strip_category_suffix {
        fm.source_columns().to_vec()
    } else {
        fm.feature_names().to_vec()
    }
}

fn mi_relevance(fm: &FeatureMatrix, labels: &[bool], cfg: &MiConfig) -> Result<Vec<f64>, ScoringError> {
    (0..fm.n_features())
        .into_par_iter()
        .map(|j| mi_discrete_target(fm.column(j), labels, cfg).map_err(ScoringError::from))
        .collect()
}

fn mi_redundancy(fm: &FeatureMatrix, cfg: &MiConfig) -> Result<Vec<Vec<f64>>, ScoringError> {
    cfg.validate()?;
    let n = fm.n_features();
    if n > 0 && fm.n_rows() < cfg.n_neighbors + 1 {
        return Err(MiError::TooFewSamples {
            needed: cfg.n_neighbors + 1,
            found: fm.n_rows(),
        }
        .into());
    }
    let prepared: Vec<Prepared> = (0..n).into_par_iter().map(|j| Prepared::new(fm.column(j), cfg)).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| ksg_prepared(&prepared[i], &prepared[j], cfg.n_neighbors))
        .collect();
    let mut m = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        m[i][j] = v;
        m[j][i] = v;
    }
    Ok(m)
}

/// Relevance of each feature to the label under `scorer`.
pub fn relevance_scores(fm: &FeatureMatrix, labels: &[bool], scorer: Scorer<'_>) -> Result<Vec<f64>, ScoringError> {
    scorer.kind.validate()?;
    if labels.len() != fm.n_rows() {
        return Err(ScoringError::LabelCount(labels.len(), fm.n_rows()));
    }
    match scorer.kind {
        ScorerKind::Mi { mi } => mi_relevance(fm, labels, mi),
        ScorerKind::Sts { sts } => Ok(sts_relevance(scorer.source()?, &embedding_names(fm, sts), sts)?),
        ScorerKind::Combined { alpha, mi, sts } => {
            let s = sts_relevance(scorer.source()?, &embedding_names(fm, sts), sts)?;
            let m = mi_relevance(fm, labels, mi)?;
            Ok(m.iter().zip(&s).map(|(m, s)| m + alpha * s).collect())
        }
    }
}

/// Feature-by-feature redundancy under `scorer`. The MI diagonal holds each
/// feature's self-information estimate; selection never reads it.
pub fn redundancy_matrix(fm: &FeatureMatrix, scorer: Scorer<'_>) -> Result<Vec<Vec<f64>>, ScoringError> {
    scorer.kind.validate()?;
    match scorer.kind {
        ScorerKind::Mi { mi } => mi_redundancy(fm, mi),
        ScorerKind::Sts { sts } => Ok(sts_redundancy(scorer.source()?, &embedding_names(fm, sts))?),
        ScorerKind::Combined { alpha, mi, sts } => {
            let s = sts_redundancy(scorer.source()?, &embedding_names(fm, sts))?;
            let mut m = mi_redundancy(fm, mi)?;
            for (mrow, srow) in m.iter_mut().zip(&s) {
                for (mv, sv) in mrow.iter_mut().zip(srow) {
                    *mv += alpha * sv;
                }
            }
            Ok(m)
        }
    }
}

/// Scores every feature; the redundancy matrix is computed only when asked for.
pub fn score(
    fm: &FeatureMatrix,
    labels: &[bool],
    scorer: Scorer<'_>,
    with_redundancy: bool,
) -> Result<ScoreSet, ScoringError> {
    let relevance = relevance_scores(fm, labels, scorer)?;
    let redundancy = if with_redundancy {
        Some(redundancy_matrix(fm, scorer)?)
    } else {
        None
    };
    ScoreSet::new(
        fm.feature_names().to_vec(),
        relevance,
        redundancy,
        ScorerDescriptor {
            kind: scorer.kind.clone(),
            embedding_provenance: scorer.embeddings.map(EmbeddingSource::provenance),
        },
    )
}

/// `n` geometrically spaced values from `lo` to `hi`, both endpoints exact.
pub fn alpha_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, ScoringError> {
    if !(lo > 0.0 && hi > lo && hi.is_finite() && n >= 2) {
        return Err(ScoringError::BadRange { lo, hi, n });
    }
    let span = hi / lo;
    let last = (n - 1) as f64;
    let mut grid: Vec<f64> = (0..n).map(|i| lo * span.powf(i as f64 / last)).collect();
    grid[n - 1] = hi;
    Ok(grid)
}

/// The default sweep: 30 values over [1e-2, 1e2].
pub fn default_alpha_grid() -> Vec<f64> {
    alpha_grid(1e-2, 1e2, 30).expect("static range is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn fixture() -> (FeatureMatrix, Vec<bool>, EmbeddingSource) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<bool> = (0..120).map(|i| i % 2 == 0).collect();
        let mut cols = Vec::new();
        for j in 0..5 {
            cols.push(
                labels
                    .iter()
                    .map(|&l| (j as f64) * 0.3 * f64::from(u8::from(l)) + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
        }
        cols.push(vec![1.0; 120]);
        let names: Vec<String> = ["age", "pain score", "sleep", "mood", "weight", "constant"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut store = EmbeddingStore::new(4, "fixture");
        for (i, n) in names.iter().enumerate() {
            let v: Vec<f64> = (0..4).map(|d| ((i * 4 + d) as f64 * 0.77).sin() + 0.01).collect();
            store.insert(n.clone(), v).unwrap();
        }
        store.insert("pain", vec![0.3, 0.9, -0.2, 0.1]).unwrap();
        store.insert("outcome", vec![-0.5, 0.2, 0.4, 0.8]).unwrap();
        (FeatureMatrix::from_columns(names, cols), labels, EmbeddingSource::Store(store))
    }

    fn kinds(alpha: f64) -> (ScorerKind, ScorerKind, ScorerKind) {
        let mi = MiConfig::default();
        let sts = StsScoreConfig::new(&["pain", "outcome"]);
        (
            ScorerKind::Mi { mi },
            ScorerKind::Sts { sts: sts.clone() },
            ScorerKind::Combined { alpha, mi, sts },
        )
    }

    #[test]
    fn combined_relevance_is_linear() {
        let (fm, labels, src) = fixture();
        let (mi, sts, comb) = kinds(2.5);
        let m = relevance_scores(&fm, &labels, Scorer::new(&mi, None)).unwrap();
        let s = relevance_scores(&fm, &labels, Scorer::new(&sts, Some(&src))).unwrap();
        let c = relevance_scores(&fm, &labels, Scorer::new(&comb, Some(&src))).unwrap();
        for i in 0..c.len() {
            assert_eq!(c[i], m[i] + 2.5 * s[i]);
        }
        assert_eq!(m[5], 0.0, "constant column carries no information");
    }

    #[test]
    fn combined_redundancy_is_linear() {
        let (fm, _, src) = fixture();
        let (mi, sts, comb) = kinds(0.01);
        let m = redundancy_matrix(&fm, Scorer::new(&mi, None)).unwrap();
        let s = redundancy_matrix(&fm, Scorer::new(&sts, Some(&src))).unwrap();
        let c = redundancy_matrix(&fm, Scorer::new(&comb, Some(&src))).unwrap();
        for i in 0..fm.n_features() {
            for j in 0..fm.n_features() {
                assert!((c[i][j] - m[i][j] - 0.01 * s[i][j]).abs() < 1e-12);
                assert_eq!(c[i][j].to_bits(), c[j][i].to_bits());
                assert_eq!(m[i][j].to_bits(), m[j][i].to_bits());
                assert!(m[i][j] >= 0.0);
            }
        }
    }

    #[test]
    fn sts_relevance_of_target_named_feature() {
        let mut store = EmbeddingStore::new(2, "t");
        store.insert("pain", vec![1.0, 2.0]).unwrap();
        store.insert("x", vec![2.0, -1.0]).unwrap();
        let src = EmbeddingSource::Store(store);
        let fm = FeatureMatrix::from_columns(vec!["pain".into(), "x".into()], vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let kind = ScorerKind::Sts { sts: StsScoreConfig::new(&["pain"]) };
        let r = relevance_scores(&fm, &[true, false], Scorer::new(&kind, Some(&src))).unwrap();
        assert_eq!(r, vec![1.0, 0.0]);
    }

    #[test]
    fn duplicated_named_columns_have_unit_sts_redundancy() {
        let mut store = EmbeddingStore::new(2, "t");
        store.insert("sleep", vec![0.3, 0.4]).unwrap();
        let src = EmbeddingSource::Store(store);
        let col = vec![0.1, 0.5, 0.2];
        let fm = FeatureMatrix::from_columns(vec!["sleep".into(), "sleep".into()], vec![col.clone(), col]);
        let kind = ScorerKind::Sts { sts: StsScoreConfig::new(&["sleep"]) };
        let m = redundancy_matrix(&fm, Scorer::new(&kind, Some(&src))).unwrap();
        assert_eq!(m[0][1], 1.0);
    }

    #[test]
    fn strip_suffix_uses_source_column() {
        let mut store = EmbeddingStore::new(2, "t");
        store.insert("smoker", vec![1.0, 0.0]).unwrap();
        store.insert("target", vec![1.0, 1.0]).unwrap();
        let src = EmbeddingSource::Store(store);
        let fm = FeatureMatrix::with_sources(
            vec!["smoker_No".into(), "smoker_Yes".into()],
            vec!["smoker".into(), "smoker".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        );
        let mut sts = StsScoreConfig::new(&["target"]);
        let kind = ScorerKind::Sts { sts: sts.clone() };
        assert!(matches!(
            relevance_scores(&fm, &[true, false], Scorer::new(&kind, Some(&src))),
            Err(ScoringError::Embed(EmbedError::UnknownName(_)))
        ));
        sts.strip_category_suffix = true;
        let kind = ScorerKind::Sts { sts };
        let r = relevance_scores(&fm, &[true, false], Scorer::new(&kind, Some(&src))).unwrap();
        assert!((r[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn missing_embeddings_and_bad_alpha() {
        let (fm, labels, _) = fixture();
        let (_, sts, _) = kinds(1.0);
        assert!(matches!(
            relevance_scores(&fm, &labels, Scorer::new(&sts, None)),
            Err(ScoringError::MissingEmbeddings)
        ));
        let (_, _, bad) = kinds(0.0);
        assert!(matches!(bad.validate(), Err(ScoringError::BadAlpha(_))));
    }

    #[test]
    fn alpha_grid_shape() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[29], 100.0);
        let ratio = 10f64.powf(4.0 / 29.0);
        assert!((ratio - 1.3738).abs() < 1e-4);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - ratio).abs() < 1e-9);
        }
        assert!(matches!(alpha_grid(1.0, 1.0, 30), Err(ScoringError::BadRange { .. })));
        assert!(matches!(alpha_grid(1.0, 2.0, 1), Err(ScoringError::BadRange { .. })));
    }

    #[test]
    fn dominant_alpha_matches_sts_ranking() {
        let (fm, labels, src) = fixture();
        let (_, sts, comb) = kinds(1e9);
        let s = relevance_scores(&fm, &labels, Scorer::new(&sts, Some(&src))).unwrap();
        let c = relevance_scores(&fm, &labels, Scorer::new(&comb, Some(&src))).unwrap();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
            idx
        };
        assert_eq!(rank(&s), rank(&c));
    }

    #[test]
    fn score_set_json_round_trip_and_validation() {
        let (fm, labels, src) = fixture();
        let (_, _, comb) = kinds(0.5);
        let set = score(&fm, &labels, Scorer::new(&comb, Some(&src)), true).unwrap();
        let json = serde_json::to_string_pretty(&set).unwrap();
        let back: ScoreSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.scorer.embedding_provenance.as_deref(), Some("fixture"));

        let mut broken = set.clone();
        broken.redundancy.as_mut().unwrap()[0][1] += 1.0;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn matrices_identical_across_thread_counts() {
        let (fm, _, _) = fixture();
        let kind = ScorerKind::Mi { mi: MiConfig::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| redundancy_matrix(&fm, Scorer::new(&kind, None)).unwrap())
        };
        let one = run(1);
        for t in [2, 8] {
            let other = run(t);
            for (a, b) in one.iter().flatten().zip(other.iter().flatten()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
