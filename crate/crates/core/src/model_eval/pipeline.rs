use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{auprc, auroc, split_train_test, stratified_folds, Classifier, ClassifierSpec, CvPlan, EvalError};
use crate::embed::{EmbeddingSource, StsScoreConfig};
use crate::scoring::{self, MiConfig, ScoreSet, Scorer, ScorerDescriptor, ScorerKind};
use crate::selection::{select, SelectionConfig, SelectionResult};
use crate::tabular::{apply_preprocess, fit_preprocess, Dataset, FeatureMatrix, PreprocessPlan};

/// One point of the search space: scorer, selection strategy and classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub scorer: ScorerKind,
    pub selection: SelectionConfig,
    pub classifier: ClassifierSpec,
}

impl PipelineSpec {
    fn clamped_selection(&self, n_features: usize) -> SelectionConfig {
        match self.selection {
            SelectionConfig::TopN { n } => SelectionConfig::TopN { n: n.min(n_features) },
            SelectionConfig::Mrmr { n } => SelectionConfig::Mrmr { n: n.min(n_features) },
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerChoice {
    Mi,
    Sts,
    Combined { alpha: f64 },
}

/// Cartesian grid `scorers × strategies × classifiers` sharing one MI and one
/// STS configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub scorers: Vec<ScorerChoice>,
    pub strategies: Vec<SelectionConfig>,
    pub classifiers: Vec<ClassifierSpec>,
    pub mi: MiConfig,
    pub sts: StsScoreConfig,
}

impl GridSpec {
    /// Grid points in scorer-major order.
    pub fn points(&self) -> Vec<PipelineSpec> {
        let mut out = Vec::new();
        for s in &self.scorers {
            let scorer = match s {
                ScorerChoice::Mi => ScorerKind::Mi { mi: self.mi },
                ScorerChoice::Sts => ScorerKind::Sts { sts: self.sts.clone() },
                ScorerChoice::Combined { alpha } => ScorerKind::Combined {
                    alpha: *alpha,
                    mi: self.mi,
                    sts: self.sts.clone(),
                },
            };
            for sel in &self.strategies {
                for clf in &self.classifiers {
                    out.push(PipelineSpec {
                        scorer: scorer.clone(),
                        selection: *sel,
                        classifier: *clf,
                    });
                }
            }
        }
        out
    }
}

/// Relevance vector and optional redundancy matrix of one score family.
type Part = (Vec<f64>, Option<Vec<Vec<f64>>>);

/// MI and STS parts computed once per training matrix and recombined for
/// every scorer kind that shares their configuration.
struct ScoreCache {
    names: Vec<String>,
    mi: Option<(MiConfig, Part)>,
    sts: Option<(StsScoreConfig, Part)>,
    provenance: Option<String>,
}

impl ScoreCache {
    fn build(
        fm: &FeatureMatrix,
        labels: &[bool],
        specs: &[PipelineSpec],
        embeddings: Option<&EmbeddingSource>,
    ) -> Result<ScoreCache, EvalError> {
        let mut mi_cfg = None;
        let mut sts_cfg = None;
        let (mut mi_red, mut sts_red) = (false, false);
        for s in specs {
            let red = s.selection.needs_redundancy();
            match &s.scorer {
                ScorerKind::Mi { mi } => {
                    mi_cfg.get_or_insert(*mi);
                    mi_red |= red;
                }
                ScorerKind::Sts { sts } => {
                    sts_cfg.get_or_insert_with(|| sts.clone());
                    sts_red |= red;
                }
                ScorerKind::Combined { mi, sts, .. } => {
                    mi_cfg.get_or_insert(*mi);
                    sts_cfg.get_or_insert_with(|| sts.clone());
                    mi_red |= red;
                    sts_red |= red;
                }
            }
        }
        let part = |kind: ScorerKind, red: bool| -> Result<Part, EvalError> {
            let scorer = Scorer::new(&kind, embeddings);
            let rel = scoring::relevance_scores(fm, labels, scorer)?;
            let red = if red { Some(scoring::redundancy_matrix(fm, scorer)?) } else { None };
            Ok((rel, red))
        };
        let mi = match mi_cfg {
            Some(cfg) => {
                Some((cfg, part(ScorerKind::Mi { mi: cfg }, mi_red)?))
            }
            None => None,
        };
        let sts = match sts_cfg {
            Some(cfg) => {
                let p = part(ScorerKind::Sts { sts: cfg.clone() }, sts_red)?;
                Some((cfg, p))
            }
            None => None,
        };
        Ok(ScoreCache {
            names: fm.feature_names().to_vec(),
            mi,
            sts,
            provenance: embeddings.map(EmbeddingSource::provenance),
        })
    }

    fn compose(&self, kind: &ScorerKind) -> Option<ScoreSet> {
        let mi_part = |cfg: &MiConfig| self.mi.as_ref().filter(|(c, _)| c == cfg).map(|(_, p)| p);
        let sts_part = |cfg: &StsScoreConfig| self.sts.as_ref().filter(|(c, _)| c == cfg).map(|(_, p)| p);
        let (relevance, redundancy) = match kind {
            ScorerKind::Mi { mi } => {
                let (r, m) = mi_part(mi)?;
                (r.clone(), m.clone())
            }
            ScorerKind::Sts { sts } => {
                let (r, m) = sts_part(sts)?;
                (r.clone(), m.clone())
            }
            ScorerKind::Combined { alpha, mi, sts } => {
                let (mr, mm) = mi_part(mi)?;
                let (sr, sm) = sts_part(sts)?;
                let rel = mr.iter().zip(sr).map(|(m, s)| m + alpha * s).collect();
                let red = match (mm, sm) {
                    (Some(mm), Some(sm)) => Some(
                        mm.iter()
                            .zip(sm)
                            .map(|(a, b)| a.iter().zip(b).map(|(m, s)| m + alpha * s).collect())
                            .collect(),
                    ),
                    _ => None,
                };
                (rel, red)
            }
        };
        Some(ScoreSet {
            feature_names: self.names.clone(),
            relevance,
            redundancy,
            scorer: ScorerDescriptor {
                kind: kind.clone(),
                embedding_provenance: self.provenance.clone(),
            },
        })
    }
}

/// Preprocessing plan, selected features and classifier fitted on one training set.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub spec: PipelineSpec,
    pub plan: PreprocessPlan,
    pub scores: ScoreSet,
    pub selection: SelectionResult,
    pub classifier: Classifier,
    pub warnings: Vec<String>,
}

impl FittedPipeline {
    pub fn predict_proba(&self, ds: &Dataset) -> Result<Vec<f64>, EvalError> {
        let pre = apply_preprocess(&self.plan, ds)?;
        Ok(self.predict_matrix(&pre.matrix))
    }

    fn predict_matrix(&self, fm: &FeatureMatrix) -> Vec<f64> {
        self.classifier.predict_proba(&fm.select_features(&self.selection.selected))
    }
}

struct PreparedFold {
    plan: PreprocessPlan,
    train: FeatureMatrix,
    warnings: Vec<String>,
}

fn prepare(train: &Dataset) -> Result<PreparedFold, EvalError> {
    let plan = fit_preprocess(train)?;
    let pre = apply_preprocess(&plan, train)?;
    Ok(PreparedFold {
        plan,
        train: pre.matrix,
        warnings: pre.warnings,
    })
}

fn fit_from_cache(
    fold: &PreparedFold,
    labels: &[bool],
    spec: &PipelineSpec,
    cache: &ScoreCache,
    embeddings: Option<&EmbeddingSource>,
) -> Result<FittedPipeline, EvalError> {
    let selection_cfg = spec.clamped_selection(fold.train.n_features());
    let scores = match cache.compose(&spec.scorer) {
        Some(s) => s,
        None => scoring::score(
            &fold.train,
            labels,
            Scorer::new(&spec.scorer, embeddings),
            selection_cfg.needs_redundancy(),
        )?,
    };
    let selection = select(&scores, &selection_cfg)?;
    let classifier = Classifier::fit(&spec.classifier, &fold.train.select_features(&selection.selected), labels)?;
    Ok(FittedPipeline {
        spec: spec.clone(),
        plan: fold.plan.clone(),
        scores,
        selection,
        classifier,
        warnings: fold.warnings.clone(),
    })
}

/// Fits preprocessing, scoring, selection and the classifier on `train`.
pub fn fit_pipeline(
    train: &Dataset,
    labels: &[bool],
    spec: &PipelineSpec,
    embeddings: Option<&EmbeddingSource>,
) -> Result<FittedPipeline, EvalError> {
    if labels.len() != train.row_count() {
        return Err(EvalError::LengthMismatch(labels.len(), train.row_count()));
    }
    let fold = prepare(train)?;
    let specs = std::slice::from_ref(spec);
    let cache = ScoreCache::build(&fold.train, labels, specs, embeddings)?;
    fit_from_cache(&fold, labels, spec, &cache, embeddings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub fold_scores: Vec<f64>,
    /// Selected feature names per fold, in selection order.
    pub fold_selections: Vec<Vec<String>>,
}

impl CvOutcome {
    pub fn mean(&self) -> f64 {
        self.fold_scores.iter().sum::<f64>() / self.fold_scores.len() as f64
    }
}

fn take(labels: &[bool], rows: &[usize]) -> Vec<bool> {
    rows.iter().map(|&r| labels[r]).collect()
}

/// Runs every spec over the same folds. Returns `[spec][fold]` outcomes.
fn cv_many(
    train: &Dataset,
    labels: &[bool],
    specs: &[PipelineSpec],
    plan: &CvPlan,
    embeddings: Option<&EmbeddingSource>,
) -> Result<Vec<CvOutcome>, EvalError> {
    if labels.len() != train.row_count() {
        return Err(EvalError::LengthMismatch(labels.len(), train.row_count()));
    }
    let folds = stratified_folds(labels, plan)?;
    let per_fold: Vec<Vec<(f64, Vec<String>)>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, val_rows)| {
            let train_rows: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let fold_labels = take(labels, &train_rows);
            let val_labels = take(labels, val_rows);
            let fold = prepare(&train.select_rows(&train_rows))?;
            let val = apply_preprocess(&fold.plan, &train.select_rows(val_rows))?.matrix;
            let cache = ScoreCache::build(&fold.train, &fold_labels, specs, embeddings)?;
            specs
                .par_iter()
                .map(|spec| {
                    let fitted = fit_from_cache(&fold, &fold_labels, spec, &cache, embeddings)?;
                    let score = auroc(&fitted.predict_matrix(&val), &val_labels)?;
                    Ok((score, fitted.selection.selected_names()))
                })
                .collect::<Result<Vec<_>, EvalError>>()
        })
        .collect::<Result<_, EvalError>>()?;

    Ok((0..specs.len())
        .map(|s| CvOutcome {
            fold_scores: per_fold.iter().map(|f| f[s].0).collect(),
            fold_selections: per_fold.iter().map(|f| f[s].1.clone()).collect(),
        })
        .collect())
}

/// Flat k-fold CV of one pipeline. Preprocessing, scoring and selection are
/// fitted on the fold-training rows only; returns validation AUROC per fold.
pub fn cross_validate(
    train: &Dataset,
    labels: &[bool],
    spec: &PipelineSpec,
    plan: &CvPlan,
    embeddings: Option<&EmbeddingSource>,
) -> Result<CvOutcome, EvalError> {
    Ok(cv_many(train, labels, std::slice::from_ref(spec), plan, embeddings)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenConfig {
    pub scorer: String,
    pub scorer_config: ScorerKind,
    pub selection: SelectionConfig,
    pub classifier: ClassifierSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointSummary {
    pub scorer: String,
    pub selection: String,
    pub classifier: String,
    pub mean_cv_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub test_fraction: f64,
    pub folds: usize,
    pub seeds: (u64, u64),
    pub stratified: bool,
    pub n_train: usize,
    pub n_test: usize,
}

/// Final metrics of the chosen configuration, refitted on the full training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_auroc: f64,
    pub train_auroc: f64,
    /// train − test
    pub delta_auroc: f64,
    pub test_auprc: f64,
    pub train_auprc: f64,
    pub delta_auprc: f64,
    pub cv_mean_auroc: f64,
    pub fold_scores: Vec<f64>,
    pub chosen: ChosenConfig,
    pub selection: SelectionResult,
    pub selected_features: Vec<String>,
    pub grid: Vec<GridPointSummary>,
    pub protocol: ProtocolSummary,
    pub warnings: Vec<String>,
    pub runtime_seconds: f64,
}

/// Evaluates every grid point with flat CV, picks the best mean validation
/// AUROC (first in grid order on ties), refits it on the full training split
/// and reports train and test metrics.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    train: &Dataset,
    train_labels: &[bool],
    test: &Dataset,
    test_labels: &[bool],
    grid: &[PipelineSpec],
    plan: &CvPlan,
    embeddings: Option<&EmbeddingSource>,
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let outcomes = cv_many(train, train_labels, grid, plan, embeddings)?;
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.mean() > outcomes[best].mean() {
            best = i;
        }
    }
    let spec = &grid[best];
    let fitted = fit_pipeline(train, train_labels, spec, embeddings)?;
    let train_pred = fitted.predict_proba(train)?;
    let test_pre = apply_preprocess(&fitted.plan, test)?;
    let test_pred = fitted.predict_matrix(&test_pre.matrix);

    let train_auroc = auroc(&train_pred, train_labels)?;
    let test_auroc = auroc(&test_pred, test_labels)?;
    let train_auprc = auprc(&train_pred, train_labels)?;
    let test_auprc = auprc(&test_pred, test_labels)?;

    let mut warnings = fitted.warnings.clone();
    warnings.extend(test_pre.warnings);

    Ok(EvalReport {
        test_auroc,
        train_auroc,
        delta_auroc: train_auroc - test_auroc,
        test_auprc,
        train_auprc,
        delta_auprc: train_auprc - test_auprc,
        cv_mean_auroc: outcomes[best].mean(),
        fold_scores: outcomes[best].fold_scores.clone(),
        chosen: ChosenConfig {
            scorer: spec.scorer.label(),
            scorer_config: spec.scorer.clone(),
            selection: spec.selection,
            classifier: spec.classifier,
            alpha: match spec.scorer {
                ScorerKind::Combined { alpha, .. } => Some(alpha),
                _ => None,
            },
        },
        selected_features: fitted.selection.selected_names(),
        selection: fitted.selection,
        grid: grid
            .iter()
            .zip(&outcomes)
            .map(|(s, o)| GridPointSummary {
                scorer: s.scorer.label(),
                selection: s.selection.label(),
                classifier: s.classifier.label(),
                mean_cv_auroc: o.mean(),
            })
            .collect(),
        protocol: ProtocolSummary {
            test_fraction: plan.test_fraction,
            folds: plan.folds,
            seeds: plan.seeds,
            stratified: plan.stratified,
            n_train: train.row_count(),
            n_test: test.row_count(),
        },
        warnings,
        runtime_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Splits `ds` with `plan`, then runs [`grid_search`].
pub fn evaluate(
    ds: &Dataset,
    labels: &[bool],
    grid: &[PipelineSpec],
    plan: &CvPlan,
    embeddings: Option<&EmbeddingSource>,
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    if labels.len() != ds.row_count() {
        return Err(EvalError::LengthMismatch(labels.len(), ds.row_count()));
    }
    let (train_rows, test_rows) = split_train_test(labels, plan)?;
    let mut report = grid_search(
        &ds.select_rows(&train_rows),
        &take(labels, &train_rows),
        &ds.select_rows(&test_rows),
        &take(labels, &test_rows),
        grid,
        plan,
        embeddings,
    )?;
    report.runtime_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// `informative` features shifted by the label, `noise` pure noise.
    fn table(n: usize, informative: usize, noise: usize, seed: u64) -> (Dataset, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let mut names = Vec::new();
        let mut cols = Vec::new();
        for j in 0..informative + noise {
            names.push(format!("f{j}"));
            let shift = if j < informative { 1.5 } else { 0.0 };
            cols.push(
                labels
                    .iter()
                    .map(|&l| shift * f64::from(u8::from(l)) + rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
        }
        (Dataset::from_feature_matrix(&FeatureMatrix::from_columns(names, cols)), labels)
    }

    fn mi_spec(n: usize) -> PipelineSpec {
        PipelineSpec {
            scorer: ScorerKind::Mi { mi: MiConfig::default() },
            selection: SelectionConfig::TopN { n },
            classifier: ClassifierSpec::Gnb,
        }
    }

    #[test]
    fn cv_returns_one_score_per_fold() {
        let (ds, labels) = table(100, 3, 5, 1);
        let out = cross_validate(&ds, &labels, &mi_spec(3), &CvPlan::default(), None).unwrap();
        assert_eq!(out.fold_scores.len(), 5);
        assert!(out.mean() > 0.75, "{:?}", out.fold_scores);
        for sel in &out.fold_selections {
            assert_eq!(sel.len(), 3);
        }
    }

    #[test]
    fn null_features_score_near_chance() {
        let mut means = Vec::new();
        for seed in 0..6 {
            let (ds, _) = table(200, 0, 6, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let labels: Vec<bool> = (0..200).map(|_| rng.random_bool(0.5)).collect();
            let out = cross_validate(&ds, &labels, &mi_spec(3), &CvPlan::default(), None).unwrap();
            means.push(out.mean());
        }
        let avg = means.iter().sum::<f64>() / means.len() as f64;
        assert!((0.35..=0.65).contains(&avg), "{means:?}");
    }

    #[test]
    fn grid_picks_dominant_point_and_is_deterministic() {
        let (ds, labels) = table(150, 2, 8, 2);
        let noise_only = PipelineSpec {
            scorer: ScorerKind::Sts { sts: StsScoreConfig::new(&["target"]) },
            selection: SelectionConfig::TopN { n: 2 },
            classifier: ClassifierSpec::Gnb,
        };
        // STS store ranks two noise features highest.
        let mut store = EmbeddingStore::new(2, "grid-test");
        store.insert("target", vec![1.0, 0.0]).unwrap();
        for j in 0..10 {
            let v = if j >= 8 { vec![1.0, 0.01] } else { vec![0.0, 1.0] };
            store.insert(format!("f{j}"), v).unwrap();
        }
        let src = EmbeddingSource::Store(store);
        let grid = vec![noise_only, mi_spec(2)];
        let a = evaluate(&ds, &labels, &grid, &CvPlan::default(), Some(&src)).unwrap();
        assert_eq!(a.chosen.scorer, "mi");
        assert_eq!(a.grid.len(), 2);
        assert!(a.grid[1].mean_cv_auroc > a.grid[0].mean_cv_auroc);
        for m in [a.test_auroc, a.train_auroc, a.test_auprc, a.train_auprc] {
            assert!((0.0..=1.0).contains(&m));
        }
        let mut b = evaluate(&ds, &labels, &grid, &CvPlan::default(), Some(&src)).unwrap();
        b.runtime_seconds = a.runtime_seconds;
        assert_eq!(a, b);
    }

    #[test]
    fn single_point_grid() {
        let (ds, labels) = table(100, 2, 2, 3);
        let r = evaluate(&ds, &labels, &[mi_spec(2)], &CvPlan::default(), None).unwrap();
        assert_eq!(r.chosen.scorer_config, mi_spec(2).scorer);
        assert_eq!(r.fold_scores.len(), 5);
        assert_eq!(r.selected_features.len(), 2);
        assert!(matches!(evaluate(&ds, &labels, &[], &CvPlan::default(), None), Err(EvalError::EmptyGrid)));
    }

    #[test]
    fn cache_composition_matches_direct_scoring() {
        let (ds, labels) = table(60, 2, 3, 4);
        let fm = apply_preprocess(&fit_preprocess(&ds).unwrap(), &ds).unwrap().matrix;
        let mut store = EmbeddingStore::new(3, "t");
        store.insert("target", vec![1.0, 0.2, 0.0]).unwrap();
        for j in 0..5 {
            store.insert(format!("f{j}"), vec![j as f64, 1.0, -0.5]).unwrap();
        }
        let src = EmbeddingSource::Store(store);
        let kind = ScorerKind::Combined {
            alpha: 0.7,
            mi: MiConfig::default(),
            sts: StsScoreConfig::new(&["target"]),
        };
        let spec = PipelineSpec {
            scorer: kind.clone(),
            selection: SelectionConfig::Mrmr { n: 3 },
            classifier: ClassifierSpec::Gnb,
        };
        let cache = ScoreCache::build(&fm, &labels, std::slice::from_ref(&spec), Some(&src)).unwrap();
        let composed = cache.compose(&kind).unwrap();
        let direct = scoring::score(&fm, &labels, Scorer::new(&kind, Some(&src)), true).unwrap();
        assert_eq!(composed, direct);
    }

    #[test]
    fn empty_threshold_selection_predicts_constant() {
        let (ds, labels) = table(100, 0, 4, 5);
        let spec = PipelineSpec {
            scorer: ScorerKind::Mi { mi: MiConfig::default() },
            selection: SelectionConfig::StdDev { k: 1e9 },
            classifier: ClassifierSpec::Knn { n_neighbors: 5 },
        };
        let out = cross_validate(&ds, &labels, &spec, &CvPlan::default(), None).unwrap();
        assert!(out.fold_scores.iter().all(|&s| s == 0.5));
    }
}
