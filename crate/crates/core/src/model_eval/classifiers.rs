use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::tabular::FeatureMatrix;

const VAR_SMOOTHING: f64 = 1e-9;

/// Gaussian naive Bayes for a binary label. Index 0 is the negative class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

pub fn train_gnb(fm: &FeatureMatrix, labels: &[bool]) -> Result<GnbModel, EvalError> {
    if labels.len() != fm.n_rows() {
        return Err(EvalError::LengthMismatch(labels.len(), fm.n_rows()));
    }
    let counts = [
        labels.iter().filter(|&&l| !l).count(),
        labels.iter().filter(|&&l| l).count(),
    ];
    if counts[0] == 0 || counts[1] == 0 {
        return Err(EvalError::SingleClassTraining);
    }
    let total = labels.len() as f64;
    let p = fm.n_features();

    let mut max_var = 0.0f64;
    for col in fm.columns() {
        let m = col.iter().sum::<f64>() / total;
        max_var = max_var.max(col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / total);
    }
    let floor = if max_var > 0.0 { VAR_SMOOTHING * max_var } else { VAR_SMOOTHING };

    let mut means = [vec![0.0; p], vec![0.0; p]];
    let mut variances = [vec![0.0; p], vec![0.0; p]];
    for (j, col) in fm.columns().iter().enumerate() {
        for c in 0..2 {
            let n = counts[c] as f64;
            let class_vals = || col.iter().zip(labels).filter(move |(_, &l)| usize::from(l) == c).map(|(v, _)| *v);
            let mean = class_vals().sum::<f64>() / n;
            let var = class_vals().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means[c][j] = mean;
            variances[c][j] = var.max(floor);
        }
    }
    Ok(GnbModel {
        priors: [counts[0] as f64 / total, counts[1] as f64 / total],
        means,
        variances,
    })
}

impl GnbModel {
    fn joint_log_likelihood(&self, x: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut lp = self.priors[c].ln();
            for ((xj, m), v) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                lp -= 0.5 * (std::f64::consts::TAU * v).ln() + (xj - m).powi(2) / (2.0 * v);
            }
            *slot = lp;
        }
        out
    }

    /// P(positive | x) for one row, computed in log space.
    pub fn posterior(&self, x: &[f64]) -> f64 {
        let [l0, l1] = self.joint_log_likelihood(x);
        let top = l0.max(l1);
        let (e0, e1) = ((l0 - top).exp(), (l1 - top).exp());
        e1 / (e0 + e1)
    }
}

pub fn gnb_predict_proba(model: &GnbModel, fm: &FeatureMatrix) -> Vec<f64> {
    (0..fm.n_rows()).map(|r| model.posterior(&fm.row(r))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    rows: Vec<Vec<f64>>,
    labels: Vec<bool>,
    pub n_neighbors: usize,
}

pub fn train_knn(fm: &FeatureMatrix, labels: &[bool], n_neighbors: usize) -> Result<KnnModel, EvalError> {
    if fm.n_rows() == 0 {
        return Err(EvalError::EmptyTraining);
    }
    if labels.len() != fm.n_rows() {
        return Err(EvalError::LengthMismatch(labels.len(), fm.n_rows()));
    }
    if n_neighbors == 0 || n_neighbors > fm.n_rows() {
        return Err(EvalError::BadNeighbors {
            n_neighbors,
            rows: fm.n_rows(),
        });
    }
    Ok(KnnModel {
        rows: (0..fm.n_rows()).map(|r| fm.row(r)).collect(),
        labels: labels.to_vec(),
        n_neighbors,
    })
}

impl KnnModel {
    /// Positive fraction among the nearest training rows; distance ties go to
    /// the lower training index.
    pub fn posterior(&self, x: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let hits = d[..self.n_neighbors].iter().filter(|(_, i)| self.labels[*i]).count();
        hits as f64 / self.n_neighbors as f64
    }
}

pub fn knn_predict_proba(model: &KnnModel, fm: &FeatureMatrix) -> Vec<f64> {
    (0..fm.n_rows()).map(|r| model.posterior(&fm.row(r))).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierSpec {
    #[default]
    Gnb,
    Knn { n_neighbors: usize },
}

impl ClassifierSpec {
    pub fn label(&self) -> String {
        match self {
            ClassifierSpec::Gnb => "gnb".into(),
            ClassifierSpec::Knn { n_neighbors } => format!("knn(k={n_neighbors})"),
        }
    }
}

/// A trained classifier. With no input features it predicts the training
/// positive rate for every row.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Gnb(GnbModel),
    Knn(KnnModel),
    Constant(f64),
}

impl Classifier {
    pub fn fit(spec: &ClassifierSpec, fm: &FeatureMatrix, labels: &[bool]) -> Result<Classifier, EvalError> {
        if fm.n_features() == 0 {
            if labels.is_empty() {
                return Err(EvalError::EmptyTraining);
            }
            let rate = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
            return Ok(Classifier::Constant(rate));
        }
        Ok(match spec {
            ClassifierSpec::Gnb => Classifier::Gnb(train_gnb(fm, labels)?),
            ClassifierSpec::Knn { n_neighbors } => {
                Classifier::Knn(train_knn(fm, labels, (*n_neighbors).min(fm.n_rows()))?)
            }
        })
    }

    pub fn predict_proba(&self, fm: &FeatureMatrix) -> Vec<f64> {
        match self {
            Classifier::Gnb(m) => gnb_predict_proba(m, fm),
            Classifier::Knn(m) => knn_predict_proba(m, fm),
            Classifier::Constant(p) => vec![*p; fm.n_rows()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn one_col(vals: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_columns(vec!["x".into()], vec![vals.to_vec()])
    }

    #[test]
    fn symmetric_classes_give_half_at_midpoint() {
        let fm = one_col(&[-2.0, 0.0, 0.0, 2.0]);
        let m = train_gnb(&fm, &[false, false, true, true]).unwrap();
        assert_eq!(m.means, [vec![-1.0], vec![1.0]]);
        assert!((m.posterior(&[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn separated_classes_near_certain() {
        // means 0 and 10, variance 1, equal priors
        let fm = one_col(&[-1.0, 1.0, 9.0, 11.0]);
        let m = train_gnb(&fm, &[false, false, true, true]).unwrap();
        assert!(m.posterior(&[10.0]) > 0.999);
        // closed form: 1 / (1 + exp(-(10² − 0²)/2)) at x = 10
        let closed = 1.0 / (1.0 + (-50.0f64).exp());
        assert!((m.posterior(&[10.0]) - closed).abs() < 1e-12);
    }

    #[test]
    fn prior_only_when_likelihoods_match() {
        let mut vals = vec![-1.0, 1.0];
        let mut labels = vec![true, true];
        for _ in 0..9 {
            vals.extend([-1.0, 1.0]);
            labels.extend([false, false]);
        }
        let m = train_gnb(&one_col(&vals), &labels).unwrap();
        assert!((m.posterior(&[0.3]) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            train_gnb(&one_col(&[1.0, 2.0]), &[true, true]),
            Err(EvalError::SingleClassTraining)
        ));
    }

    #[test]
    fn constant_column_survives_variance_floor() {
        let fm = FeatureMatrix::from_columns(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0, 3.0]],
        );
        let m = train_gnb(&fm, &[false, false, true, true]).unwrap();
        assert!(m.variances.iter().flatten().all(|&v| v > 0.0));
        let p = m.posterior(&[1.0, 2.5]);
        assert!(p.is_finite() && p > 0.5);
    }

    #[test]
    fn log_space_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = 30;
        let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..rows).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let labels: Vec<bool> = (0..rows).map(|i| i % 3 == 0).collect();
        let fm = FeatureMatrix::from_columns(vec!["a".into(), "b".into(), "c".into()], cols);
        let m = train_gnb(&fm, &labels).unwrap();
        for r in 0..rows {
            let x = fm.row(r);
            let joint = |c: usize| {
                let mut p = m.priors[c];
                for j in 0..3 {
                    let v = m.variances[c][j];
                    p *= (-(x[j] - m.means[c][j]).powi(2) / (2.0 * v)).exp() / (std::f64::consts::TAU * v).sqrt();
                }
                p
            };
            let naive = joint(1) / (joint(0) + joint(1));
            assert!((m.posterior(&x) - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn knn_examples() {
        let fm = one_col(&[0.0, 1.0, 2.0, 10.0]);
        let labels = [true, true, false, false];
        let m1 = train_knn(&fm, &labels, 1).unwrap();
        assert_eq!(knn_predict_proba(&m1, &fm), vec![1.0, 1.0, 0.0, 0.0]);
        let all = train_knn(&fm, &labels, 4).unwrap();
        assert_eq!(all.posterior(&[100.0]), 0.5);
        let m3 = train_knn(&fm, &labels, 3).unwrap();
        assert!((m3.posterior(&[0.9]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m1.posterior(&[0.5]), 1.0);
        assert!(matches!(train_knn(&fm, &labels, 5), Err(EvalError::BadNeighbors { .. })));
        let empty = FeatureMatrix::from_columns(vec!["x".into()], vec![vec![]]);
        assert!(matches!(train_knn(&empty, &[], 1), Err(EvalError::EmptyTraining)));
    }

    #[test]
    fn knn_distance_ties_prefer_lower_index() {
        let fm = one_col(&[-1.0, 1.0]);
        let m = train_knn(&fm, &[false, true], 1).unwrap();
        assert_eq!(m.posterior(&[0.0]), 0.0);
    }
}
