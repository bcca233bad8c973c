use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ColumnData, ColumnKind, Dataset, TabularError, Timestamp};

/// Fitted transform for one source column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    Numeric {
        impute_mean: f64,
        /// Euclidean norm of the imputed training column, or 1 when that column is all zero.
        l2_norm: f64,
    },
    DateTime {
        impute_median: Timestamp,
        min: Timestamp,
        max: Timestamp,
    },
    Categorical {
        impute_mode: String,
        categories: Vec<String>,
    },
}

impl ColumnTransform {
    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnTransform::Numeric { .. } => ColumnKind::Numeric,
            ColumnTransform::DateTime { .. } => ColumnKind::DateTime,
            ColumnTransform::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    fn width(&self) -> usize {
        match self {
            ColumnTransform::Categorical { categories, .. } => categories.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnPlan {
    pub name: String,
    pub transform: ColumnTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub columns: Vec<ColumnPlan>,
}

impl PreprocessPlan {
    /// Output feature names, with one-hot blocks expanded as `<column>_<category>`.
    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match &c.transform {
                ColumnTransform::Categorical { categories, .. } => {
                    categories.iter().map(|cat| format!("{}_{}", c.name, cat)).collect()
                }
                _ => vec![c.name.clone()],
            })
            .collect()
    }
}

/// Dense numeric features, stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    /// Source column of each feature; differs from the feature name only for one-hot blocks.
    source_columns: Vec<String>,
    columns: Vec<Vec<f64>>,
    rows: usize,
    labels: Option<Vec<bool>>,
}

impl FeatureMatrix {
    /// Builds a matrix from named columns of equal length.
    pub fn from_columns(feature_names: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        let source_columns = feature_names.clone();
        Self::with_sources(feature_names, source_columns, columns)
    }

    pub fn with_sources(feature_names: Vec<String>, source_columns: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        assert_eq!(feature_names.len(), columns.len(), "one name per column");
        assert_eq!(source_columns.len(), columns.len(), "one source per column");
        let rows = columns.first().map(Vec::len).unwrap_or(0);
        assert!(columns.iter().all(|c| c.len() == rows), "ragged feature matrix");
        FeatureMatrix {
            feature_names,
            source_columns,
            columns,
            rows,
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Self {
        assert_eq!(labels.len(), self.rows, "one label per row");
        self.labels = Some(labels);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn source_columns(&self) -> &[String] {
        &self.source_columns
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            source_columns: self.source_columns.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            rows: rows.len(),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
        }
    }

    pub fn select_features(&self, features: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: features.iter().map(|&j| self.feature_names[j].clone()).collect(),
            source_columns: features.iter().map(|&j| self.source_columns[j].clone()).collect(),
            columns: features.iter().map(|&j| self.columns[j].clone()).collect(),
            rows: self.rows,
            labels: self.labels.clone(),
        }
    }

    /// Writes the matrix as CSV, with an optional trailing `label` column.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        if self.labels.is_some() {
            header.push("label");
        }
        w.write_record(&header)?;
        for r in 0..self.rows {
            let mut rec: Vec<String> = self.columns.iter().map(|c| c[r].to_string()).collect();
            if let Some(l) = &self.labels {
                rec.push(u8::from(l[r]).to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Output of [`apply_preprocess`]: the matrix plus any non-fatal warnings
/// (currently unseen categorical levels).
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub matrix: FeatureMatrix,
    pub warnings: Vec<String>,
}

fn lower_median(mut values: Vec<Timestamp>) -> Timestamp {
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

fn modal_value(values: &[&str]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
    let mut best: Option<(&str, usize)> = None;
    for (v, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((v, n));
        }
    }
    best.map(|(v, _)| v.to_owned()).unwrap_or_default()
}

/// Fits imputation and scaling statistics on `train`. The participant key is not a feature.
///
/// Columns whose training cells are all null get sentinel imputations
/// (0.0, the epoch, or the literal `"NA"`).
pub fn fit_preprocess(train: &Dataset) -> Result<PreprocessPlan, TabularError> {
    let mut columns = Vec::new();
    for col in train.feature_columns() {
        if col.data.is_empty() {
            return Err(TabularError::EmptyColumn(col.name.clone()));
        }
        let transform = match &col.data {
            ColumnData::Numeric(v) => {
                let present: Vec<f64> = v.iter().flatten().copied().collect();
                let mean = if present.is_empty() {
                    0.0
                } else {
                    present.iter().sum::<f64>() / present.len() as f64
                };
                let norm = v.iter().map(|x| x.unwrap_or(mean).powi(2)).sum::<f64>().sqrt();
                ColumnTransform::Numeric {
                    impute_mean: mean,
                    l2_norm: if norm > 0.0 { norm } else { 1.0 },
                }
            }
            ColumnData::DateTime(v) => {
                let present: Vec<Timestamp> = v.iter().flatten().copied().collect();
                if present.is_empty() {
                    ColumnTransform::DateTime {
                        impute_median: Timestamp(0),
                        min: Timestamp(0),
                        max: Timestamp(0),
                    }
                } else {
                    let min = *present.iter().min().unwrap();
                    let max = *present.iter().max().unwrap();
                    ColumnTransform::DateTime {
                        impute_median: lower_median(present),
                        min,
                        max,
                    }
                }
            }
            ColumnData::Categorical(v) => {
                let present: Vec<&str> = v.iter().flatten().map(String::as_str).collect();
                let mode = if present.is_empty() {
                    "NA".to_owned()
                } else {
                    modal_value(&present)
                };
                let mut categories: Vec<String> = present.iter().map(|s| s.to_string()).collect();
                categories.push(mode.clone());
                categories.sort();
                categories.dedup();
                ColumnTransform::Categorical {
                    impute_mode: mode,
                    categories,
                }
            }
        };
        columns.push(super::ColumnPlan {
            name: col.name.clone(),
            transform,
        });
    }
    Ok(PreprocessPlan { columns })
}

/// Applies a fitted plan. Output features follow plan column order with
/// one-hot blocks expanded in category order.
pub fn apply_preprocess(plan: &PreprocessPlan, ds: &Dataset) -> Result<Preprocessed, TabularError> {
    let feature_cols: Vec<_> = ds.feature_columns().collect();
    if feature_cols.len() != plan.columns.len() {
        return Err(TabularError::PlanMismatch(format!(
            "plan has {} columns, data has {}",
            plan.columns.len(),
            feature_cols.len()
        )));
    }

    let rows = ds.row_count();
    let width: usize = plan.columns.iter().map(|c| c.transform.width()).sum();
    let mut names = Vec::with_capacity(width);
    let mut sources = Vec::with_capacity(width);
    let mut out = Vec::with_capacity(width);
    let mut warnings = Vec::new();

    for cp in &plan.columns {
        let col = ds
            .column(&cp.name)
            .ok_or_else(|| TabularError::PlanMismatch(format!("column {:?} missing from data", cp.name)))?;
        if col.kind() != cp.transform.kind() {
            return Err(TabularError::PlanMismatch(format!(
                "column {:?} is {}, plan expects {}",
                cp.name,
                col.kind(),
                cp.transform.kind()
            )));
        }
        match (&cp.transform, &col.data) {
            (ColumnTransform::Numeric { impute_mean, l2_norm }, ColumnData::Numeric(v)) => {
                names.push(cp.name.clone());
                sources.push(cp.name.clone());
                out.push(v.iter().map(|x| x.unwrap_or(*impute_mean) / l2_norm).collect());
            }
            (ColumnTransform::DateTime { impute_median, min, max }, ColumnData::DateTime(v)) => {
                let span = (max.0 - min.0) as f64;
                names.push(cp.name.clone());
                sources.push(cp.name.clone());
                out.push(
                    v.iter()
                        .map(|t| {
                            if span <= 0.0 {
                                return 0.5;
                            }
                            let t = t.unwrap_or(*impute_median);
                            ((t.0 - min.0) as f64 / span).clamp(0.0, 1.0)
                        })
                        .collect(),
                );
            }
            (ColumnTransform::Categorical { impute_mode, categories }, ColumnData::Categorical(v)) => {
                let mut block = vec![vec![0.0; rows]; categories.len()];
                for (r, cell) in v.iter().enumerate() {
                    let value = cell.as_deref().unwrap_or(impute_mode);
                    match categories.binary_search_by(|c| c.as_str().cmp(value)) {
                        Ok(k) => block[k][r] = 1.0,
                        Err(_) => warnings.push(format!(
                            "column {:?}, row {r}: unseen category {value:?} encoded as all zeros",
                            cp.name
                        )),
                    }
                }
                for cat in categories {
                    names.push(format!("{}_{}", cp.name, cat));
                    sources.push(cp.name.clone());
                }
                out.extend(block);
            }
            _ => unreachable!("kinds checked above"),
        }
    }

    let mut matrix = FeatureMatrix::with_sources(names, sources, out);
    matrix.rows = rows;
    Ok(Preprocessed { matrix, warnings })
}

#[cfg(test)]
mod tests {
    use super::super::Column;
    use super::*;

    fn ds(columns: Vec<Column>) -> Dataset {
        let n = columns[0].data.len();
        let mut all = vec![Column::new(
            "pid",
            ColumnData::Categorical((0..n).map(|i| Some(format!("p{i}"))).collect()),
        )];
        all.extend(columns);
        Dataset::new(all, "pid").unwrap()
    }

    fn cats(v: &[Option<&str>]) -> ColumnData {
        ColumnData::Categorical(v.iter().map(|s| s.map(str::to_owned)).collect())
    }

    #[test]
    fn numeric_mean_impute_and_l2() {
        let d = ds(vec![Column::new("x", ColumnData::Numeric(vec![Some(1.0), None, Some(3.0)]))]);
        let plan = fit_preprocess(&d).unwrap();
        let ColumnTransform::Numeric { impute_mean, l2_norm } = plan.columns[0].transform else {
            panic!()
        };
        assert_eq!(impute_mean, 2.0);
        assert!((l2_norm - 14f64.sqrt()).abs() < 1e-15);
        let fm = apply_preprocess(&plan, &d).unwrap().matrix;
        let s = 14f64.sqrt();
        let expect = [1.0 / s, 2.0 / s, 3.0 / s];
        for (a, b) in fm.column(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let norm: f64 = fm.column(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_numeric_uses_unit_norm() {
        let d = ds(vec![Column::new("z", ColumnData::Numeric(vec![Some(0.0), None]))]);
        let plan = fit_preprocess(&d).unwrap();
        assert_eq!(
            plan.columns[0].transform,
            ColumnTransform::Numeric { impute_mean: 0.0, l2_norm: 1.0 }
        );
    }

    #[test]
    fn categorical_mode_and_one_hot() {
        let d = ds(vec![Column::new("pain", cats(&[Some("Yes"), Some("No"), Some("Yes"), None]))]);
        let plan = fit_preprocess(&d).unwrap();
        assert_eq!(
            plan.columns[0].transform,
            ColumnTransform::Categorical {
                impute_mode: "Yes".into(),
                categories: vec!["No".into(), "Yes".into()]
            }
        );
        let fm = apply_preprocess(&plan, &d).unwrap().matrix;
        assert_eq!(fm.feature_names(), &["pain_No".to_owned(), "pain_Yes".to_owned()]);
        assert_eq!(fm.source_columns(), &["pain".to_owned(), "pain".to_owned()]);
        assert_eq!(fm.row(1), vec![1.0, 0.0]);
        assert_eq!(fm.row(3), vec![0.0, 1.0]);
    }

    #[test]
    fn mode_ties_break_lexicographically() {
        let d = ds(vec![Column::new("c", cats(&[Some("b"), Some("a"), Some("b"), Some("a")]))]);
        let plan = fit_preprocess(&d).unwrap();
        let ColumnTransform::Categorical { impute_mode, .. } = &plan.columns[0].transform else {
            panic!()
        };
        assert_eq!(impute_mode, "a");
    }

    #[test]
    fn unseen_category_is_zero_block_with_warning() {
        let train = ds(vec![Column::new("c", cats(&[Some("a"), Some("b")]))]);
        let test = ds(vec![Column::new("c", cats(&[Some("z"), Some("b")]))]);
        let plan = fit_preprocess(&train).unwrap();
        let out = apply_preprocess(&plan, &test).unwrap();
        assert_eq!(out.matrix.row(0), vec![0.0, 0.0]);
        assert_eq!(out.matrix.row(1), vec![0.0, 1.0]);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn datetime_median_min_max_and_scaling() {
        let t = |s: &str| Timestamp::parse_iso8601(s).unwrap();
        let (d1, d2, d3) = (t("2020-01-01"), t("2020-06-01"), t("2021-01-01"));
        let train = ds(vec![Column::new("when", ColumnData::DateTime(vec![Some(d1), Some(d3), None]))]);
        let plan = fit_preprocess(&train).unwrap();
        assert_eq!(
            plan.columns[0].transform,
            ColumnTransform::DateTime { impute_median: d1, min: d1, max: d3 }
        );
        let fm = apply_preprocess(&plan, &train).unwrap().matrix;
        assert_eq!(fm.column(0), &[0.0, 1.0, 0.0]);

        let test = ds(vec![Column::new(
            "when",
            ColumnData::DateTime(vec![Some(d2), Some(t("2030-01-01")), Some(t("1990-01-01"))]),
        )]);
        let fm = apply_preprocess(&plan, &test).unwrap().matrix;
        let expect = (d2.0 - d1.0) as f64 / (d3.0 - d1.0) as f64;
        assert_eq!(fm.column(0), &[expect, 1.0, 0.0]);
    }

    #[test]
    fn degenerate_datetime_is_half() {
        let t = Timestamp::parse_iso8601("2020-01-01").unwrap();
        let d = ds(vec![Column::new("when", ColumnData::DateTime(vec![Some(t), Some(t)]))]);
        let plan = fit_preprocess(&d).unwrap();
        assert_eq!(apply_preprocess(&plan, &d).unwrap().matrix.column(0), &[0.5, 0.5]);
    }

    #[test]
    fn empty_column_and_plan_mismatch() {
        let empty = ds(vec![Column::new("x", ColumnData::Numeric(vec![]))]);
        assert!(matches!(fit_preprocess(&empty), Err(TabularError::EmptyColumn(_))));

        let a = ds(vec![Column::new("x", ColumnData::Numeric(vec![Some(1.0)]))]);
        let b = ds(vec![Column::new("x", cats(&[Some("1")]))]);
        let plan = fit_preprocess(&a).unwrap();
        assert!(matches!(apply_preprocess(&plan, &b), Err(TabularError::PlanMismatch(_))));
        let c = ds(vec![Column::new("y", ColumnData::Numeric(vec![Some(1.0)]))]);
        assert!(matches!(apply_preprocess(&plan, &c), Err(TabularError::PlanMismatch(_))));
    }
}
