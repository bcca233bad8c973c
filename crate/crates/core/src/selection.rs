//! Feature selection over a [`ScoreSet`]: top-N, mean-plus-k-sigma threshold,
//! and greedy mRMR (difference form).
//!
//! Every strategy breaks ties by ascending feature index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::ScoreSet;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("asked for {n} features but only {available} exist")]
    NTooLarge { n: usize, available: usize },
    #[error("threshold selection needs at least 2 features, got {0}")]
    TooFewFeatures(usize),
    #[error("mRMR needs a redundancy matrix")]
    MissingRedundancy,
    #[error("n must be at least 1")]
    ZeroN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum SelectionConfig {
    TopN { n: usize },
    StdDev { k: f64 },
    Mrmr { n: usize },
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig::TopN { n: 20 }
    }
}

impl SelectionConfig {
    /// Threshold multiplier used for mean-pooled word-vector scorers, whose
    /// relevance scores have low spread.
    pub const WORD_VECTOR_K: f64 = 0.3;

    pub fn needs_redundancy(&self) -> bool {
        matches!(self, SelectionConfig::Mrmr { .. })
    }

    pub fn label(&self) -> String {
        match self {
            SelectionConfig::TopN { n } => format!("top_n(n={n})"),
            SelectionConfig::StdDev { k } => format!("std_dev(k={k})"),
            SelectionConfig::Mrmr { n } => format!("mrmr(n={n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step: usize,
    pub feature_name: String,
    pub score: f64,
    pub relevance: f64,
    pub redundancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    pub trace: Vec<SelectionStep>,
}

impl SelectionResult {
    fn from_ranked(order: Vec<usize>, names: &[String], relevance: &[f64]) -> Self {
        let trace = order
            .iter()
            .enumerate()
            .map(|(s, &i)| SelectionStep {
                step: s + 1,
                feature_name: names.get(i).cloned().unwrap_or_else(|| format!("feature_{i}")),
                score: relevance[i],
                relevance: relevance[i],
                redundancy: 0.0,
            })
            .collect();
        SelectionResult { selected: order, trace }
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.trace.iter().map(|s| s.feature_name.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Descending by value, then ascending by index.
fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

fn anonymous_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("feature_{i}")).collect()
}

pub fn select_top_n(relevance: &[f64], n: usize) -> Result<SelectionResult, SelectionError> {
    select_top_n_named(relevance, &anonymous_names(relevance.len()), n)
}

pub fn select_top_n_named(relevance: &[f64], names: &[String], n: usize) -> Result<SelectionResult, SelectionError> {
    if n == 0 {
        return Err(SelectionError::ZeroN);
    }
    if n > relevance.len() {
        return Err(SelectionError::NTooLarge {
            n,
            available: relevance.len(),
        });
    }
    let mut order = rank_desc(relevance);
    order.truncate(n);
    Ok(SelectionResult::from_ranked(order, names, relevance))
}

pub fn select_std_dev(relevance: &[f64], k: f64) -> Result<SelectionResult, SelectionError> {
    select_std_dev_named(relevance, &anonymous_names(relevance.len()), k)
}

/// Selects every feature with relevance strictly above `mean + k * sd`
/// (population standard deviation). May select nothing.
pub fn select_std_dev_named(relevance: &[f64], names: &[String], k: f64) -> Result<SelectionResult, SelectionError> {
    if relevance.len() < 2 {
        return Err(SelectionError::TooFewFeatures(relevance.len()));
    }
    let n = relevance.len() as f64;
    let mean = relevance.iter().sum::<f64>() / n;
    let sd = (relevance.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let cut = mean + k * sd;
    let order = rank_desc(relevance).into_iter().filter(|&i| relevance[i] > cut).collect();
    Ok(SelectionResult::from_ranked(order, names, relevance))
}

/// Greedy mRMR: start from the most relevant feature, then repeatedly add the
/// feature maximising `relevance − mean redundancy to the selected set`.
/// Step scores are not clamped and can be negative.
pub fn select_mrmr(scores: &ScoreSet, n: usize) -> Result<SelectionResult, SelectionError> {
    let redundancy = scores.redundancy.as_ref().ok_or(SelectionError::MissingRedundancy)?;
    let relevance = &scores.relevance;
    let p = relevance.len();
    if n == 0 {
        return Err(SelectionError::ZeroN);
    }
    if n > p {
        return Err(SelectionError::NTooLarge { n, available: p });
    }

    let mut selected = Vec::with_capacity(n);
    let mut trace = Vec::with_capacity(n);
    let mut chosen = vec![false; p];
    // Running sum of redundancy to the selected set, per candidate.
    let mut red_sum = vec![0.0; p];

    for step in 1..=n {
        let mut best: Option<(usize, f64, f64)> = None;
        for f in (0..p).filter(|&f| !chosen[f]) {
            let red = if selected.is_empty() {
                0.0
            } else {
                red_sum[f] / selected.len() as f64
            };
            let score = relevance[f] - red;
            let better = match best {
                None => true,
                Some((_, s, _)) => score.total_cmp(&s) == Ordering::Greater,
            };
            if better {
                best = Some((f, score, red));
            }
        }
        let (f, score, red) = best.expect("n <= feature count leaves a candidate");
        chosen[f] = true;
        selected.push(f);
        for (g, sum) in red_sum.iter_mut().enumerate() {
            if !chosen[g] {
                *sum += redundancy[g][f];
            }
        }
        trace.push(SelectionStep {
            step,
            feature_name: scores.feature_names[f].clone(),
            score,
            relevance: relevance[f],
            redundancy: red,
        });
    }
    Ok(SelectionResult { selected, trace })
}

/// Runs the configured strategy.
pub fn select(scores: &ScoreSet, cfg: &SelectionConfig) -> Result<SelectionResult, SelectionError> {
    match *cfg {
        SelectionConfig::TopN { n } => select_top_n_named(&scores.relevance, &scores.feature_names, n),
        SelectionConfig::StdDev { k } => select_std_dev_named(&scores.relevance, &scores.feature_names, k),
        SelectionConfig::Mrmr { n } => select_mrmr(scores, n),
    }
}
