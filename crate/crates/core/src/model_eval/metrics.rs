//! Ranking metrics for binary labels.

use super::EvalError;

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve: the probability that a random positive outscores
/// a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    // Walk groups from the top: every positive in a group beats all negatives
    // below it and ties with the negatives inside it.
    let mut neg_below = neg as f64;
    let mut concordant = 0.0;
    for g in tie_groups(scores) {
        let gp = g.iter().filter(|&&i| labels[i]).count() as f64;
        let gn = g.len() as f64 - gp;
        neg_below -= gn;
        concordant += gp * neg_below + 0.5 * gp * gn;
    }
    Ok(concordant / (pos as f64 * neg as f64))
}

/// Average precision: Σ (R_n − R_{n−1}) · P_n over descending score thresholds,
/// without interpolation.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    for g in tie_groups(scores) {
        tp += g.iter().filter(|&&i| labels[i]).count();
        seen += g.len();
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}
