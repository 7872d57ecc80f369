use crate::corpus::Label;
use crate::{Error, Result};

/// Soft vote: mean of per-segment dysarthric probabilities.
pub fn soft_vote(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Metric("speaker has no segments".into()));
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

fn check(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Metric("no scores".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    Ok(())
}

/// Area under the ROC curve from the Mann-Whitney statistic, ties
/// counting one half. Exact for the pairwise definition.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == Label::Dysarthric).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, using midranks for ties; integer
    // arithmetic keeps the result exact.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2.
        let pos_in_group = order[i..=j].iter().filter(|&&o| labels[o] == Label::Dysarthric).count() as u128;
        twice_rank_sum += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    // U = R - p(p+1)/2; AUC = U / (p n).
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Percentage of speakers classified correctly, predicting dysarthric when
/// the score is at least 0.5.
pub fn accuracy(scores: &[f64], labels: &[Label]) -> Result<f64> {
    check(scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= 0.5) == (l == Label::Dysarthric))
        .count();
    Ok(100.0 * correct as f64 / scores.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
