//! Ranking and classification metrics.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("roc_auc needs both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

fn check_relevant(relevant: &HashSet<u32>) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::Empty("relevant set".into()));
    }
    Ok(())
}

/// Binary-relevance nDCG over the first `k` predicted items.
pub fn ndcg_at_k(predicted: &[u32], relevant: &HashSet<u32>, k: usize) -> Result<f64> {
    check_relevant(relevant)?;
    let dcg: f64 = predicted
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(id))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(k))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    Ok(dcg / idcg)
}

/// Average precision over the first `k` items, normalized by `|relevant|`.
pub fn average_precision_at_k(predicted: &[u32], relevant: &HashSet<u32>, k: usize) -> Result<f64> {
    check_relevant(relevant)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in predicted.iter().take(k).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Mean of per-query average precision.
pub fn map_at_k(queries: &[(Vec<u32>, HashSet<u32>)], k: usize) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Empty("query list".into()));
    }
    let mut total = 0.0;
    for (pred, rel) in queries {
        total += average_precision_at_k(pred, rel, k)?;
    }
    Ok(total / queries.len() as f64)
}

/// Most frequent label; ties go to the smallest label.
pub fn majority_vote(labels: &[usize]) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::Empty("vote list".into()));
    }
    let max = *labels.iter().max().expect("nonempty");
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let best = *counts.iter().max().expect("nonempty");
    Ok(counts.iter().position(|&c| c == best).expect("max exists"))
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[u32]) -> HashSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap(),
            0.5
        );
        let a = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((a - 0.75).abs() < 1e-15);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[3, 1, 9], &set(&[1, 3]), 100).unwrap(), 1.0);
        let v = ndcg_at_k(&[5, 7, 9], &set(&[7]), 100).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&[5, 6], &set(&[7]), 100).unwrap(), 0.0);
        assert!(ndcg_at_k(&[5], &set(&[]), 100).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision_at_k(&[1, 2, 3], &set(&[1, 2]), 100).unwrap(),
            1.0
        );
        let v = average_precision_at_k(&[4, 5, 6], &set(&[6]), 100).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_precision_at_k(&[4], &set(&[6]), 100).unwrap(), 0.0);
    }

    #[test]
    fn votes() {
        assert_eq!(majority_vote(&[0, 0, 1]).unwrap(), 0);
        assert_eq!(majority_vote(&[1]).unwrap(), 1);
        assert_eq!(majority_vote(&[2, 1]).unwrap(), 1);
        assert!(majority_vote(&[]).is_err());
    }
}
