//! Evaluation metrics: pair classification, partition agreement, ranking.
//!
//! Rand-index quantities are computed twice by design: a contingency-table
//! route used in production and a pairwise O(n²) loop kept as the oracle.
//! Both derive the same integer counts and apply the same final formula,
//! so they agree exactly, not just approximately. The same holds for the
//! rank-based and pairwise AUC.

use thiserror::Error;

use crate::geometry::{EdgeLabels, Partition};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("inputs must have equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("AUC-ROC needs both classes present")]
    OneClassMissing,
}

/// Confusion-matrix summary over unordered pairs or candidate items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

fn from_confusion(tp: u64, fp: u64, fn_: u64, tn: u64) -> ClassificationMetrics {
    let total = tp + fp + fn_ + tn;
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    // no positives anywhere counts as perfect agreement
    let f1 = if tp + fp + fn_ == 0 {
        1.0
    } else if tp == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let accuracy = if total == 0 {
        1.0
    } else {
        (tp + tn) as f64 / total as f64
    };
    ClassificationMetrics {
        f1,
        precision,
        recall,
        accuracy,
    }
}

/// Pair classification metrics over the unordered off-diagonal pairs,
/// each counted once.
pub fn edge_classification_metrics(
    pred: &EdgeLabels,
    truth: &EdgeLabels,
) -> Result<ClassificationMetrics, MetricsError> {
    if pred.n() != truth.n() {
        return Err(MetricsError::LengthMismatch(pred.n(), truth.n()));
    }
    let n = pred.n();
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            match (pred.get(i, j), truth.get(i, j)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    Ok(from_confusion(tp, fp, fn_, tn))
}

/// Item-level classification metrics (used for triplet candidates).
pub fn binary_classification_metrics(
    pred: &[bool],
    truth: &[bool],
) -> Result<ClassificationMetrics, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), truth.len()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(from_confusion(tp, fp, fn_, tn))
}

fn comb2(x: u64) -> u64 {
    x * x.saturating_sub(1) / 2
}

/// Integer pair counts shared by both Rand-index routes.
struct PairCounts {
    /// pairs placed together in both partitions
    both: u64,
    /// pairs together in the first partition
    first: u64,
    /// pairs together in the second partition
    second: u64,
    /// all pairs, C(n, 2)
    total: u64,
}

impl PairCounts {
    fn rand_index(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        // agree = together-in-both + separate-in-both, kept in an order
        // that cannot underflow
        let agree = (self.total + 2 * self.both) - (self.first + self.second);
        agree as f64 / self.total as f64
    }

    fn adjusted_rand_index(&self, identical: bool) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        let index = self.both as f64;
        let expected = self.first as f64 * self.second as f64 / self.total as f64;
        let max_index = (self.first + self.second) as f64 / 2.0;
        if (max_index - expected).abs() == 0.0 {
            // only the trivial all-singleton / all-one-cluster cases land here
            return if identical { 1.0 } else { 0.0 };
        }
        (index - expected) / (max_index - expected)
    }
}

fn counts_from_contingency(p1: &Partition, p2: &Partition) -> PairCounts {
    let n = p1.n() as u64;
    let mut table = vec![0u64; p1.n_clusters() * p2.n_clusters()];
    for (&a, &b) in p1.ids().iter().zip(p2.ids()) {
        table[a * p2.n_clusters() + b] += 1;
    }
    let both = table.iter().map(|&c| comb2(c)).sum();
    let first = p1.cluster_sizes().iter().map(|&c| comb2(c as u64)).sum();
    let second = p2.cluster_sizes().iter().map(|&c| comb2(c as u64)).sum();
    PairCounts {
        both,
        first,
        second,
        total: comb2(n),
    }
}

fn counts_from_pair_loop(p1: &Partition, p2: &Partition) -> PairCounts {
    let n = p1.n();
    let (mut both, mut first, mut second, mut total) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let same1 = p1.ids()[i] == p1.ids()[j];
            let same2 = p2.ids()[i] == p2.ids()[j];
            total += 1;
            if same1 {
                first += 1;
            }
            if same2 {
                second += 1;
            }
            if same1 && same2 {
                both += 1;
            }
        }
    }
    PairCounts {
        both,
        first,
        second,
        total,
    }
}

fn check_same_n(p1: &Partition, p2: &Partition) -> Result<(), MetricsError> {
    if p1.n() != p2.n() {
        return Err(MetricsError::LengthMismatch(p1.n(), p2.n()));
    }
    Ok(())
}

/// Rand index via the contingency table.
pub fn rand_index(p1: &Partition, p2: &Partition) -> Result<f64, MetricsError> {
    check_same_n(p1, p2)?;
    Ok(counts_from_contingency(p1, p2).rand_index())
}

/// Rand index via the O(n²) pairwise definition; the reference oracle.
pub fn rand_index_pairwise(p1: &Partition, p2: &Partition) -> Result<f64, MetricsError> {
    check_same_n(p1, p2)?;
    Ok(counts_from_pair_loop(p1, p2).rand_index())
}

/// Permutation-model adjusted Rand index via the contingency table.
pub fn adjusted_rand_index(p1: &Partition, p2: &Partition) -> Result<f64, MetricsError> {
    check_same_n(p1, p2)?;
    Ok(counts_from_contingency(p1, p2).adjusted_rand_index(p1.ids() == p2.ids()))
}

/// Adjusted Rand index from the pairwise loop; the reference oracle.
pub fn adjusted_rand_index_pairwise(
    p1: &Partition,
    p2: &Partition,
) -> Result<f64, MetricsError> {
    check_same_n(p1, p2)?;
    Ok(counts_from_pair_loop(p1, p2).adjusted_rand_index(p1.ids() == p2.ids()))
}

/// AUC-ROC in the Mann–Whitney form P(s⁺ > s⁻) + ½P(s⁺ = s⁻), computed
/// exactly from tie-averaged ranks.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(MetricsError::OneClassMissing);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group [i, j)
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// AUC-ROC by direct enumeration of all positive×negative pairs.
pub fn auc_roc_pairwise(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|&(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|&(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::OneClassMissing);
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            if p > q {
                wins += 1.0;
            } else if p == q {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}
