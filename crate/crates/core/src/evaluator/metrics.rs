use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("inputs differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("label index {0} outside the label space")]
    UnknownLabel(usize),
    #[error("no class pair has both classes present")]
    NoPairs,
}

/// Rows are truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_total(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], labels: &[String]) -> Result<ConfusionMatrix, MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::Length(y_true.len(), y_pred.len()));
    }
    let k = labels.len();
    let mut counts = vec![vec![0; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(MetricError::UnknownLabel(t.max(p)));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    })
}

/// Rank-based AUC of `pos` scores over `neg` scores; ties count half.
pub fn binary_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // midrank of the tie group, 1-based
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|e| e.1).count() as f64 * mid;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Auroc {
    pub value: f64,
    /// Class pairs left out because a class had no samples.
    pub skipped_pairs: Vec<(usize, usize)>,
}

/// One-vs-one macro AUROC over `n_classes` score columns.
pub fn auroc_ovo_macro(proba: &[Vec<f64>], y_true: &[usize], n_classes: usize) -> Result<Auroc, MetricError> {
    if proba.len() != y_true.len() {
        return Err(MetricError::Length(proba.len(), y_true.len()));
    }
    if let Some(&bad) = y_true.iter().find(|&&c| c >= n_classes) {
        return Err(MetricError::UnknownLabel(bad));
    }
    let scores = |class: usize, score_col: usize| -> Vec<f64> {
        y_true
            .iter()
            .zip(proba)
            .filter(|(&y, _)| y == class)
            .map(|(_, p)| p[score_col])
            .collect()
    };
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    for i in 0..n_classes {
        for j in i + 1..n_classes {
            let (ii, ji) = (scores(i, i), scores(j, i));
            if ii.is_empty() || ji.is_empty() {
                skipped.push((i, j));
                continue;
            }
            let a_ij = binary_auc(&ii, &ji);
            let a_ji = binary_auc(&scores(j, j), &scores(i, j));
            sum += (a_ij + a_ji) / 2.0;
            used += 1;
        }
    }
    if used == 0 {
        return Err(MetricError::NoPairs);
    }
    Ok(Auroc {
        value: sum / used as f64,
        skipped_pairs: skipped,
    })
}
