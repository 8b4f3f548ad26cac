//! Operator-based composite features. Columns are ranked by plug-in
//! mutual information with the label (equal-frequency binning, train rows
//! only); the best pairs are combined with `+ - * /`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::check::apply_binop;
use crate::dsl::BinOp;
use crate::model::FeatureTable;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComposeError {
    #[error("need at least 2 columns to compose, table has {0}")]
    TooFewColumns(usize),
    #[error("budget must be at least 1")]
    ZeroBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Add, Operator::Sub, Operator::Mul, Operator::Div];

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Add => "add",
            Operator::Sub => "sub",
            Operator::Mul => "mul",
            Operator::Div => "div",
        }
    }

    fn binop(self) -> BinOp {
        match self {
            Operator::Add => BinOp::Add,
            Operator::Sub => BinOp::Sub,
            Operator::Mul => BinOp::Mul,
            Operator::Div => BinOp::Div,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub left: String,
    pub right: String,
    pub operator: Operator,
}

impl CompositeSpec {
    pub fn name(&self) -> String {
        format!("{}({},{})", self.operator.as_str(), self.left, self.right)
    }

    /// Elementwise application with the DSL's total arithmetic.
    pub fn apply(&self, left: &[f64], right: &[f64]) -> Vec<f64> {
        let op = self.operator.binop();
        left.iter().zip(right).map(|(a, b)| apply_binop(op, *a, *b)).collect()
    }
}

impl fmt::Display for CompositeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnImportance {
    pub column: String,
    /// Mutual information with the label, nats.
    pub mi: f64,
}

/// Equal-frequency bin index of every value. Edges sit at the interior
/// quantiles `k / bins` (linear interpolation); duplicate edges merge, so
/// ties always share a bin and a constant column is a single bin.
pub fn equal_frequency_bins(column: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins)
        .map(|k| crate::dsl::builtins::num::quantile_sorted(&sorted, k as f64 / bins as f64))
        .collect();
    edges.dedup();
    column
        .iter()
        .map(|v| edges.partition_point(|e| e < v))
        .collect()
}

/// Plug-in mutual information (nats) between the equal-frequency bin of
/// `column` and the class label.
pub fn mutual_information(column: &[f64], labels: &[usize], bins: usize) -> f64 {
    assert_eq!(column.len(), labels.len(), "one label per value");
    assert!(bins >= 2, "at least two bins");
    let n = column.len();
    if n == 0 {
        return 0.0;
    }
    let binned = equal_frequency_bins(column, bins);
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut by_bin: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_label: BTreeMap<usize, usize> = BTreeMap::new();
    for (&b, &y) in binned.iter().zip(labels) {
        *joint.entry((b, y)).or_default() += 1;
        *by_bin.entry(b).or_default() += 1;
        *by_label.entry(y).or_default() += 1;
    }
    let n = n as f64;
    let mi: f64 = joint
        .iter()
        .map(|(&(b, y), &c)| {
            let p = c as f64 / n;
            let pb = by_bin[&b] as f64 / n;
            let py = by_label[&y] as f64 / n;
            p * (p / (pb * py)).ln()
        })
        .sum();
    mi.max(0.0)
}

/// Columns sorted by MI on the given rows, descending; ties by name.
pub fn rank_columns(table: &FeatureTable, labels: &[usize], rows: &[usize], bins: usize) -> Vec<ColumnImportance> {
    let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    let mut ranking: Vec<ColumnImportance> = table
        .column_names()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let col = table.column(i);
            let x: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
            ColumnImportance {
                column: name.clone(),
                mi: mutual_information(&x, &y, bins),
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.mi.total_cmp(&a.mi).then_with(|| a.column.cmp(&b.column)));
    ranking
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Composition {
    pub specs: Vec<CompositeSpec>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Candidates dropped for holding a non-finite value.
    pub dropped: Vec<String>,
    /// Size of the ranking prefix the pairs were drawn from.
    pub k: usize,
}

impl Composition {
    pub fn candidate_count(&self) -> usize {
        self.names.len() + self.dropped.len()
    }
}

/// Combines the `n` best column pairs with all four operators (at most
/// `4n` columns). Pairs are drawn from the smallest ranking prefix of size
/// k holding at least `n` pairs not yet fully composed in the table, and
/// ordered by summed MI descending, then by name.
pub fn compose_pairs(table: &FeatureTable, ranking: &[ColumnImportance], n: usize) -> Result<Composition, ComposeError> {
    if table.n_cols() < 2 {
        return Err(ComposeError::TooFewColumns(table.n_cols()));
    }
    if n == 0 {
        return Err(ComposeError::ZeroBudget);
    }
    let existing: HashSet<&str> = table.column_names().iter().map(String::as_str).collect();
    let fresh = |i: usize, j: usize| {
        Operator::ALL.iter().any(|&operator| {
            let spec = CompositeSpec {
                left: ranking[i].column.clone(),
                right: ranking[j].column.clone(),
                operator,
            };
            !existing.contains(spec.name().as_str())
        })
    };

    let d = ranking.len();
    let mut k = 2;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    loop {
        pairs.clear();
        for j in 1..k {
            for i in 0..j {
                if fresh(i, j) {
                    pairs.push((i, j));
                }
            }
        }
        if pairs.len() >= n || k >= d {
            break;
        }
        k += 1;
    }
    pairs.sort_by(|&(a, b), &(c, e)| {
        let s1 = ranking[a].mi + ranking[b].mi;
        let s2 = ranking[c].mi + ranking[e].mi;
        s2.total_cmp(&s1)
            .then_with(|| ranking[a].column.cmp(&ranking[c].column))
            .then_with(|| ranking[b].column.cmp(&ranking[e].column))
    });
    pairs.truncate(n);

    let mut out = Composition {
        k,
        ..Default::default()
    };
    for (i, j) in pairs {
        let left = table.column_by_name(&ranking[i].column).expect("ranked column in table");
        let right = table.column_by_name(&ranking[j].column).expect("ranked column in table");
        for operator in Operator::ALL {
            let spec = CompositeSpec {
                left: ranking[i].column.clone(),
                right: ranking[j].column.clone(),
                operator,
            };
            let values = spec.apply(left, right);
            if values.iter().all(|v| v.is_finite()) {
                out.names.push(spec.name());
                out.columns.push(values);
                out.specs.push(spec);
            } else {
                out.dropped.push(spec.name());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelSeries, Dataset, SignalWindow};

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn mi_examples() {
        assert!((mutual_information(&[1.0, 1.0, 5.0, 5.0], &[0, 0, 1, 1], 2) - LN2).abs() < 1e-15);
        assert_eq!(mutual_information(&[3.0; 6], &[0, 1, 0, 1, 0, 1], 4), 0.0);
        assert_eq!(mutual_information(&[1.0, 5.0, 1.0, 5.0], &[0, 0, 1, 1], 2), 0.0);
    }

    #[test]
    fn bins_merge_duplicate_edges() {
        let b = equal_frequency_bins(&[1.0, 1.0, 1.0, 1.0, 2.0], 4);
        assert_eq!(b, vec![0, 0, 0, 0, 1]);
        assert_eq!(equal_frequency_bins(&[4.0, 3.0, 2.0, 1.0], 4), vec![3, 2, 1, 0]);
    }

    pub(crate) fn table(cols: &[(&str, Vec<f64>)]) -> FeatureTable {
        let n = cols[0].1.len();
        let windows = (0..n)
            .map(|i| SignalWindow {
                id: format!("w{i}"),
                label: if i % 2 == 0 { "a" } else { "b" }.into(),
                channels: [("x".to_string(), ChannelSeries::new("x", 1.0, vec![0.0]).unwrap())]
                    .into_iter()
                    .collect(),
            })
            .collect();
        let ds = Dataset::new(windows).unwrap();
        let names: Vec<String> = cols.iter().map(|(n, _)| n.to_string()).collect();
        let values: Vec<Vec<f64>> = cols.iter().map(|(_, v)| v.clone()).collect();
        FeatureTable::empty(&ds).append_feature_columns(&names, &values).unwrap().0
    }

    #[test]
    fn label_copy_ranks_above_constant() {
        let t = table(&[("const", vec![1.0; 4]), ("copy", vec![0.0, 1.0, 0.0, 1.0])]);
        let r = rank_columns(&t, &[0, 1, 0, 1], &[0, 1, 2, 3], 10);
        assert_eq!(r[0].column, "copy");
        assert_eq!(r[1].mi, 0.0);
    }

    #[test]
    fn equal_mi_ties_break_by_name() {
        let t = table(&[("b_y", vec![1.0, 2.0, 3.0, 4.0]), ("a_x", vec![1.0, 2.0, 3.0, 4.0])]);
        let r = rank_columns(&t, &[0, 1, 0, 1], &[0, 1, 2, 3], 2);
        assert_eq!(r[0].column, "a_x");
        assert_eq!(r[1].column, "b_y");
    }

    fn ranking(names: &[&str]) -> Vec<ColumnImportance> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| ColumnImportance {
                column: n.to_string(),
                mi: 1.0 / (i + 1) as f64,
            })
            .collect()
    }

    #[test]
    fn single_pair_arithmetic() {
        let t = table(&[("a", vec![1.0, 2.0]), ("b", vec![2.0, 4.0])]);
        let c = compose_pairs(&t, &ranking(&["a", "b"]), 1).unwrap();
        assert_eq!(c.names, vec!["add(a,b)", "sub(a,b)", "mul(a,b)", "div(a,b)"]);
        assert_eq!(
            c.columns,
            vec![vec![3.0, 6.0], vec![-1.0, -2.0], vec![2.0, 8.0], vec![0.5, 0.5]]
        );
    }

    #[test]
    fn zero_divisor_drops_only_div() {
        let t = table(&[("a", vec![1.0, 2.0]), ("b", vec![0.0, 4.0])]);
        let c = compose_pairs(&t, &ranking(&["a", "b"]), 1).unwrap();
        assert_eq!(c.names.len(), 3);
        assert_eq!(c.dropped, vec!["div(a,b)"]);
    }

    #[test]
    fn budget_three_uses_three_columns() {
        let t = table(&[
            ("a", vec![1.0, 2.0]),
            ("b", vec![3.0, 4.0]),
            ("c", vec![5.0, 6.0]),
            ("d", vec![7.0, 8.0]),
        ]);
        let c = compose_pairs(&t, &ranking(&["a", "b", "c", "d"]), 3).unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.candidate_count(), 12);
        // strongest pair first
        assert_eq!(c.specs[0].left, "a");
        assert_eq!(c.specs[0].right, "b");
    }

    #[test]
    fn already_composed_pairs_are_skipped() {
        let t = table(&[("a", vec![1.0, 2.0]), ("b", vec![3.0, 4.0]), ("c", vec![5.0, 6.0])]);
        let first = compose_pairs(&t, &ranking(&["a", "b", "c"]), 1).unwrap();
        let (t2, _) = t.append_feature_columns(&first.names, &first.columns).unwrap();
        let second = compose_pairs(&t2, &ranking(&["a", "b", "c"]), 1).unwrap();
        assert_eq!(second.specs[0].right, "c");
    }

    #[test]
    fn too_few_columns() {
        let t = table(&[("a", vec![1.0, 2.0])]);
        assert_eq!(compose_pairs(&t, &ranking(&["a"]), 1), Err(ComposeError::TooFewColumns(1)));
    }
}
