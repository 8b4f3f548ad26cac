//! Downstream model, validation metrics, recursive feature elimination and
//! the best-state comparison used once per iteration.

pub mod forest;
pub mod metrics;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{argmax, DownstreamModel, ForestParams, MajorityClass, Matrix, ModelError, RandomForest};
pub use metrics::{auroc_ovo_macro, binary_auc, confusion_matrix, Auroc, ConfusionMatrix, MetricError};

use crate::model::{FeatureTable, Split};

pub const DEFAULT_TARGET_GRID: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("target count {target} outside 1..={available}")]
    Target { target: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    /// In table order.
    pub selected: Vec<String>,
    pub target: usize,
    pub seed: u64,
    pub skipped_pairs: Vec<(String, String)>,
}

/// A fitted model together with the columns it reads and its validation
/// report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub report: EvalReport,
    pub model: RandomForest,
}

fn fit_on(table: &FeatureTable, cols: &[usize], y: &[usize], n_classes: usize, rows: &[usize], seed: u64, params: ForestParams) -> Result<RandomForest, ModelError> {
    let columns: Vec<&[f64]> = cols.iter().map(|&c| table.column(c)).collect();
    let x = Matrix::from_columns(&columns, rows);
    let ys: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
    let mut model = RandomForest::new(params);
    model.fit(&x, &ys, n_classes, seed)?;
    Ok(model)
}

/// Validation metrics of `model` reading `cols` of the table.
pub fn validate_model(model: &RandomForest, table: &FeatureTable, cols: &[usize], y: &[usize], labels: &[String], rows: &[usize]) -> Result<(f64, f64, ConfusionMatrix, Vec<(String, String)>), EvalError> {
    let columns: Vec<&[f64]> = cols.iter().map(|&c| table.column(c)).collect();
    let x = Matrix::from_columns(&columns, rows);
    let truth: Vec<usize> = rows.iter().map(|&r| y[r]).collect();
    let proba = model.predict_proba(&x)?;
    let auroc = auroc_ovo_macro(&proba, &truth, labels.len())?;
    let pred: Vec<usize> = proba.iter().map(|p| argmax(p)).collect();
    let cm = confusion_matrix(&truth, &pred, labels)?;
    let skipped = auroc
        .skipped_pairs
        .iter()
        .map(|&(i, j)| (labels[i].clone(), labels[j].clone()))
        .collect();
    Ok((auroc.value, cm.accuracy(), cm, skipped))
}

/// Recursive elimination down to `target` columns: each round refits on the
/// train rows and drops the ⌈10%⌉ least important remaining columns
/// (ties drop the lexicographically later name), never going below
/// `target`. The survivors get a final fit, scored on validation rows.
pub fn rfe_select(
    table: &FeatureTable,
    y: &[usize],
    labels: &[String],
    split: &Split,
    target: usize,
    seed: u64,
    params: ForestParams,
) -> Result<Selection, EvalError> {
    let d = table.n_cols();
    if target == 0 || target > d {
        return Err(EvalError::Target { target, available: d });
    }
    let names = table.column_names();
    let mut remaining: Vec<usize> = (0..d).collect();
    let model = loop {
        let model = fit_on(table, &remaining, y, labels.len(), &split.train, seed, params)?;
        if remaining.len() == target {
            break model;
        }
        let imp = model.feature_importances()?;
        let r = remaining.len();
        let drop = r.div_ceil(10).min(r - target);
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| {
            imp[a]
                .total_cmp(&imp[b])
                .then_with(|| names[remaining[b]].cmp(&names[remaining[a]]))
        });
        let mut gone = vec![false; r];
        for &k in &order[..drop] {
            gone[k] = true;
        }
        remaining = remaining.iter().enumerate().filter(|(k, _)| !gone[*k]).map(|(_, &c)| c).collect();
    };
    let (auroc, accuracy, confusion, skipped_pairs) = validate_model(&model, table, &remaining, y, labels, &split.validation)?;
    Ok(Selection {
        report: EvalReport {
            auroc,
            accuracy,
            confusion,
            selected: remaining.iter().map(|&c| names[c].clone()).collect(),
            target,
            seed,
            skipped_pairs,
        },
        model,
    })
}

/// Grid entries usable with `d` columns; when every entry exceeds `d`, the
/// full column set is the only target.
pub fn effective_targets(grid: &[usize], d: usize) -> Vec<usize> {
    let mut t: Vec<usize> = grid.iter().copied().filter(|&t| t >= 1 && t <= d).collect();
    t.sort_unstable();
    t.dedup();
    if t.is_empty() && d > 0 {
        t.push(d);
    }
    t
}

#[derive(Debug, Clone)]
pub struct Assessment {
    /// One per effective target, ascending.
    pub reports: Vec<EvalReport>,
    /// Highest validation AUROC; the smaller target wins ties.
    pub candidate: Selection,
    /// Candidate strictly beats the incumbent (or there is none).
    pub improved: bool,
}

pub fn assess_iteration(
    incumbent: Option<&Selection>,
    table: &FeatureTable,
    y: &[usize],
    labels: &[String],
    split: &Split,
    grid: &[usize],
    seed: u64,
    params: ForestParams,
) -> Result<Assessment, EvalError> {
    let targets = effective_targets(grid, table.n_cols());
    if targets.is_empty() {
        return Err(EvalError::Target { target: 0, available: 0 });
    }
    let selections: Vec<Selection> = targets
        .par_iter()
        .map(|&t| rfe_select(table, y, labels, split, t, seed, params))
        .collect::<Result<_, _>>()?;
    let reports = selections.iter().map(|s| s.report.clone()).collect();
    let candidate = selections
        .into_iter()
        .reduce(|best, s| if s.report.auroc > best.report.auroc { s } else { best })
        .expect("at least one target");
    let improved = incumbent.is_none_or(|b| candidate.report.auroc > b.report.auroc);
    Ok(Assessment {
        reports,
        candidate,
        improved,
    })
}
