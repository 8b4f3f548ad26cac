//! Turns the best model's validation results and the feature bookkeeping
//! into the text handed back to the generator each iteration.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::evaluator::{ConfusionMatrix, EvalReport};
use crate::llm::prompts::FEATURE_JSON_FORMAT;
use crate::model::FeatureDescriptor;

pub const CANDIDATE_CAP: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairF1 {
    pub first: String,
    pub second: String,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub column: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPrompt {
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// Labels with no validation windows.
    pub absent: Vec<String>,
    pub pairs: Vec<PairF1>,
    pub selected: Vec<SelectedFeature>,
    pub candidates: Vec<String>,
    pub text: String,
}

fn by_value_then_name<T>(v: &mut [T], key: impl Fn(&T) -> (f64, String)) {
    v.sort_by(|a, b| {
        let (va, na) = key(a);
        let (vb, nb) = key(b);
        va.total_cmp(&vb).then(na.cmp(&nb))
    });
}

/// Accuracy per label present in validation, ascending, plus the labels
/// that were absent.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> (Vec<ClassAccuracy>, Vec<String>) {
    let mut present = Vec::new();
    let mut absent = Vec::new();
    for (i, label) in cm.labels.iter().enumerate() {
        match cm.row_total(i) {
            0 => absent.push(label.clone()),
            n => present.push(ClassAccuracy {
                label: label.clone(),
                accuracy: cm.counts[i][i] as f64 / n as f64,
            }),
        }
    }
    by_value_then_name(&mut present, |c| (c.accuracy, c.label.clone()));
    (present, absent)
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    match 2 * tp + fp + fn_ {
        0 => 0.0,
        d => 2.0 * tp as f64 / d as f64,
    }
}

/// Macro F1 of every label pair on its 2×2 restricted confusion matrix,
/// ascending. Pairs with no validation windows in either class are skipped
/// and returned separately.
pub fn pairwise_f1(cm: &ConfusionMatrix) -> (Vec<PairF1>, Vec<(String, String)>) {
    let k = cm.labels.len();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let (ii, ij, ji, jj) = (cm.counts[i][i], cm.counts[i][j], cm.counts[j][i], cm.counts[j][j]);
            if ii + ij + ji + jj == 0 {
                skipped.push((cm.labels[i].clone(), cm.labels[j].clone()));
                continue;
            }
            pairs.push(PairF1 {
                first: cm.labels[i].clone(),
                second: cm.labels[j].clone(),
                f1: (f1(ii, ji, ij) + f1(jj, ij, ji)) / 2.0,
            });
        }
    }
    by_value_then_name(&mut pairs, |p| (p.f1, format!("{}\u{0}{}", p.first, p.second)));
    (pairs, skipped)
}

fn descriptor_for<'a>(column: &str, candidates: &'a [FeatureDescriptor]) -> Option<&'a FeatureDescriptor> {
    candidates
        .iter()
        .find(|d| d.columns.iter().any(|c| c == column))
        .or_else(|| candidates.iter().find(|d| d.name == column))
}

pub fn build_feedback_prompt(report: &EvalReport, candidates: &[FeatureDescriptor]) -> FeedbackPrompt {
    let (per_class, absent) = per_class_accuracy(&report.confusion);
    let (pairs, skipped) = pairwise_f1(&report.confusion);
    let selected: Vec<SelectedFeature> = report
        .selected
        .iter()
        .map(|c| SelectedFeature {
            column: c.clone(),
            rationale: descriptor_for(c, candidates).map(|d| d.rationale.clone()).unwrap_or_default(),
        })
        .collect();
    let names: Vec<String> = candidates.iter().map(|d| d.name.clone()).collect();

    let mut t = String::new();
    let _ = writeln!(t, "## Validation accuracy\n{:.4}\n", report.accuracy);
    t.push_str("## Labels sorted by validation accuracy (ascending)\n");
    for c in &per_class {
        let _ = writeln!(t, "- {}: {:.4}", c.label, c.accuracy);
    }
    if !absent.is_empty() {
        let _ = writeln!(t, "- absent from validation: {}", absent.join(", "));
    }
    t.push_str("\n## Label pairs sorted by F1 (ascending; low values mark hard-to-separate classes)\n");
    for p in &pairs {
        let _ = writeln!(t, "- {} vs {}: {:.4}", p.first, p.second, p.f1);
    }
    for (a, b) in &skipped {
        let _ = writeln!(t, "- {a} vs {b}: skipped, no validation windows");
    }
    t.push_str("\n## Selected features\n");
    if selected.is_empty() {
        t.push_str("None selected yet.\n");
    } else {
        for s in &selected {
            let _ = writeln!(t, "- {}: {}", s.column, s.rationale);
        }
    }
    t.push_str("\n## Candidate features (already proposed; do not repeat)\n");
    let shown = &names[..names.len().min(CANDIDATE_CAP)];
    t.push_str(&shown.join(", "));
    if names.len() > CANDIDATE_CAP {
        let _ = write!(t, " ... and {} more", names.len() - CANDIDATE_CAP);
    }
    t.push_str("\n\n## Instruction\n");
    t.push_str("Propose new features that improve separation of the weakest labels and pairs above, ");
    t.push_str("without repeating any candidate. ");
    t.push_str(FEATURE_JSON_FORMAT);
    t.push('\n');

    FeedbackPrompt {
        accuracy: report.accuracy,
        per_class,
        absent,
        pairs,
        selected,
        candidates: names,
        text: t,
    }
}
