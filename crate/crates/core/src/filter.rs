//! Four sequential static filters over generated extractor functions:
//! extraction (parse + check), name/parameter sensor prefixes, non-empty
//! body, and non-constant return. A function is reported at the first
//! stage it fails.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsl::{check_function, parse_program, CheckedFunction};

/// Name used for verdicts that concern the program text as a whole.
pub const PROGRAM_VERDICT: &str = "<program>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStage {
    Extraction,
    NameParameter,
    BodyContent,
    ConstantReturn,
}

impl FilterStage {
    pub const ORDER: [FilterStage; 4] = [
        FilterStage::Extraction,
        FilterStage::NameParameter,
        FilterStage::BodyContent,
        FilterStage::ConstantReturn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterStage::Extraction => "extraction",
            FilterStage::NameParameter => "name-parameter",
            FilterStage::BodyContent => "body-content",
            FilterStage::ConstantReturn => "constant-return",
        }
    }
}

impl fmt::Display for FilterStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub name: String,
    pub passed: bool,
    /// Failing stage, or the last stage cleared for a pass.
    pub stage: FilterStage,
    pub reason: String,
}

impl FilterVerdict {
    fn pass(name: &str, stage: FilterStage) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            stage,
            reason: String::new(),
        }
    }

    fn fail(name: &str, stage: FilterStage, reason: impl Into<String>) -> Self {
        let reason = reason.into();
        debug_assert!(!reason.is_empty());
        Self {
            name: name.to_string(),
            passed: false,
            stage,
            reason,
        }
    }
}

/// Longest schema channel that is a prefix of `ident`.
pub fn channel_prefix<'s>(ident: &str, schema: &'s [String]) -> Option<&'s str> {
    schema
        .iter()
        .filter(|c| ident.starts_with(c.as_str()))
        .max_by_key(|c| c.len())
        .map(String::as_str)
}

/// Parses the text and type-checks each function. Every function that
/// fails to parse or check gets a failing verdict; the rest are returned
/// with passing verdicts.
pub fn filter_function_extraction(text: &str) -> (Vec<CheckedFunction>, Vec<FilterVerdict>) {
    let outcome = parse_program(text);
    let mut verdicts = Vec::new();
    let mut passed = Vec::new();
    for d in &outcome.diagnostics {
        let name = d
            .function
            .clone()
            .unwrap_or_else(|| PROGRAM_VERDICT.to_string());
        verdicts.push(FilterVerdict::fail(
            &name,
            FilterStage::Extraction,
            format!("syntax (line {}): {}", d.line, d.message),
        ));
    }
    for def in &outcome.program.functions {
        match check_function(def) {
            Ok(f) => {
                verdicts.push(FilterVerdict::pass(&def.name, FilterStage::Extraction));
                passed.push(f);
            }
            Err(e) => verdicts.push(FilterVerdict::fail(&def.name, FilterStage::Extraction, format!("{}: {e}", e.class()))),
        }
    }
    (passed, verdicts)
}

pub fn filter_name_parameter(f: &CheckedFunction, schema: &[String]) -> FilterVerdict {
    if channel_prefix(f.name(), schema).is_none() {
        return FilterVerdict::fail(f.name(), FilterStage::NameParameter, "name lacks sensor prefix");
    }
    if !f.params().iter().any(|p| channel_prefix(p, schema).is_some()) {
        return FilterVerdict::fail(f.name(), FilterStage::NameParameter, "no parameter has a sensor prefix");
    }
    FilterVerdict::pass(f.name(), FilterStage::NameParameter)
}

/// Rejects placeholder bodies: ones that never read a parameter.
pub fn filter_body_content(f: &CheckedFunction) -> FilterVerdict {
    if f.references_parameter() {
        FilterVerdict::pass(f.name(), FilterStage::BodyContent)
    } else {
        FilterVerdict::fail(f.name(), FilterStage::BodyContent, "no parameter referenced")
    }
}

pub fn filter_constant_return(f: &CheckedFunction) -> FilterVerdict {
    let folded = f.fold();
    if folded.is_constant() {
        FilterVerdict::fail(
            f.name(),
            FilterStage::ConstantReturn,
            format!("body folds to a constant ({folded:?})"),
        )
    } else {
        FilterVerdict::pass(f.name(), FilterStage::ConstantReturn)
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub admitted: Vec<CheckedFunction>,
    /// One verdict per attempted function (plus program-level ones), in
    /// source order of discovery.
    pub verdicts: Vec<FilterVerdict>,
}

impl FilterOutcome {
    pub fn failures_by_stage(&self, stage: FilterStage) -> usize {
        self.verdicts.iter().filter(|v| !v.passed && v.stage == stage).count()
    }
}

pub fn run_filter_chain(text: &str, schema: &[String]) -> FilterOutcome {
    let (extracted, extraction_verdicts) = filter_function_extraction(text);
    let mut verdicts: Vec<FilterVerdict> = extraction_verdicts.into_iter().filter(|v| !v.passed).collect();
    let mut admitted = Vec::new();
    for f in extracted {
        let stages = [
            filter_name_parameter(&f, schema),
            filter_body_content(&f),
            filter_constant_return(&f),
        ];
        match stages.into_iter().find(|v| !v.passed) {
            Some(fail) => verdicts.push(fail),
            None => {
                verdicts.push(FilterVerdict::pass(f.name(), FilterStage::ConstantReturn));
                admitted.push(f);
            }
        }
    }
    FilterOutcome { admitted, verdicts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_function;

    fn schema(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn checked(src: &str) -> CheckedFunction {
        check_function(&parse_function(src).unwrap()).unwrap()
    }

    #[test]
    fn extraction_stage() {
        let text = "fn gsr_a(gsr) -> scalar { mean(gsr) }\n\
                    fn gsr_b(gsr) -> scalar { meen(gsr) }\n\
                    fn gsr_c(gsr) -> scalar { max(gsr) }";
        let (ok, verdicts) = filter_function_extraction(text);
        assert_eq!(ok.len(), 2);
        let failed: Vec<_> = verdicts.iter().filter(|v| !v.passed).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].name, "gsr_b");
        assert_eq!(failed[0].stage, FilterStage::Extraction);
        assert!(failed[0].reason.contains("unknown-builtin"));
    }

    #[test]
    fn empty_text_gets_one_program_verdict() {
        let (ok, verdicts) = filter_function_extraction("");
        assert!(ok.is_empty());
        assert_eq!(verdicts.len(), 1);
        assert_eq!(verdicts[0].name, PROGRAM_VERDICT);
    }

    #[test]
    fn name_parameter_rules() {
        let s = schema(&["gsr", "ecg"]);
        assert!(filter_name_parameter(&checked("fn gsr_ecg_ratio(gsr_sig, ecg_sig) -> scalar { mean(gsr_sig) / mean(ecg_sig) }"), &s).passed);
        let v = filter_name_parameter(&checked("fn compute_mean(x) -> scalar { mean(x) }"), &s);
        assert!(!v.passed);
        assert_eq!(v.reason, "name lacks sensor prefix");
        let v = filter_name_parameter(&checked("fn gsr_mean(x) -> scalar { mean(x) }"), &s);
        assert!(!v.passed);
        assert!(v.reason.contains("parameter"));
    }

    #[test]
    fn longest_prefix_wins() {
        let s = schema(&["acc", "accx"]);
        assert_eq!(channel_prefix("accx_sig", &s), Some("accx"));
        assert_eq!(channel_prefix("acc_sig", &s), Some("acc"));
        assert_eq!(channel_prefix("ac", &s), None);
    }

    #[test]
    fn body_content() {
        assert!(filter_body_content(&checked("fn gsr_m(gsr) -> scalar { mean(gsr) }")).passed);
        let v = filter_body_content(&checked("fn gsr_m(gsr) -> scalar { 1.0 + 2.0 }"));
        assert_eq!(v.reason, "no parameter referenced");
        assert!(!filter_body_content(&checked("fn gsr_m(gsr) -> scalar { let a = 3; a }")).passed);
    }

    #[test]
    fn constant_return() {
        assert!(!filter_constant_return(&checked("fn gsr_m(gsr) -> scalar { mean(gsr) * 0 + 5 }")).passed);
        assert!(filter_constant_return(&checked("fn gsr_m(gsr) -> scalar { mean(gsr) + 0 }")).passed);
        assert!(filter_constant_return(&checked("fn gsr_m(gsr) -> scalar { quantile(gsr, 0.5) }")).passed);
    }

    #[test]
    fn first_failure_wins() {
        // fails name/parameter and would also fail constant return
        let out = run_filter_chain("fn mean_const(x) -> scalar { mean(x) * 0 + 5 }", &schema(&["gsr"]));
        assert!(out.admitted.is_empty());
        assert_eq!(out.verdicts.len(), 1);
        assert_eq!(out.verdicts[0].stage, FilterStage::NameParameter);
    }

    #[test]
    fn all_valid_program_is_admitted() {
        let text = "fn gsr_a(gsr) -> scalar { mean(gsr) } fn gsr_b(gsr) -> vector { diff(gsr) }";
        let out = run_filter_chain(text, &schema(&["gsr"]));
        assert_eq!(out.admitted.len(), 2);
        assert!(out.verdicts.iter().all(|v| v.passed));
    }
}
