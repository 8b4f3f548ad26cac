//! Runs admitted extractors over every window and keeps only those whose
//! outputs are dimensionally consistent and finite across all windows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsl::{evaluate_series, CheckedFunction, Output};
use crate::filter::channel_prefix;
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractionStatus {
    Kept,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionReport {
    pub name: String,
    pub status: ExtractionStatus,
    pub reason: String,
    pub columns: Vec<String>,
    pub non_finite: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub functions: Vec<FunctionReport>,
}

impl ExtractionReport {
    pub fn kept(&self) -> impl Iterator<Item = &FunctionReport> {
        self.functions.iter().filter(|f| f.status == ExtractionStatus::Kept)
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub names: Vec<String>,
    /// Column-major, one entry per name, rows in window order.
    pub columns: Vec<Vec<f64>>,
    pub report: ExtractionReport,
}

/// Channel for each parameter by longest channel prefix of its name.
pub fn bind_parameters(f: &CheckedFunction, schema: &[String]) -> Result<Vec<String>, String> {
    f.params()
        .iter()
        .map(|p| {
            channel_prefix(p, schema)
                .map(str::to_string)
                .ok_or_else(|| format!("parameter `{p}` matches no channel"))
        })
        .collect()
}

/// Ok when every window produced an output of the same kind and the same
/// non-zero length with only finite elements.
pub fn verify_output_consistency(outputs: &[Output]) -> Result<(), String> {
    let Some(first) = outputs.first() else {
        return Err("no outputs".into());
    };
    let same_kind = |o: &Output| std::mem::discriminant(o) == std::mem::discriminant(first);
    if !outputs.iter().all(same_kind) {
        return Err("output kind differs across windows".into());
    }
    if outputs.iter().any(Output::is_empty) {
        return Err("zero-length output".into());
    }
    if outputs.iter().any(|o| o.len() != first.len()) {
        return Err("varying lengths".into());
    }
    if !outputs.iter().all(Output::is_finite) {
        return Err("non-finite".into());
    }
    Ok(())
}

fn non_finite_count(outputs: &[Output]) -> usize {
    outputs
        .iter()
        .map(|o| match o {
            Output::Scalar(v) => usize::from(!v.is_finite()),
            Output::Vector(v) => v.iter().filter(|x| !x.is_finite()).count(),
        })
        .sum()
}

/// Evaluates each function on every window. Scalar functions yield one
/// column `<fn>`, vector functions of length L yield `<fn>[0]..<fn>[L-1]`.
pub fn extract_table(functions: &[CheckedFunction], dataset: &Dataset) -> Extraction {
    let schema = dataset.channel_schema();
    let results: Vec<(FunctionReport, Vec<Vec<f64>>)> = functions
        .par_iter()
        .map(|f| {
            let binding = match bind_parameters(f, schema) {
                Ok(b) => b,
                Err(reason) => return (discarded(f.name(), reason, 0), Vec::new()),
            };
            let outputs: Vec<Output> = dataset
                .windows()
                .par_iter()
                .map(|w| {
                    let series: Vec<_> = binding.iter().map(|c| &w.channels[c]).collect();
                    evaluate_series(f, &series).0
                })
                .collect();
            if let Err(reason) = verify_output_consistency(&outputs) {
                return (discarded(f.name(), reason, non_finite_count(&outputs)), Vec::new());
            }
            let (names, columns) = to_columns(f.name(), &outputs);
            let report = FunctionReport {
                name: f.name().to_string(),
                status: ExtractionStatus::Kept,
                reason: String::new(),
                columns: names,
                non_finite: 0,
            };
            (report, columns)
        })
        .collect();

    let mut names = Vec::new();
    let mut columns = Vec::new();
    let mut report = ExtractionReport::default();
    for (r, cols) in results {
        names.extend(r.columns.iter().cloned());
        columns.extend(cols);
        report.functions.push(r);
    }
    Extraction { names, columns, report }
}

fn discarded(name: &str, reason: String, non_finite: usize) -> FunctionReport {
    FunctionReport {
        name: name.to_string(),
        status: ExtractionStatus::Discarded,
        reason,
        columns: Vec::new(),
        non_finite,
    }
}

fn to_columns(name: &str, outputs: &[Output]) -> (Vec<String>, Vec<Vec<f64>>) {
    match &outputs[0] {
        Output::Scalar(_) => {
            let col = outputs
                .iter()
                .map(|o| match o {
                    Output::Scalar(v) => *v,
                    Output::Vector(_) => unreachable!("verified"),
                })
                .collect();
            (vec![name.to_string()], vec![col])
        }
        Output::Vector(first) => {
            let len = first.len();
            let names = (0..len).map(|i| format!("{name}[{i}]")).collect();
            let columns = (0..len)
                .map(|i| {
                    outputs
                        .iter()
                        .map(|o| match o {
                            Output::Vector(v) => v[i],
                            Output::Scalar(_) => unreachable!("verified"),
                        })
                        .collect()
                })
                .collect();
            (names, columns)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::run_filter_chain;
    use crate::model::{ChannelSeries, SignalWindow};

    fn dataset(gsr: &[Vec<f64>]) -> Dataset {
        let windows = gsr
            .iter()
            .enumerate()
            .map(|(i, v)| SignalWindow {
                id: format!("w{i}"),
                label: if i % 2 == 0 { "a" } else { "b" }.into(),
                channels: [("gsr".to_string(), ChannelSeries::new("gsr", 4.0, v.clone()).unwrap())]
                    .into_iter()
                    .collect(),
            })
            .collect();
        Dataset::new(windows).unwrap()
    }

    fn extract(src: &str, ds: &Dataset) -> Extraction {
        let out = run_filter_chain(src, ds.channel_schema());
        assert!(!out.admitted.is_empty(), "{:?}", out.verdicts);
        extract_table(&out.admitted, ds)
    }

    #[test]
    fn scalar_function_gives_one_column() {
        let ds = dataset(&[vec![1.0, 3.0], vec![2.0], vec![4.0, 6.0, 8.0], vec![0.0, 1.0]]);
        let ex = extract("fn gsr_mean(gsr) -> scalar { mean(gsr) }", &ds);
        assert_eq!(ex.names, vec!["gsr_mean"]);
        assert_eq!(ex.columns, vec![vec![2.0, 2.0, 6.0, 0.5]]);
    }

    #[test]
    fn vector_function_gives_indexed_columns() {
        let ds = dataset(&[vec![1.0, 2.0, 4.0, 8.0], vec![0.0, 1.0, 0.0, 1.0]]);
        let ex = extract("fn gsr_d(gsr) -> vector { diff(gsr) }", &ds);
        assert_eq!(ex.names, vec!["gsr_d[0]", "gsr_d[1]", "gsr_d[2]"]);
        assert_eq!(ex.columns[2], vec![4.0, 1.0]);
    }

    #[test]
    fn nan_on_one_window_discards_the_function() {
        let ds = dataset(&[vec![1.0, 2.0], vec![3.0, 3.0]]);
        let ex = extract(
            "fn gsr_ok(gsr) -> scalar { max(gsr) }\nfn gsr_bad(gsr) -> scalar { 1 / (max(gsr) - mean(gsr)) }",
            &ds,
        );
        assert_eq!(ex.names, vec!["gsr_ok"]);
        let bad = &ex.report.functions[1];
        assert_eq!(bad.status, ExtractionStatus::Discarded);
        assert_eq!(bad.reason, "non-finite");
        assert_eq!(bad.non_finite, 1);
    }

    #[test]
    fn varying_lengths_are_discarded() {
        let ds = dataset(&[vec![1.0, 2.0, 3.0], vec![3.0, 3.0]]);
        let ex = extract("fn gsr_d(gsr) -> vector { diff(gsr) }", &ds);
        assert!(ex.names.is_empty());
        assert_eq!(ex.report.functions[0].reason, "varying lengths");
    }

    #[test]
    fn verification_rules() {
        let v = |xs: &[usize]| -> Vec<Output> { xs.iter().map(|&n| Output::Vector(vec![1.0; n])).collect() };
        assert!(verify_output_consistency(&v(&[3, 3, 3, 3])).is_ok());
        assert_eq!(verify_output_consistency(&v(&[3, 3, 2, 3])).unwrap_err(), "varying lengths");
        assert_eq!(verify_output_consistency(&v(&[0, 0])).unwrap_err(), "zero-length output");
        assert_eq!(
            verify_output_consistency(&[Output::Scalar(1.0), Output::Scalar(f64::NEG_INFINITY)]).unwrap_err(),
            "non-finite"
        );
        assert!(verify_output_consistency(&[Output::Scalar(1.0), Output::Vector(vec![1.0])]).is_err());
    }

    #[test]
    fn unbindable_parameter_discards() {
        let ds = dataset(&[vec![1.0], vec![2.0]]);
        let ex = extract("fn gsr_x(gsr, other) -> scalar { mean(gsr) + mean(other) }", &ds);
        assert!(ex.names.is_empty());
        assert!(ex.report.functions[0].reason.contains("other"));
    }
}
