//! Fixtures shared by the benches.

use featloom::dsl::CheckedFunction;
use featloom::extract::extract_table;
use featloom::filter::run_filter_chain;
use featloom::model::{Dataset, FeatureTable};
use featloom::pipeline::initial::initial_features;

/// The admitted initial extractors for `dataset`'s channels.
pub fn initial_functions(dataset: &Dataset) -> Vec<CheckedFunction> {
    let schema = dataset.channel_schema();
    let program: Vec<String> = initial_features(schema).into_iter().map(|(_, s)| s).collect();
    run_filter_chain(&program.join("\n"), schema).admitted
}

pub fn initial_table(dataset: &Dataset) -> FeatureTable {
    let ex = extract_table(&initial_functions(dataset), dataset);
    FeatureTable::empty(dataset).append_feature_columns(&ex.names, &ex.columns).expect("fresh table").0
}
