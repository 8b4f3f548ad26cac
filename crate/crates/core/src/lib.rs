//! Closed-loop generation, filtering, realization and selection of
//! feature extractors for windowed multichannel biosignals.
pub mod composer;
pub mod dsl;
pub mod evaluator;
pub mod extract;
pub mod feedback;
pub mod filter;
pub mod kb;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod synthetic;
