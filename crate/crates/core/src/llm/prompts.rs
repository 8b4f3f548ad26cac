//! Prompt templates. Bump `TEMPLATE_VERSION` whenever wording changes so
//! recorded transcripts stay tied to the text that produced them.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::FeatureJson;
use crate::dsl::{catalog_listing, GRAMMAR};

pub const TEMPLATE_VERSION: u32 = 1;

pub const SYSTEM_PROMPT: &str = "You are a biosignal processing specialist who designs features for \
machine-learning classifiers on windowed physiological recordings.";

pub const FEATURE_JSON_FORMAT: &str = "Answer with a JSON array only. Each element is an object with the keys \
\"name\" (lowercase snake_case, beginning with the identifiers of the channels it uses, e.g. gsr_peak_rate), \
\"description\", \"rationale\", and \"channels\" (array of channel identifiers).";

/// The task settings every generation prompt starts with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub objective: String,
    pub protocol: String,
    pub modalities: String,
    pub subjects: String,
    pub channels: Vec<String>,
}

impl TaskContext {
    fn render(&self, out: &mut String) {
        let _ = writeln!(out, "## Task\n{}", self.objective);
        for (title, body) in [
            ("Data collection protocol", &self.protocol),
            ("Sensor modalities", &self.modalities),
            ("Subjects", &self.subjects),
        ] {
            if !body.is_empty() {
                let _ = writeln!(out, "\n## {title}\n{body}");
            }
        }
        let _ = writeln!(out, "\n## Channel identifiers\n{}", self.channels.join(", "));
    }
}

fn request_block(out: &mut String, m: usize, avoid: &[String]) {
    if !avoid.is_empty() {
        let _ = writeln!(out, "\nAlready proposed in this round (do not repeat): {}", avoid.join(", "));
    }
    let plural = if m == 1 { "" } else { "s" };
    let _ = writeln!(out, "\nPropose exactly {m} new feature{plural}. {FEATURE_JSON_FORMAT}");
}

pub fn direct(task: &TaskContext, feedback: Option<&str>, m: usize) -> String {
    let mut out = String::new();
    task.render(&mut out);
    if let Some(f) = feedback {
        let _ = writeln!(out, "\n# Feedback from the previous iteration\n{f}");
    }
    request_block(&mut out, m, &[]);
    out
}

/// A retrieved passage and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub source: String,
    pub text: String,
}

pub fn contextual(task: &TaskContext, passages: &[Passage], feedback: Option<&str>, m: usize, avoid: &[String]) -> String {
    let mut out = String::new();
    task.render(&mut out);
    out.push_str("\n## Domain literature\nGround the proposals in the following excerpts.\n");
    for p in passages {
        let _ = writeln!(out, "\n[source: {}]\n{}", p.source, p.text);
    }
    if let Some(f) = feedback {
        let _ = writeln!(out, "\n# Feedback from the previous iteration\n{f}");
    }
    request_block(&mut out, m, avoid);
    out
}

pub fn translate(features: &[FeatureJson], channels: &[String]) -> String {
    let mut out = String::new();
    out.push_str("Write one FeatureScript function per feature below.\n\n## Grammar\n");
    out.push_str(GRAMMAR);
    out.push_str("\n\n## Builtins\n");
    out.push_str(&catalog_listing());
    let _ = writeln!(out, "\n\n## Channel identifiers\n{}", channels.join(", "));
    out.push_str(
        "\n## Rules\n\
         - The function name is exactly the feature name.\n\
         - Parameters are channel series; each parameter name begins with its channel identifier.\n\
         - There is no unary minus: write `0 - x`.\n\
         - Example: fn gsr_mean(gsr) -> scalar { mean(gsr) }\n",
    );
    out.push_str("\n## Features\n");
    out.push_str(&serde_json::to_string_pretty(features).expect("features serialize"));
    out.push_str("\n\nReply with the functions inside a single ```featurescript fenced block.\n");
    out
}

pub fn keywords(task: &TaskContext) -> String {
    let mut out = String::new();
    task.render(&mut out);
    out.push_str("\nList the search keywords a researcher would use to find literature on features for this task. ");
    out.push_str("Answer with a JSON array of strings only.\n");
    out
}
