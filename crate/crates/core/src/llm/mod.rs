//! Language-model access: prompt templates, providers, structured output
//! parsing, and the three generation steps.

pub mod prompts;
pub mod provider;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use prompts::{Passage, TaskContext};
pub use provider::{CompletionRequest, Gateway, GenerationProvider, ProviderError, RemoteProvider, ReplayProvider, TranscriptEntry, write_replay_file};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureJson {
    pub name: String,
    pub description: String,
    pub rationale: String,
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub generation_temperature: f64,
    pub translation_temperature: f64,
    pub max_tokens: u32,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            generation_temperature: 0.7,
            translation_temperature: 0.2,
            max_tokens: 4096,
        }
    }
}

/// Lowercase snake_case: camel humps and any non-alphanumeric run become a
/// single `_`; a leading digit gets an `f_` prefix.
pub fn canonical_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut prev_lower = false;
    for ch in raw.chars() {
        if ch.is_ascii_alphanumeric() {
            if ch.is_ascii_uppercase() && prev_lower {
                out.push('_');
            }
            prev_lower = ch.is_ascii_lowercase() || ch.is_ascii_digit();
            out.push(ch.to_ascii_lowercase());
        } else {
            if !out.ends_with('_') {
                out.push('_');
            }
            prev_lower = false;
        }
    }
    let trimmed = out.trim_matches('_');
    let mut s = String::with_capacity(trimmed.len());
    for part in trimmed.split('_').filter(|p| !p.is_empty()) {
        if !s.is_empty() {
            s.push('_');
        }
        s.push_str(part);
    }
    if s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert_str(0, "f_");
    }
    s
}

/// First well-formed JSON array anywhere in `text`.
pub fn first_json_array(text: &str) -> Option<Vec<Value>> {
    text.match_indices('[').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) => Some(items),
            _ => None,
        }
    })
}

fn text_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::String(_)) => Err(format!("empty \"{key}\"")),
        Some(_) => Err(format!("\"{key}\" is not a string")),
        None => Err(format!("missing \"{key}\"")),
    }
}

fn feature_from(v: &Value) -> Result<FeatureJson, String> {
    let obj = v.as_object().ok_or("not an object")?;
    let raw = text_field(obj, "name")?;
    let name = canonical_name(&raw);
    if name.is_empty() {
        return Err(format!("name {raw:?} has no usable characters"));
    }
    let channels = match obj.get("channels") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|c| c.as_str().map(|s| s.trim().to_ascii_lowercase()).ok_or("non-string channel"))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err("\"channels\" is not an array".into()),
        None => return Err("missing \"channels\"".into()),
    };
    Ok(FeatureJson {
        name,
        description: text_field(obj, "description")?,
        rationale: text_field(obj, "rationale")?,
        channels,
    })
}

/// Features from the first JSON array in the response. Never fails: bad
/// elements are skipped with one diagnostic each.
pub fn parse_feature_json(text: &str) -> (Vec<FeatureJson>, Vec<String>) {
    let Some(items) = first_json_array(text) else {
        return (Vec::new(), vec!["no JSON array found".into()]);
    };
    let mut features = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match feature_from(item) {
            Ok(f) => features.push(f),
            Err(e) => diagnostics.push(format!("element {i}: {e}")),
        }
    }
    (features, diagnostics)
}

/// Strings of the first JSON array, if it holds only strings.
pub fn parse_string_array(text: &str) -> Option<Vec<String>> {
    first_json_array(text)?
        .into_iter()
        .map(|v| v.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .filter(|v| !v.is_empty())
}

/// Bodies of all ``` fenced blocks, in order.
pub fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    blocks
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub features: Vec<FeatureJson>,
    pub diagnostics: Vec<String>,
}

impl Generation {
    /// Keeps features whose channels are all in the schema, dropping
    /// in-batch name repeats, up to `budget`.
    fn admit(&mut self, parsed: Vec<FeatureJson>, schema: &[String], budget: usize) {
        let mut overflow = 0;
        for f in parsed {
            if let Some(bad) = f.channels.iter().find(|c| !schema.contains(c)) {
                self.diagnostics.push(format!("{}: unknown channel {bad:?}", f.name));
            } else if f.channels.is_empty() {
                self.diagnostics.push(format!("{}: no channels", f.name));
            } else if self.features.iter().any(|g| g.name == f.name) {
                self.diagnostics.push(format!("{}: repeated in batch", f.name));
            } else if self.features.len() >= budget {
                overflow += 1;
            } else {
                self.features.push(f);
            }
        }
        if overflow > 0 {
            self.diagnostics.push(format!("{overflow} feature(s) over budget {budget} ignored"));
        }
    }
}

fn generation_request(purpose: &str, user: String, settings: &LlmSettings) -> CompletionRequest {
    CompletionRequest {
        purpose: purpose.into(),
        system: prompts::SYSTEM_PROMPT.into(),
        user,
        temperature: settings.generation_temperature,
        max_tokens: settings.max_tokens,
    }
}

/// Source 1: ask for `m` features from the task settings (and feedback).
pub fn generate_features_direct(
    task: &TaskContext,
    feedback: Option<&str>,
    m: usize,
    gateway: &mut Gateway,
    settings: &LlmSettings,
) -> Result<Generation, ProviderError> {
    assert!(m >= 1, "stride must be positive");
    let response = gateway.complete(generation_request("direct", prompts::direct(task, feedback, m), settings))?;
    let (parsed, diagnostics) = parse_feature_json(&response);
    let mut g = Generation {
        features: Vec::new(),
        diagnostics,
    };
    g.admit(parsed, &task.channels, m);
    Ok(g)
}

/// Source 2: two literature-grounded calls of `m` each. Without passages
/// this degrades to one direct-style call budgeted `2m`.
pub fn generate_features_contextual(
    task: &TaskContext,
    passages: &[Passage],
    feedback: Option<&str>,
    m: usize,
    gateway: &mut Gateway,
    settings: &LlmSettings,
) -> Result<Generation, ProviderError> {
    assert!(m >= 1, "stride must be positive");
    let mut g = Generation::default();
    if passages.is_empty() {
        log::warn!("knowledge base is empty; contextual generation falls back to a single direct call");
        g.diagnostics.push("empty knowledge base: degraded to one direct call".into());
        let response = gateway.complete(generation_request("contextual", prompts::direct(task, feedback, 2 * m), settings))?;
        let (parsed, diagnostics) = parse_feature_json(&response);
        g.diagnostics.extend(diagnostics);
        g.admit(parsed, &task.channels, 2 * m);
        return Ok(g);
    }
    for round in 0..2 {
        let avoid: Vec<String> = g.features.iter().map(|f| f.name.clone()).collect();
        let prompt = prompts::contextual(task, passages, feedback, m, &avoid);
        let response = gateway.complete(generation_request("contextual", prompt, settings))?;
        let (parsed, diagnostics) = parse_feature_json(&response);
        g.diagnostics.extend(diagnostics);
        g.admit(parsed, &task.channels, (round + 1) * m);
    }
    Ok(g)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub program: String,
    pub diagnostics: Vec<String>,
}

/// Asks for FeatureScript realizations and returns the concatenated
/// fenced blocks, unvalidated.
pub fn translate_to_featurescript(
    features: &[FeatureJson],
    channels: &[String],
    gateway: &mut Gateway,
    settings: &LlmSettings,
) -> Result<Translation, ProviderError> {
    assert!(!features.is_empty(), "nothing to translate");
    let response = gateway.complete(CompletionRequest {
        purpose: "translate".into(),
        system: prompts::SYSTEM_PROMPT.into(),
        user: prompts::translate(features, channels),
        temperature: settings.translation_temperature,
        max_tokens: settings.max_tokens,
    })?;
    let blocks = fenced_blocks(&response);
    let mut t = Translation::default();
    if blocks.is_empty() {
        t.diagnostics.push("no fenced code block in response".into());
    }
    t.program = blocks.join("\n");
    Ok(t)
}
