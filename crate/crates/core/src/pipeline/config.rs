//! Run configuration from an INI file with `[task]`, `[llm]`, `[kb]`,
//! `[run]` and `[selection]` sections.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use thiserror::Error;

use crate::evaluator::{ForestParams, DEFAULT_TARGET_GRID};
use crate::kb::ChunkConfig;
use crate::llm::{LlmSettings, TaskContext};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Replay,
    Remote,
}

impl FromStr for ProviderKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "replay" => Ok(Self::Replay),
            "remote" => Ok(Self::Remote),
            other => Err(ConfigError(format!("unknown provider {other:?} (replay|remote)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskText {
    pub objective: String,
    pub protocol: String,
    pub modalities: String,
    pub subjects: String,
}

impl TaskText {
    pub fn context(&self, channels: &[String]) -> TaskContext {
        TaskContext {
            objective: self.objective.clone(),
            protocol: self.protocol.clone(),
            modalities: self.modalities.clone(),
            subjects: self.subjects.clone(),
            channels: channels.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub provider: ProviderKind,
    pub replay_file: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub settings: LlmSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbConfig {
    pub corpus_dir: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub chunk: ChunkConfig,
    pub top_k: usize,
    pub embed_dim: usize,
    pub embed_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskText,
    pub llm: LlmConfig,
    pub kb: KbConfig,
    pub dataset: Option<PathBuf>,
    pub run_dir: PathBuf,
    pub stride: usize,
    pub iterations: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub targets: Vec<usize>,
    pub mi_bins: usize,
    pub forest: ForestParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskText {
                objective: String::new(),
                protocol: String::new(),
                modalities: String::new(),
                subjects: String::new(),
            },
            llm: LlmConfig {
                provider: ProviderKind::Replay,
                replay_file: None,
                endpoint: None,
                model: String::new(),
                timeout_secs: 120,
                settings: LlmSettings::default(),
            },
            kb: KbConfig {
                corpus_dir: None,
                index_path: None,
                chunk: ChunkConfig::default(),
                top_k: 5,
                embed_dim: 256,
                embed_seed: 0,
            },
            dataset: None,
            run_dir: PathBuf::from("run"),
            stride: 5,
            iterations: 10,
            seed: 17,
            validation_fraction: 0.2,
            targets: DEFAULT_TARGET_GRID.to_vec(),
            mi_bins: 10,
            forest: ForestParams::default(),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("task", &["objective", "protocol", "modalities", "subjects"]),
    (
        "llm",
        &[
            "provider",
            "replay_file",
            "endpoint",
            "model",
            "timeout_secs",
            "generation_temperature",
            "translation_temperature",
            "max_tokens",
        ],
    ),
    (
        "kb",
        &["corpus_dir", "index_path", "chunk_words", "overlap_words", "top_k", "embedding_dim", "embedding_seed"],
    ),
    ("run", &["dataset", "run_dir", "stride", "iterations", "seed", "validation_fraction"]),
    ("selection", &["targets", "mi_bins", "trees", "max_depth", "min_leaf"]),
];

fn parse<T: FromStr>(section: &str, key: &str, raw: &str) -> Result<T, ConfigError> {
    raw.trim()
        .parse()
        .map_err(|_| ConfigError(format!("[{section}] {key}: cannot parse {raw:?}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_ini_str(&text, base)
    }

    /// Relative paths resolve against `base`.
    pub fn from_ini_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| ConfigError(format!("config syntax: {e}")))?;
        let mut c = RunConfig::default();
        let path = |raw: &str| -> PathBuf {
            let p = PathBuf::from(raw.trim());
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(ConfigError(format!("key {k:?} outside any section")));
                }
                continue;
            };
            let known = KEYS
                .iter()
                .find(|(s, _)| *s == section)
                .ok_or_else(|| ConfigError(format!("unknown section [{section}]")))?
                .1;
            for (key, value) in props.iter() {
                if !known.contains(&key) {
                    return Err(ConfigError(format!("unknown key [{section}] {key}")));
                }
                let v = value.trim();
                match (section, key) {
                    ("task", "objective") => c.task.objective = v.into(),
                    ("task", "protocol") => c.task.protocol = v.into(),
                    ("task", "modalities") => c.task.modalities = v.into(),
                    ("task", "subjects") => c.task.subjects = v.into(),
                    ("llm", "provider") => c.llm.provider = v.parse()?,
                    ("llm", "replay_file") => c.llm.replay_file = Some(path(v)),
                    ("llm", "endpoint") => c.llm.endpoint = Some(v.into()),
                    ("llm", "model") => c.llm.model = v.into(),
                    ("llm", "timeout_secs") => c.llm.timeout_secs = parse(section, key, v)?,
                    ("llm", "generation_temperature") => c.llm.settings.generation_temperature = parse(section, key, v)?,
                    ("llm", "translation_temperature") => c.llm.settings.translation_temperature = parse(section, key, v)?,
                    ("llm", "max_tokens") => c.llm.settings.max_tokens = parse(section, key, v)?,
                    ("kb", "corpus_dir") => c.kb.corpus_dir = Some(path(v)),
                    ("kb", "index_path") => c.kb.index_path = Some(path(v)),
                    ("kb", "chunk_words") => c.kb.chunk.target = parse(section, key, v)?,
                    ("kb", "overlap_words") => c.kb.chunk.overlap = parse(section, key, v)?,
                    ("kb", "top_k") => c.kb.top_k = parse(section, key, v)?,
                    ("kb", "embedding_dim") => c.kb.embed_dim = parse(section, key, v)?,
                    ("kb", "embedding_seed") => c.kb.embed_seed = parse(section, key, v)?,
                    ("run", "dataset") => c.dataset = Some(path(v)),
                    ("run", "run_dir") => c.run_dir = path(v),
                    ("run", "stride") => c.stride = parse(section, key, v)?,
                    ("run", "iterations") => c.iterations = parse(section, key, v)?,
                    ("run", "seed") => c.seed = parse(section, key, v)?,
                    ("run", "validation_fraction") => c.validation_fraction = parse(section, key, v)?,
                    ("selection", "targets") => {
                        c.targets = v
                            .split(',')
                            .map(|t| parse(section, key, t))
                            .collect::<Result<_, _>>()?
                    }
                    ("selection", "mi_bins") => c.mi_bins = parse(section, key, v)?,
                    ("selection", "trees") => c.forest.n_trees = parse(section, key, v)?,
                    ("selection", "max_depth") => c.forest.max_depth = parse(section, key, v)?,
                    ("selection", "min_leaf") => c.forest.min_leaf = parse(section, key, v)?,
                    _ => unreachable!("key list checked"),
                }
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError(m.into()));
        if self.stride == 0 {
            return fail("stride must be at least 1");
        }
        if self.iterations == 0 {
            return fail("iterations must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation_fraction must lie in (0, 1)");
        }
        if self.mi_bins < 2 {
            return fail("mi_bins must be at least 2");
        }
        if self.targets.is_empty() || self.targets.contains(&0) {
            return fail("targets must be a non-empty list of positive counts");
        }
        if self.forest.n_trees == 0 || self.forest.min_leaf == 0 {
            return fail("trees and min_leaf must be positive");
        }
        if self.kb.chunk.overlap >= self.kb.chunk.target {
            return fail("overlap_words must be smaller than chunk_words");
        }
        if self.kb.embed_dim == 0 || self.kb.top_k == 0 {
            return fail("embedding_dim and top_k must be positive");
        }
        match self.llm.provider {
            ProviderKind::Replay if self.llm.replay_file.is_none() => fail("replay provider needs [llm] replay_file"),
            ProviderKind::Remote if self.llm.endpoint.is_none() => fail("remote provider needs [llm] endpoint"),
            _ => Ok(()),
        }
    }
}
