//! The closed generation loop, run-directory persistence, and the report
//! and held-out evaluation built from a run directory.

pub mod config;
pub mod initial;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{ConfigError, ProviderKind, RunConfig};

use crate::composer::{compose_pairs, rank_columns, CompositeSpec};
use crate::dsl::{check_function, parse_function};
use crate::evaluator::{
    argmax, assess_iteration, auroc_ovo_macro, confusion_matrix, ConfusionMatrix, DownstreamModel, EvalError, EvalReport, Matrix,
    Selection,
};
use crate::extract::{extract_table, ExtractionStatus, FunctionReport};
use crate::feedback::build_feedback_prompt;
use crate::filter::{run_filter_chain, FilterVerdict};
use crate::kb::{generate_keywords, HashingEmbedder, KbError, Keywords, KnowledgeIndex};
use crate::llm::{
    generate_features_contextual, generate_features_direct, translate_to_featurescript, FeatureJson, Gateway, GenerationProvider,
    Passage, ProviderError, RemoteProvider, ReplayProvider, TaskContext, TranscriptEntry,
};
use crate::model::{
    split_train_validation, DataError, Dataset, DropReason, DroppedColumn, FeatureDescriptor, FeatureSource, FeatureTable, Realization,
    Split,
};

pub const STATE_FORMAT: u32 = 1;
pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("knowledge base: {0}")]
    Kb(#[from] KbError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("run state: {0}")]
    State(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("injected fault after extraction in iteration {0}")]
    Injected(usize),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Kb(_) | RunError::State(_) => 2,
            RunError::Provider(_) => 3,
            RunError::Data(_) | RunError::Eval(_) => 4,
            RunError::Io(_) | RunError::Injected(_) => 1,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<DataError> for RunError {
    fn from(e: DataError) -> Self {
        RunError::Data(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub iteration: usize,
    #[serde(flatten)]
    pub verdict: FilterVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub iteration: usize,
    #[serde(flatten)]
    pub report: FunctionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeRecord {
    pub iteration: usize,
    pub name: String,
    #[serde(flatten)]
    pub spec: CompositeSpec,
    pub kept: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub iteration: usize,
    pub final_assessment: bool,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub iteration: usize,
    #[serde(flatten)]
    pub dropped: DroppedColumn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub iteration: usize,
    pub step: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub final_assessment: bool,
    /// Validation AUROC of this assessment's best candidate; `None` when
    /// the assessment was skipped.
    pub auroc: Option<f64>,
    pub best_auroc: Option<f64>,
    pub improved: bool,
    pub new_descriptors: usize,
    pub columns: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLogs {
    pub verdicts: Vec<VerdictRecord>,
    pub extraction: Vec<ExtractionRecord>,
    pub composites: Vec<CompositeRecord>,
    pub reports: Vec<ReportRecord>,
    pub drops: Vec<DropRecord>,
    pub notes: Vec<Note>,
    pub feedback: Vec<(usize, String)>,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub format: u32,
    /// Completed generation iterations.
    pub iteration: usize,
    pub max_iterations: usize,
    pub stride: usize,
    pub seed: u64,
    pub finished: bool,
    pub dataset_fingerprint: String,
    pub label_space: Vec<String>,
    pub channels: Vec<String>,
    pub split: Split,
    pub table: FeatureTable,
    pub candidates: Vec<FeatureDescriptor>,
    pub best: Option<Selection>,
    /// Names of the descriptors owning the best model's columns.
    pub best_set: Vec<String>,
    pub keywords: Option<Keywords>,
    pub passages: Vec<Passage>,
    /// Successful provider calls so far; the replay cursor on resume.
    pub provider_calls: usize,
    pub history: Vec<HistoryEntry>,
    pub logs: RunLogs,
}

impl IterationState {
    pub fn load(run_dir: &Path) -> Result<Self, RunError> {
        let path = run_dir.join(STATE_FILE);
        let bytes = fs::read(&path).map_err(|e| RunError::State(format!("{}: {e}", path.display())))?;
        let state: IterationState = serde_json::from_slice(&bytes).map_err(|e| RunError::State(format!("{}: {e}", path.display())))?;
        if state.format != STATE_FORMAT {
            return Err(RunError::State(format!("unsupported state format {}", state.format)));
        }
        Ok(state)
    }

    pub fn descriptor(&self, name: &str) -> Option<&FeatureDescriptor> {
        self.candidates.iter().find(|d| d.name == name)
    }

    /// Descriptor owning each table column.
    pub fn column_owners(&self) -> HashMap<&str, &FeatureDescriptor> {
        self.candidates
            .iter()
            .flat_map(|d| d.columns.iter().map(move |c| (c.as_str(), d)))
            .collect()
    }
}

/// Digest of window ids, labels and channel contents.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    for w in dataset.windows() {
        h.update(w.id.as_bytes());
        h.update([0]);
        h.update(w.label.as_bytes());
        h.update([0]);
        for (name, s) in &w.channels {
            h.update(name.as_bytes());
            h.update(s.sample_rate.to_bits().to_le_bytes());
            for v in &s.values {
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Discard any existing state in the run directory.
    pub fresh: bool,
    /// Abort the given iteration right after extraction, before anything
    /// of it is persisted.
    pub fail_after_extraction: Option<usize>,
}

/// Index from `[kb]`: a saved index if present, else one built in memory
/// from the corpus directory, else empty.
pub fn load_knowledge(config: &RunConfig) -> Result<(KnowledgeIndex, HashingEmbedder), RunError> {
    let embedder = HashingEmbedder {
        dim: config.kb.embed_dim,
        seed: config.kb.embed_seed,
    };
    if let Some(path) = index_path(config).filter(|p| p.exists()) {
        let index = KnowledgeIndex::load(&path)?;
        if index.embedder != crate::kb::EmbeddingProvider::identity(&embedder) {
            return Err(RunError::Config(format!(
                "index {} was built with {}, config asks for {}",
                path.display(),
                index.embedder,
                crate::kb::EmbeddingProvider::identity(&embedder)
            )));
        }
        return Ok((index, embedder));
    }
    match &config.kb.corpus_dir {
        Some(dir) => Ok((KnowledgeIndex::build_from_dir(dir, config.kb.chunk, &embedder)?, embedder)),
        None => Ok((KnowledgeIndex::empty(&embedder), embedder)),
    }
}

/// `[kb] index_path`, defaulting to `kb_index.bin` inside the corpus.
pub fn index_path(config: &RunConfig) -> Option<PathBuf> {
    config
        .kb
        .index_path
        .clone()
        .or_else(|| config.kb.corpus_dir.as_ref().map(|d| d.join("kb_index.bin")))
}

/// Builds and saves the knowledge index for `init`.
pub fn build_index(config: &RunConfig) -> Result<(PathBuf, KnowledgeIndex), RunError> {
    let dir = config
        .kb
        .corpus_dir
        .as_ref()
        .ok_or_else(|| RunError::Config("[kb] corpus_dir is required to build an index".into()))?;
    if !dir.is_dir() {
        return Err(RunError::Config(format!("corpus directory {} does not exist", dir.display())));
    }
    let embedder = HashingEmbedder {
        dim: config.kb.embed_dim,
        seed: config.kb.embed_seed,
    };
    let index = KnowledgeIndex::build_from_dir(dir, config.kb.chunk, &embedder)?;
    let path = index_path(config).expect("corpus dir set");
    index.save(&path)?;
    Ok((path, index))
}

fn make_gateway(config: &RunConfig, cursor: usize) -> Result<Gateway, RunError> {
    let provider: Box<dyn GenerationProvider> = match config.llm.provider {
        ProviderKind::Replay => {
            let path = config
                .llm
                .replay_file
                .as_ref()
                .ok_or_else(|| RunError::Config("replay provider needs a replay file".into()))?;
            let mut p = ReplayProvider::from_file(path).map_err(|e| RunError::Config(e.to_string()))?;
            p.seek(cursor);
            Box::new(p)
        }
        ProviderKind::Remote => {
            let endpoint = config.llm.endpoint.as_deref().ok_or_else(|| RunError::Config("remote provider needs an endpoint".into()))?;
            Box::new(RemoteProvider::from_env(endpoint, &config.llm.model, Duration::from_secs(config.llm.timeout_secs))?)
        }
    };
    Ok(Gateway::new(provider))
}

const OWNED_FILES: &[&str] = &[
    STATE_FILE,
    "features.csv",
    "candidates.ndjson",
    "verdicts.ndjson",
    "extraction.ndjson",
    "composites.ndjson",
    "reports.ndjson",
    "history.ndjson",
    "drops.ndjson",
    "notes.ndjson",
    "transcript_out.ndjson",
    "best_model.bin",
    "selected.txt",
    "summary.txt",
    "kb_update.txt",
];

fn clear_run_dir(dir: &Path) -> Result<(), RunError> {
    for name in OWNED_FILES {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_file(p)?;
        }
    }
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("feedback_") && name.ends_with(".txt") {
            fs::remove_file(p)?;
        }
    }
    Ok(())
}

fn descriptor_from(f: &FeatureJson, source: FeatureSource, iteration: usize) -> FeatureDescriptor {
    FeatureDescriptor {
        name: f.name.clone(),
        description: f.description.clone(),
        rationale: f.rationale.clone(),
        channels: f.channels.clone(),
        source,
        origin_iteration: iteration,
        realization: Realization::Unrealized,
        columns: Vec::new(),
    }
}

/// One run over one dataset: owns the provider and the knowledge index.
pub struct Session<'a> {
    config: &'a RunConfig,
    dataset: &'a Dataset,
    labels: Vec<usize>,
    gateway: Gateway,
    index: KnowledgeIndex,
    embedder: HashingEmbedder,
    options: RunOptions,
}

impl<'a> Session<'a> {
    pub fn new(config: &'a RunConfig, dataset: &'a Dataset, options: RunOptions) -> Result<Self, RunError> {
        config.validate()?;
        let (index, embedder) = load_knowledge(config)?;
        Ok(Self {
            config,
            dataset,
            labels: dataset.label_indices(),
            gateway: make_gateway(config, 0)?,
            index,
            embedder,
            options,
        })
    }

    fn task(&self) -> TaskContext {
        self.config.task.context(self.dataset.channel_schema())
    }

    fn note(state: &mut IterationState, iteration: usize, step: &str, messages: impl IntoIterator<Item = String>) {
        for message in messages {
            state.logs.notes.push(Note {
                iteration,
                step: step.into(),
                message,
            });
        }
    }

    fn absorb_transcript(&mut self, state: &mut IterationState) {
        for mut e in self.gateway.take_log() {
            e.seq = state.logs.transcript.len();
            if e.response.is_some() {
                state.provider_calls += 1;
            }
            state.logs.transcript.push(e);
        }
    }

    /// Fresh state: split, initial features, keywords and retrieval.
    pub fn initialize(&mut self) -> Result<IterationState, RunError> {
        let ds = self.dataset;
        let split = split_train_validation(ds, self.config.validation_fraction, self.config.seed)?;
        let schema = ds.channel_schema().to_vec();
        let mut state = IterationState {
            format: STATE_FORMAT,
            iteration: 0,
            max_iterations: self.config.iterations,
            stride: self.config.stride,
            seed: self.config.seed,
            finished: false,
            dataset_fingerprint: dataset_fingerprint(ds),
            label_space: ds.label_space().to_vec(),
            channels: schema.clone(),
            split,
            table: FeatureTable::empty(ds),
            candidates: Vec::new(),
            best: None,
            best_set: Vec::new(),
            keywords: None,
            passages: Vec::new(),
            provider_calls: 0,
            history: Vec::new(),
            logs: RunLogs::default(),
        };

        let initial = initial::initial_features(&schema);
        let program: Vec<&str> = initial.iter().map(|(_, s)| s.as_str()).collect();
        let outcome = run_filter_chain(&program.join("\n"), &schema);
        let extraction = extract_table(&outcome.admitted, ds);
        let (table, drops) = state.table.append_feature_columns(&extraction.names, &extraction.columns)?;
        state.table = table;
        let sources: HashMap<&str, String> = outcome.admitted.iter().map(|f| (f.name(), f.def().to_string())).collect();
        for (mut d, _) in initial {
            if let Some(r) = extraction.report.functions.iter().find(|r| r.name == d.name && r.status == ExtractionStatus::Kept) {
                d.columns = r.columns.iter().filter(|c| !drops.iter().any(|x| &x.name == *c)).cloned().collect();
                if !d.columns.is_empty() {
                    d.realization = Realization::Script {
                        source: sources[d.name.as_str()].clone(),
                    };
                }
            }
            state.candidates.push(d);
        }
        for r in extraction.report.functions {
            state.logs.extraction.push(ExtractionRecord { iteration: 0, report: r });
        }

        if !self.index.is_empty() {
            let keywords = generate_keywords(&self.task(), &mut self.gateway, &self.config.llm.settings);
            let top = self.index.query_top_chunks(&keywords.query(), &self.embedder, self.config.kb.top_k)?;
            state.passages = top.iter().map(|c| c.passage()).collect();
            state.keywords = Some(keywords);
            self.absorb_transcript(&mut state);
        }
        Ok(state)
    }

    fn assess(&self, state: &mut IterationState, seed: u64, iteration: usize, final_assessment: bool) -> Result<(f64, bool), RunError> {
        let a = assess_iteration(
            state.best.as_ref(),
            &state.table,
            &self.labels,
            &state.label_space,
            &state.split,
            &self.config.targets,
            seed,
            self.config.forest,
        )?;
        for r in a.reports {
            state.logs.reports.push(ReportRecord {
                iteration,
                final_assessment,
                report: r,
            });
        }
        let auroc = a.candidate.report.auroc;
        if a.improved {
            let owners = state.column_owners();
            let mut set: Vec<String> = Vec::new();
            for c in &a.candidate.report.selected {
                if let Some(d) = owners.get(c.as_str()) {
                    if !set.contains(&d.name) {
                        set.push(d.name.clone());
                    }
                }
            }
            state.best_set = set;
            state.best = Some(a.candidate);
        }
        Ok((auroc, a.improved))
    }

    /// One pass of assess, feedback, generate, realize, compose.
    pub fn run_iteration(&mut self, state: &mut IterationState) -> Result<(), RunError> {
        let i = state.iteration;
        let m = state.stride;
        let seed = state.seed.wrapping_add(i as u64);
        let schema = state.channels.clone();
        let settings = self.config.llm.settings;
        let task = self.task();
        let mut entry = HistoryEntry {
            iteration: i,
            final_assessment: false,
            auroc: None,
            best_auroc: None,
            improved: false,
            new_descriptors: 0,
            columns: 0,
        };

        if state.best.is_some() || i != 0 {
            let (auroc, improved) = self.assess(state, seed, i, false)?;
            entry.auroc = Some(auroc);
            entry.improved = improved;
        }
        entry.best_auroc = state.best.as_ref().map(|b| b.report.auroc);

        let feedback = state.best.as_ref().map(|b| build_feedback_prompt(&b.report, &state.candidates));
        if let Some(f) = &feedback {
            state.logs.feedback.push((i, f.text.clone()));
        }
        let fb = feedback.as_ref().map(|f| f.text.as_str());

        let direct = generate_features_direct(&task, fb, m, &mut self.gateway, &settings)?;
        let contextual = generate_features_contextual(&task, &state.passages, fb, m, &mut self.gateway, &settings)?;
        Self::note(state, i, "direct", direct.diagnostics.clone());
        Self::note(state, i, "contextual", contextual.diagnostics.clone());
        let mut batch: Vec<FeatureDescriptor> = Vec::new();
        for (features, source) in [(&direct.features, FeatureSource::DirectLlm), (&contextual.features, FeatureSource::Contextual)] {
            for f in features {
                if state.descriptor(&f.name).is_some() || batch.iter().any(|d| d.name == f.name) {
                    Self::note(state, i, source.as_str(), [format!("{}: already a candidate", f.name)]);
                } else {
                    batch.push(descriptor_from(f, source, i));
                }
            }
        }

        if !batch.is_empty() {
            let features: Vec<FeatureJson> = batch
                .iter()
                .map(|d| FeatureJson {
                    name: d.name.clone(),
                    description: d.description.clone(),
                    rationale: d.rationale.clone(),
                    channels: d.channels.clone(),
                })
                .collect();
            let translation = translate_to_featurescript(&features, &schema, &mut self.gateway, &settings)?;
            Self::note(state, i, "translate", translation.diagnostics);
            let outcome = run_filter_chain(&translation.program, &schema);
            for v in &outcome.verdicts {
                state.logs.verdicts.push(VerdictRecord {
                    iteration: i,
                    verdict: v.clone(),
                });
            }
            let mut matched = Vec::new();
            for f in outcome.admitted {
                if batch.iter().any(|d| d.name == f.name()) {
                    matched.push(f);
                } else {
                    state.logs.extraction.push(ExtractionRecord {
                        iteration: i,
                        report: FunctionReport {
                            name: f.name().to_string(),
                            status: ExtractionStatus::Discarded,
                            reason: "no matching feature in this batch".into(),
                            columns: Vec::new(),
                            non_finite: 0,
                        },
                    });
                }
            }
            let extraction = extract_table(&matched, self.dataset);
            let (table, drops) = state.table.append_feature_columns(&extraction.names, &extraction.columns)?;
            state.table = table;
            for d in &drops {
                state.logs.drops.push(DropRecord {
                    iteration: i,
                    dropped: d.clone(),
                });
            }
            for r in &extraction.report.functions {
                if r.status != ExtractionStatus::Kept {
                    continue;
                }
                let d = batch.iter_mut().find(|d| d.name == r.name).expect("matched above");
                d.columns = r.columns.iter().filter(|c| !drops.iter().any(|x| &x.name == *c)).cloned().collect();
                if !d.columns.is_empty() {
                    let f = matched.iter().find(|f| f.name() == r.name).expect("matched above");
                    d.realization = Realization::Script {
                        source: f.def().to_string(),
                    };
                }
            }
            for r in extraction.report.functions {
                state.logs.extraction.push(ExtractionRecord { iteration: i, report: r });
            }
        }

        if self.options.fail_after_extraction == Some(i) {
            return Err(RunError::Injected(i));
        }

        let mut composites: Vec<FeatureDescriptor> = Vec::new();
        if state.table.n_cols() >= 2 {
            let ranking = rank_columns(&state.table, &self.labels, &state.split.train, self.config.mi_bins);
            let composition = compose_pairs(&state.table, &ranking, m).expect("two columns and positive stride");
            let (table, drops) = state.table.append_feature_columns(&composition.names, &composition.columns)?;
            state.table = table;
            let mut owners: HashMap<String, Vec<String>> = HashMap::new();
            for d in state.candidates.iter().chain(batch.iter()) {
                for c in &d.columns {
                    owners.insert(c.clone(), d.channels.clone());
                }
            }
            for spec in &composition.specs {
                let name = spec.name();
                let dropped = drops.iter().find(|d| d.name == name);
                state.logs.composites.push(CompositeRecord {
                    iteration: i,
                    name: name.clone(),
                    spec: spec.clone(),
                    kept: dropped.is_none(),
                    reason: dropped.map(|d| format!("{:?}", d.reason)).unwrap_or_default(),
                });
                if dropped.is_some() {
                    continue;
                }
                let mut channels: Vec<String> = owners.get(&spec.left).into_iter().chain(owners.get(&spec.right)).flatten().cloned().collect();
                channels.sort();
                channels.dedup();
                composites.push(FeatureDescriptor {
                    name: name.clone(),
                    description: format!("{} of {} and {}", spec.operator.as_str(), spec.left, spec.right),
                    rationale: "pairwise combination of columns with high mutual information with the label".into(),
                    channels,
                    source: FeatureSource::Operator,
                    origin_iteration: i,
                    realization: Realization::Composite(spec.clone()),
                    columns: vec![name],
                });
            }
            for name in &composition.dropped {
                state.logs.drops.push(DropRecord {
                    iteration: i,
                    dropped: DroppedColumn {
                        name: name.clone(),
                        reason: DropReason::NonFinite,
                    },
                });
            }
        } else {
            Self::note(state, i, "operator", ["fewer than two columns; nothing to compose".to_string()]);
        }

        entry.new_descriptors = batch.len() + composites.len();
        debug_assert!(entry.new_descriptors <= 7 * m);
        state.candidates.extend(batch);
        state.candidates.extend(composites);
        entry.columns = state.table.n_cols();
        state.history.push(entry);
        state.iteration = i + 1;
        self.absorb_transcript(state);
        Ok(())
    }

    /// The assessment after the last generation pass.
    pub fn finish(&mut self, state: &mut IterationState) -> Result<(), RunError> {
        let n = state.iteration;
        let (auroc, improved) = self.assess(state, state.seed.wrapping_add(n as u64), n, true)?;
        state.history.push(HistoryEntry {
            iteration: n,
            final_assessment: true,
            auroc: Some(auroc),
            best_auroc: state.best.as_ref().map(|b| b.report.auroc),
            improved,
            new_descriptors: 0,
            columns: state.table.n_cols(),
        });
        state.finished = true;
        Ok(())
    }
}

/// Runs (or resumes) the loop configured by `config` on `dataset`.
pub fn run(config: &RunConfig, dataset: &Dataset, options: RunOptions) -> Result<IterationState, RunError> {
    let dir = config.run_dir.clone();
    fs::create_dir_all(&dir)?;
    if options.fresh {
        clear_run_dir(&dir)?;
    }
    let mut session = Session::new(config, dataset, options)?;
    let mut state = if dir.join(STATE_FILE).exists() {
        let s = IterationState::load(&dir)?;
        if s.finished {
            return Err(RunError::State(format!("{} already holds a finished run", dir.display())));
        }
        if s.dataset_fingerprint != dataset_fingerprint(dataset) || s.seed != config.seed || s.stride != config.stride || s.max_iterations != config.iterations {
            return Err(RunError::State("saved state was produced with a different dataset or settings".into()));
        }
        log::info!("resuming at iteration {}", s.iteration);
        session.gateway = make_gateway(config, s.provider_calls)?;
        s
    } else {
        let s = session.initialize()?;
        persist(&s, &dir)?;
        s
    };
    while state.iteration < state.max_iterations {
        log::info!("iteration {}", state.iteration);
        session.run_iteration(&mut state)?;
        persist(&state, &dir)?;
    }
    session.finish(&mut state)?;
    persist(&state, &dir)?;
    Ok(state)
}

fn write_ndjson<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), RunError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| RunError::State(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes every run artifact from `state`. The state file goes last, via a
/// rename, so a crash never leaves a torn state behind.
pub fn persist(state: &IterationState, dir: &Path) -> Result<(), RunError> {
    state.table.write_csv(&dir.join("features.csv"))?;
    write_ndjson(&dir.join("candidates.ndjson"), &state.candidates)?;
    write_ndjson(&dir.join("verdicts.ndjson"), &state.logs.verdicts)?;
    write_ndjson(&dir.join("extraction.ndjson"), &state.logs.extraction)?;
    write_ndjson(&dir.join("composites.ndjson"), &state.logs.composites)?;
    write_ndjson(&dir.join("reports.ndjson"), &state.logs.reports)?;
    write_ndjson(&dir.join("history.ndjson"), &state.history)?;
    write_ndjson(&dir.join("drops.ndjson"), &state.logs.drops)?;
    write_ndjson(&dir.join("notes.ndjson"), &state.logs.notes)?;
    write_ndjson(&dir.join("transcript_out.ndjson"), &state.logs.transcript)?;
    for (i, text) in &state.logs.feedback {
        fs::write(dir.join(format!("feedback_{i}.txt")), text)?;
    }
    if let Some(best) = &state.best {
        fs::write(dir.join("best_model.bin"), best.model.to_blob())?;
        fs::write(dir.join("selected.txt"), best.report.selected.join("\n") + "\n")?;
    }
    if state.finished {
        fs::write(dir.join("summary.txt"), render_report(state))?;
        let mut kb = String::new();
        for d in &state.candidates {
            let _ = writeln!(kb, "{} ({}): {} {}", d.name, d.source, d.description, d.rationale);
        }
        fs::write(dir.join("kb_update.txt"), kb)?;
    }
    let tmp = dir.join("state.json.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&serde_json::to_vec(state).map_err(|e| RunError::State(e.to_string()))?)?;
    f.sync_all()?;
    fs::rename(tmp, dir.join(STATE_FILE))?;
    Ok(())
}

/// Share of each source among the (up to) ten most important columns of
/// the best model, in percent.
pub fn source_distribution(state: &IterationState) -> BTreeMap<FeatureSource, f64> {
    let mut dist: BTreeMap<FeatureSource, f64> = FeatureSource::ALL.iter().map(|s| (*s, 0.0)).collect();
    let Some(best) = &state.best else {
        return dist;
    };
    let Ok(imp) = best.model.feature_importances() else {
        return dist;
    };
    let mut ranked: Vec<(&String, f64)> = best.report.selected.iter().zip(imp).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(10);
    let owners = state.column_owners();
    let n = ranked.len() as f64;
    for (c, _) in &ranked {
        if let Some(d) = owners.get(c.as_str()) {
            *dist.get_mut(&d.source).expect("all sources present") += 100.0 / n;
        }
    }
    dist
}

pub fn render_report(state: &IterationState) -> String {
    let mut t = String::new();
    if state.finished {
        let _ = writeln!(t, "Run finished after {} iterations", state.iteration);
    } else {
        let _ = writeln!(t, "Run partial at iteration {} of {}", state.iteration, state.max_iterations);
    }
    match &state.best {
        Some(b) => {
            let _ = writeln!(
                t,
                "Best validation AUROC {:.4}, accuracy {:.4} ({} columns, target {})",
                b.report.auroc,
                b.report.accuracy,
                b.report.selected.len(),
                b.report.target
            );
            let owners = state.column_owners();
            t.push_str("\nSelected features\n");
            for c in &b.report.selected {
                match owners.get(c.as_str()) {
                    Some(d) => {
                        let _ = writeln!(t, "  {c} [{}] {}", d.source, d.rationale);
                    }
                    None => {
                        let _ = writeln!(t, "  {c}");
                    }
                }
            }
        }
        None => t.push_str("No model assessed yet\n"),
    }
    t.push_str("\nAUROC history\n");
    for h in &state.history {
        let label = if h.final_assessment { "final".to_string() } else { format!("iteration {}", h.iteration) };
        match h.auroc {
            Some(a) => {
                let _ = writeln!(
                    t,
                    "  {label}: {a:.4} (best {:.4}){}, {} new descriptors, {} columns",
                    h.best_auroc.unwrap_or(a),
                    if h.improved { " improved" } else { "" },
                    h.new_descriptors,
                    h.columns
                );
            }
            None => {
                let _ = writeln!(t, "  {label}: not assessed, {} new descriptors, {} columns", h.new_descriptors, h.columns);
            }
        }
    }
    t.push_str("\nFilter verdicts by stage\n");
    let passed = state.logs.verdicts.iter().filter(|v| v.verdict.passed).count();
    let _ = writeln!(t, "  admitted: {passed}");
    for stage in crate::filter::FilterStage::ORDER {
        let n = state.logs.verdicts.iter().filter(|v| !v.verdict.passed && v.verdict.stage == stage).count();
        let _ = writeln!(t, "  failed {stage}: {n}");
    }
    t.push_str("\nSources of the top-10 selected features\n");
    for (source, pct) in source_distribution(state) {
        let _ = writeln!(t, "  {source}: {pct:.1}%");
    }
    t
}

pub fn report(run_dir: &Path) -> Result<String, RunError> {
    Ok(render_report(&IterationState::load(run_dir)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub windows: usize,
    pub auroc: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub skipped_pairs: Vec<(String, String)>,
}

struct Realizer<'s> {
    owners: HashMap<&'s str, &'s FeatureDescriptor>,
    dataset: &'s Dataset,
    cache: HashMap<String, Vec<f64>>,
}

impl Realizer<'_> {
    fn column(&mut self, name: &str) -> Result<Vec<f64>, RunError> {
        if let Some(c) = self.cache.get(name) {
            return Ok(c.clone());
        }
        let d = *self
            .owners
            .get(name)
            .ok_or_else(|| RunError::State(format!("column {name} has no descriptor")))?;
        match &d.realization {
            Realization::Script { source } => {
                let def = parse_function(source).map_err(|e| RunError::State(format!("{}: {e:?}", d.name)))?;
                let f = check_function(&def).map_err(|e| RunError::State(format!("{}: {e}", d.name)))?;
                let ex = extract_table(&[f], self.dataset);
                if ex.names.is_empty() {
                    let why = ex.report.functions.first().map(|r| r.reason.clone()).unwrap_or_default();
                    return Err(RunError::Data(format!("feature {} cannot be computed on this dataset: {why}", d.name)));
                }
                for (n, c) in ex.names.into_iter().zip(ex.columns) {
                    self.cache.insert(n, c);
                }
            }
            Realization::Composite(spec) => {
                let l = self.column(&spec.left)?;
                let r = self.column(&spec.right)?;
                let v = spec.apply(&l, &r);
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(RunError::Data(format!("column {name} is non-finite on this dataset")));
                }
                self.cache.insert(name.to_string(), v);
            }
            Realization::Unrealized => return Err(RunError::State(format!("descriptor {} was never realized", d.name))),
        }
        self.cache
            .get(name)
            .cloned()
            .ok_or_else(|| RunError::Data(format!("column {name} has a different shape on this dataset")))
    }
}

/// Recomputes the named columns on another dataset from their descriptors.
pub fn realize_columns(names: &[String], candidates: &[FeatureDescriptor], dataset: &Dataset) -> Result<Vec<Vec<f64>>, RunError> {
    let mut r = Realizer {
        owners: candidates.iter().flat_map(|d| d.columns.iter().map(move |c| (c.as_str(), d))).collect(),
        dataset,
        cache: HashMap::new(),
    };
    names.iter().map(|n| r.column(n)).collect()
}

/// Applies the best feature set and model of a run to held-out windows.
pub fn evaluate_run(run_dir: &Path, test: &Dataset) -> Result<HeldOutReport, RunError> {
    let state = IterationState::load(run_dir)?;
    let best = state.best.as_ref().ok_or_else(|| RunError::State("run has no fitted model yet".into()))?;
    let y: Vec<usize> = test
        .windows()
        .iter()
        .map(|w| {
            state
                .label_space
                .iter()
                .position(|l| *l == w.label)
                .ok_or_else(|| RunError::Data(format!("window {}: label {:?} unseen in training", w.id, w.label)))
        })
        .collect::<Result<_, _>>()?;
    let columns = realize_columns(&best.report.selected, &state.candidates, test)?;
    let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    let rows: Vec<usize> = (0..test.len()).collect();
    let x = Matrix::from_columns(&refs, &rows);
    let proba = best.model.predict_proba(&x).map_err(EvalError::from)?;
    let auroc = auroc_ovo_macro(&proba, &y, state.label_space.len()).map_err(EvalError::from)?;
    let pred: Vec<usize> = proba.iter().map(|p| argmax(p)).collect();
    let confusion = confusion_matrix(&y, &pred, &state.label_space).map_err(EvalError::from)?;
    Ok(HeldOutReport {
        windows: test.len(),
        auroc: auroc.value,
        accuracy: confusion.accuracy(),
        skipped_pairs: auroc
            .skipped_pairs
            .iter()
            .map(|&(i, j)| (state.label_space[i].clone(), state.label_space[j].clone()))
            .collect(),
        confusion,
    })
}
