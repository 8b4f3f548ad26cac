//! Domain types shared by every stage of the loop: labeled multichannel
//! windows, the dataset they form, feature descriptors, and the feature
//! table that grows as extractors are realized.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::CompositeSpec;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("window {window}: {message}")]
    Schema { window: String, message: String },
    #[error("dataset: {0}")]
    Invalid(String),
    #[error("split: class {label} has {count} windows, need at least 2")]
    TooFewSamples { label: String, count: usize },
    #[error("split: fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("table: incoming columns have {found} rows, table has {expected}")]
    RowMismatch { expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// True when `name` is a valid channel identifier (`[a-z][a-z0-9]*`).
pub fn is_channel_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries {
    pub name: String,
    pub sample_rate: f64,
    pub values: Vec<f64>,
}

impl ChannelSeries {
    pub fn new(name: impl Into<String>, sample_rate: f64, values: Vec<f64>) -> std::result::Result<Self, String> {
        let name = name.into();
        if !is_channel_identifier(&name) {
            return Err(format!("invalid channel name {name:?}"));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(format!("channel {name}: sample rate must be positive"));
        }
        if values.is_empty() {
            return Err(format!("channel {name}: empty series"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(format!("channel {name}: non-finite value"));
        }
        Ok(Self { name, sample_rate, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub id: String,
    pub label: String,
    pub channels: BTreeMap<String, ChannelSeries>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<SignalWindow>,
    channel_schema: Vec<String>,
    label_space: Vec<String>,
}

impl Dataset {
    /// Validates the dataset invariants: one shared channel set, unique ids,
    /// at least two classes. The label space is the sorted set of labels.
    pub fn new(windows: Vec<SignalWindow>) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| DataError::Invalid("no windows".into()))?;
        let schema: Vec<String> = first.channels.keys().cloned().collect();
        let mut ids = HashSet::new();
        let mut labels = BTreeSet::new();
        for w in &windows {
            if w.channels.is_empty() {
                return Err(schema_err(&w.id, "no channels"));
            }
            if !ids.insert(w.id.as_str()) {
                return Err(schema_err(&w.id, "duplicate window id"));
            }
            for name in &schema {
                if !w.channels.contains_key(name) {
                    return Err(schema_err(&w.id, &format!("missing channel {name:?}")));
                }
            }
            if w.channels.len() != schema.len() {
                let extra = w.channels.keys().find(|k| !schema.contains(k)).cloned().unwrap_or_default();
                return Err(schema_err(&w.id, &format!("unexpected channel {extra:?} (inconsistent channel sets)")));
            }
            for (key, series) in &w.channels {
                if key != &series.name {
                    return Err(schema_err(&w.id, &format!("channel key {key:?} does not match series name")));
                }
            }
            labels.insert(w.label.clone());
        }
        if labels.len() < 2 {
            return Err(DataError::Invalid(format!("need at least 2 classes, found {}", labels.len())));
        }
        Ok(Self {
            windows,
            channel_schema: schema,
            label_space: labels.into_iter().collect(),
        })
    }

    pub fn windows(&self) -> &[SignalWindow] {
        &self.windows
    }

    /// Sorted channel identifiers shared by every window.
    pub fn channel_schema(&self) -> &[String] {
        &self.channel_schema
    }

    pub fn label_space(&self) -> &[String] {
        &self.label_space
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Label of every window as an index into `label_space`.
    pub fn label_indices(&self) -> Vec<usize> {
        self.windows
            .iter()
            .map(|w| self.label_space.binary_search(&w.label).expect("label in label space"))
            .collect()
    }

    pub fn window_ids(&self) -> Vec<String> {
        self.windows.iter().map(|w| w.id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.windows.iter().map(|w| w.label.clone()).collect()
    }
}

fn schema_err(window: &str, message: &str) -> DataError {
    DataError::Schema {
        window: window.to_string(),
        message: message.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct WindowRecord {
    id: String,
    label: String,
    channels: BTreeMap<String, ChannelRecord>,
}

#[derive(Serialize, Deserialize)]
struct ChannelRecord {
    fs: f64,
    values: Vec<SampleValue>,
}

/// Samples are numbers, but producers sometimes write `"NaN"` or
/// `"Infinity"` as strings; those must surface as schema errors rather
/// than JSON errors.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SampleValue {
    Number(f64),
    Text(String),
}

impl SampleValue {
    fn to_f64(&self) -> std::result::Result<f64, String> {
        match self {
            SampleValue::Number(v) => Ok(*v),
            SampleValue::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "nan" | "inf" | "+inf" | "-inf" | "infinity" | "+infinity" | "-infinity" => Ok(f64::NAN),
                _ => Err(format!("sample {t:?} is not a number")),
            },
        }
    }
}

/// Reads an NDJSON dataset, one window per line. Blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut windows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: WindowRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut channels = BTreeMap::new();
        for (name, ch) in record.channels {
            let mut values = Vec::with_capacity(ch.values.len());
            for v in &ch.values {
                let v = v.to_f64().map_err(|message| DataError::Parse { line: line_no, message })?;
                if !v.is_finite() {
                    return Err(schema_err(&record.id, &format!("non-finite value in channel {name:?}")));
                }
                values.push(v);
            }
            let series = ChannelSeries::new(name.clone(), ch.fs, values)
                .map_err(|message| schema_err(&record.id, &message))?;
            channels.insert(name, series);
        }
        windows.push(SignalWindow {
            id: record.id,
            label: record.label,
            channels,
        });
    }
    Dataset::new(windows)
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for w in dataset.windows() {
        let record = WindowRecord {
            id: w.id.clone(),
            label: w.label.clone(),
            channels: w
                .channels
                .iter()
                .map(|(k, s)| {
                    let values = s.values.iter().map(|v| SampleValue::Number(*v)).collect();
                    (k.clone(), ChannelRecord { fs: s.sample_rate, values })
                })
                .collect(),
        };
        let line = serde_json::to_string(&record).expect("window serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded class-stratified split. Each class contributes
/// `max(1, floor(fraction * n_c))` validation windows; both index lists
/// come back sorted.
pub fn split_train_validation(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    let labels = dataset.label_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (class, name) in dataset.label_space().iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(DataError::TooFewSamples {
                label: name.clone(),
                count: members.len(),
            });
        }
        let n_val = ((fraction * members.len() as f64).floor() as usize).max(1);
        members.shuffle(&mut rng);
        validation.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(Split { train, validation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    DirectLlm,
    Contextual,
    Operator,
    Initial,
}

impl FeatureSource {
    pub const ALL: [FeatureSource; 4] = [
        FeatureSource::Initial,
        FeatureSource::DirectLlm,
        FeatureSource::Contextual,
        FeatureSource::Operator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::DirectLlm => "direct-llm",
            FeatureSource::Contextual => "contextual",
            FeatureSource::Operator => "operator",
            FeatureSource::Initial => "initial",
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a descriptor turns into table columns. Needed to rebuild the
/// selected columns on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realization {
    /// Not (yet) realized as columns, e.g. its extractor was filtered out.
    Unrealized,
    /// A FeatureScript function, stored in canonical printed form.
    Script { source: String },
    Composite(CompositeSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub description: String,
    pub rationale: String,
    pub channels: Vec<String>,
    pub source: FeatureSource,
    pub origin_iteration: usize,
    pub realization: Realization,
    /// Table columns realized from this descriptor, in table order.
    #[serde(default)]
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    DuplicateName,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub reason: DropReason,
}

/// Samples × features, stored column-major. Rows align with the dataset's
/// window order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    column_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    window_ids: Vec<String>,
    labels: Vec<String>,
}

impl FeatureTable {
    pub fn empty(dataset: &Dataset) -> Self {
        Self {
            column_names: Vec::new(),
            columns: Vec::new(),
            window_ids: dataset.window_ids(),
            labels: dataset.labels(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.window_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn window_ids(&self) -> &[String] {
        &self.window_ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, idx: usize) -> &[f64] {
        &self.columns[idx]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|i| self.column(i))
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    /// New table restricted to the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Option<FeatureTable> {
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            columns.push(self.column_by_name(n)?.to_vec());
        }
        Some(FeatureTable {
            column_names: names.to_vec(),
            columns,
            window_ids: self.window_ids.clone(),
            labels: self.labels.clone(),
        })
    }

    /// Appends columns in order. Name collisions (with the table or earlier
    /// incoming columns) and columns holding a non-finite cell are dropped
    /// and reported instead of appended.
    pub fn append_feature_columns(
        &self,
        names: &[String],
        columns: &[Vec<f64>],
    ) -> Result<(FeatureTable, Vec<DroppedColumn>)> {
        assert_eq!(names.len(), columns.len(), "one name per column");
        if let Some(bad) = columns.iter().find(|c| c.len() != self.n_rows()) {
            return Err(DataError::RowMismatch {
                expected: self.n_rows(),
                found: bad.len(),
            });
        }
        let mut out = self.clone();
        let mut seen: HashSet<String> = self.column_names.iter().cloned().collect();
        let mut dropped = Vec::new();
        for (name, col) in names.iter().zip(columns) {
            if seen.contains(name) {
                dropped.push(DroppedColumn {
                    name: name.clone(),
                    reason: DropReason::DuplicateName,
                });
            } else if col.iter().any(|v| !v.is_finite()) {
                dropped.push(DroppedColumn {
                    name: name.clone(),
                    reason: DropReason::NonFinite,
                });
            } else {
                seen.insert(name.clone());
                out.column_names.push(name.clone());
                out.columns.push(col.clone());
            }
        }
        Ok((out, dropped))
    }

    /// CSV with header `window_id,label,<columns...>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["window_id".to_string(), "label".to_string()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![self.window_ids[r].clone(), self.labels[r].clone()];
            rec.extend(self.columns.iter().map(|c| c[r].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureTable> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 || header[0] != "window_id" || header[1] != "label" {
            return Err(DataError::Invalid("feature table header must start with window_id,label".into()));
        }
        let column_names = header[2..].to_vec();
        let mut columns = vec![Vec::new(); column_names.len()];
        let mut window_ids = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            window_ids.push(rec[0].to_string());
            labels.push(rec[1].to_string());
            for (c, col) in columns.iter_mut().enumerate() {
                let v: f64 = rec[c + 2].parse().map_err(|_| DataError::Parse {
                    line: i + 2,
                    message: format!("bad number {:?}", &rec[c + 2]),
                })?;
                col.push(v);
            }
        }
        Ok(FeatureTable {
            column_names,
            columns,
            window_ids,
            labels,
        })
    }
}
