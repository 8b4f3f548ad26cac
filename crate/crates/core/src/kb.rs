//! Local literature store: chunking, a hashing embedder, an exact cosine
//! index with binary persistence, and retrieval-keyword generation.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{parse_string_array, prompts, CompletionRequest, Gateway, LlmSettings, Passage, TaskContext};

pub const MIN_TAIL_WORDS: usize = 32;
const INDEX_MAGIC: &[u8; 4] = b"FLKB";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("chunk overlap {overlap} must be smaller than target {target}")]
    Overlap { target: usize, overlap: usize },
    #[error("embedding dimension mismatch: index {index}, embedder {embedder}")]
    Dimension { index: usize, embedder: usize },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub target: usize,
    pub overlap: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self { target: 512, overlap: 64 }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), KbError> {
        if self.overlap >= self.target {
            return Err(KbError::Overlap {
                target: self.target,
                overlap: self.overlap,
            });
        }
        Ok(())
    }
}

/// Word windows of `target` words advancing by `target - overlap`. A final
/// window adding fewer than `MIN_TAIL_WORDS` words beyond its predecessor
/// is folded into it.
pub fn chunk_document(text: &str, config: ChunkConfig) -> Result<Vec<String>, KbError> {
    config.validate()?;
    let words: Vec<&str> = text.split_whitespace().collect();
    let step = config.target - config.overlap;
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < words.len() {
        let end = (start + config.target).min(words.len());
        spans.push((start, end));
        if end == words.len() {
            break;
        }
        start += step;
    }
    if spans.len() > 1 {
        let (_, e) = spans[spans.len() - 1];
        let prev_end = spans[spans.len() - 2].1;
        if e - prev_end < MIN_TAIL_WORDS {
            spans.pop();
            spans.last_mut().expect("previous window").1 = e;
        }
    }
    Ok(spans.into_iter().map(|(s, e)| words[s..e].join(" ")).collect())
}

pub trait EmbeddingProvider: Sync {
    fn identity(&self) -> String;
    fn dim(&self) -> usize;
    /// Raw (unnormalized) embedding.
    fn embed_raw(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing of lowercased word unigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 256, seed: 0 }
    }
}

pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl HashingEmbedder {
    fn bucket(&self, token: &str) -> (usize, f64) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let d = h.finalize();
        let idx = u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) % self.dim as u64;
        let sign = if d[8] & 1 == 0 { 1.0 } else { -1.0 };
        (idx as usize, sign)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn identity(&self) -> String {
        format!("hashing-bow:{}:{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for w in words(text) {
            let (i, s) = self.bucket(&w);
            v[i] += s;
            any = true;
        }
        if !any || v.iter().all(|x| *x == 0.0) {
            // only punctuation, or every word cancelled out
            let (i, s) = self.bucket(text);
            v[i] += s;
        }
        v
    }
}

/// Embedding scaled to unit L2 norm.
pub fn embed_chunk(text: &str, provider: &dyn EmbeddingProvider) -> Vec<f64> {
    let mut v = provider.embed_raw(text);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub ordinal: u32,
    pub text: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

impl ScoredChunk {
    pub fn passage(&self) -> Passage {
        Passage {
            source: format!("{}#{}", self.chunk.doc_id, self.chunk.ordinal),
            text: self.chunk.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeIndex {
    pub embedder: String,
    pub dim: usize,
    pub chunks: Vec<Chunk>,
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    doc_id: &'a str,
    ordinal: u32,
    words: usize,
    preview: String,
}

impl KnowledgeIndex {
    pub fn empty(provider: &dyn EmbeddingProvider) -> Self {
        Self {
            embedder: provider.identity(),
            dim: provider.dim(),
            chunks: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    /// Indexes `(doc_id, text)` documents in the given order.
    pub fn build(docs: &[(String, String)], config: ChunkConfig, provider: &dyn EmbeddingProvider) -> Result<Self, KbError> {
        config.validate()?;
        let per_doc: Vec<Vec<Chunk>> = docs
            .par_iter()
            .map(|(id, text)| {
                chunk_document(text, config).map(|texts| {
                    texts
                        .into_iter()
                        .enumerate()
                        .map(|(i, t)| Chunk {
                            doc_id: id.clone(),
                            ordinal: i as u32,
                            embedding: embed_chunk(&t, provider),
                            text: t,
                        })
                        .collect()
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            embedder: provider.identity(),
            dim: provider.dim(),
            chunks: per_doc.into_iter().flatten().collect(),
        })
    }

    /// Every `.txt` file of `dir`, sorted by file name; the doc id is the
    /// file stem.
    pub fn build_from_dir(dir: &Path, config: ChunkConfig, provider: &dyn EmbeddingProvider) -> Result<Self, KbError> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        let docs = paths
            .iter()
            .map(|p| {
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                fs::read_to_string(p).map(|t| (id, t))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::build(&docs, config, provider)
    }

    /// Exact cosine scan, best first; ties by (doc id, ordinal).
    pub fn query_top_chunks(&self, query: &str, provider: &dyn EmbeddingProvider, top: usize) -> Result<Vec<ScoredChunk>, KbError> {
        if self.chunks.is_empty() {
            log::warn!("knowledge index is empty");
            return Ok(Vec::new());
        }
        if provider.dim() != self.dim {
            return Err(KbError::Dimension {
                index: self.dim,
                embedder: provider.dim(),
            });
        }
        let q = embed_chunk(query, provider);
        let mut scored: Vec<ScoredChunk> = self
            .chunks
            .iter()
            .map(|c| ScoredChunk {
                score: c.embedding.iter().zip(&q).map(|(a, b)| a * b).sum(),
                chunk: c.clone(),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.chunk.doc_id.cmp(&b.chunk.doc_id))
                .then_with(|| a.chunk.ordinal.cmp(&b.chunk.ordinal))
        });
        scored.truncate(top);
        Ok(scored)
    }

    /// Binary index plus `index_manifest.ndjson` beside it.
    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(INDEX_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        write_str(&mut w, &self.embedder)?;
        w.write_u64::<LittleEndian>(self.chunks.len() as u64)?;
        for c in &self.chunks {
            write_str(&mut w, &c.doc_id)?;
            w.write_u32::<LittleEndian>(c.ordinal)?;
            write_str(&mut w, &c.text)?;
            for &x in &c.embedding {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        w.flush()?;

        let manifest = path.with_file_name("index_manifest.ndjson");
        let mut m = BufWriter::new(File::create(manifest)?);
        for c in &self.chunks {
            let line = ManifestLine {
                doc_id: &c.doc_id,
                ordinal: c.ordinal,
                words: c.text.split_whitespace().count(),
                preview: c.text.chars().take(80).collect(),
            };
            writeln!(m, "{}", serde_json::to_string(&line).expect("manifest line"))?;
        }
        m.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(KbError::Corrupt("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != INDEX_VERSION {
            return Err(KbError::Corrupt(format!("unsupported version {version}")));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let embedder = read_str(&mut r)?;
        let n = r.read_u64::<LittleEndian>()?;
        let mut chunks = Vec::new();
        for _ in 0..n {
            let doc_id = read_str(&mut r)?;
            let ordinal = r.read_u32::<LittleEndian>()?;
            let text = read_str(&mut r)?;
            let mut embedding = vec![0.0; dim];
            r.read_f64_into::<LittleEndian>(&mut embedding)?;
            chunks.push(Chunk {
                doc_id,
                ordinal,
                text,
                embedding,
            });
        }
        Ok(Self { embedder, dim, chunks })
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str(r: &mut impl Read) -> Result<String, KbError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| KbError::Corrupt(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keywords {
    pub words: Vec<String>,
    /// True when the model answer was unusable and the task text was used.
    pub fallback: bool,
}

impl Keywords {
    pub fn query(&self) -> String {
        self.words.join(" ")
    }
}

/// One model call for search keywords; falls back to the task text on a
/// provider failure or unparseable answer.
pub fn generate_keywords(task: &TaskContext, gateway: &mut Gateway, settings: &LlmSettings) -> Keywords {
    let request = CompletionRequest {
        purpose: "keywords".into(),
        system: prompts::SYSTEM_PROMPT.into(),
        user: prompts::keywords(task),
        temperature: settings.generation_temperature,
        max_tokens: settings.max_tokens,
    };
    let parsed = match gateway.complete(request) {
        Ok(text) => parse_string_array(&text),
        Err(e) => {
            log::warn!("keyword generation failed ({e}); using task text");
            None
        }
    };
    match parsed {
        Some(words) => Keywords { words, fallback: false },
        None => {
            let mut seen = Vec::new();
            for w in words(&format!("{} {}", task.objective, task.modalities)) {
                if !seen.contains(&w) {
                    seen.push(w);
                }
            }
            Keywords {
                words: seen,
                fallback: true,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ReplayProvider;

    fn doc(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn counts(chunks: &[String]) -> Vec<usize> {
        chunks.iter().map(|c| c.split_whitespace().count()).collect()
    }

    #[test]
    fn window_arithmetic() {
        let c = chunk_document(&doc(1000), ChunkConfig::default()).unwrap();
        assert_eq!(counts(&c), vec![512, 512, 104]);
        assert!(c[1].starts_with("w448 "));
        assert!(c[2].starts_with("w896 "));
        assert_eq!(counts(&chunk_document(&doc(100), ChunkConfig::default()).unwrap()), vec![100]);
        // a tail of 20 new words folds back
        let c = chunk_document(&doc(980), ChunkConfig::default()).unwrap();
        assert_eq!(counts(&c), vec![512, 532]);
    }

    #[test]
    fn overlap_must_be_below_target() {
        let bad = ChunkConfig { target: 64, overlap: 64 };
        assert!(matches!(chunk_document("a b", bad), Err(KbError::Overlap { .. })));
    }

    #[test]
    fn embedder_is_bag_of_words_and_unit_norm() {
        let e = HashingEmbedder::default();
        let a = embed_chunk("gsr tonic level", &e);
        assert_eq!(a, embed_chunk("tonic gsr level", &e));
        assert_eq!(a, embed_chunk("GSR, tonic level!", &e));
        for t in ["x", "...", "the heart rate variability"] {
            let v = embed_chunk(t, &e);
            assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        }
    }

    fn index() -> KnowledgeIndex {
        let docs = vec![
            ("b".to_string(), "skin conductance responses rise under stress".to_string()),
            ("a".to_string(), "heart rate variability falls during exercise".to_string()),
        ];
        KnowledgeIndex::build(&docs, ChunkConfig::default(), &HashingEmbedder::default()).unwrap()
    }

    #[test]
    fn exact_text_ranks_first() {
        let idx = index();
        let e = HashingEmbedder::default();
        let top = idx.query_top_chunks("heart rate variability falls during exercise", &e, 3).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].chunk.doc_id, "a");
        assert!((top[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let e = HashingEmbedder::default();
        assert!(KnowledgeIndex::empty(&e).query_top_chunks("x", &e, 5).unwrap().is_empty());
    }

    #[test]
    fn persisted_index_round_trips_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.bin");
        let p2 = dir.path().join("two.bin");
        index().save(&p1).unwrap();
        index().save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(KnowledgeIndex::load(&p1).unwrap(), index());
        assert!(dir.path().join("index_manifest.ndjson").exists());
        fs::write(&p1, b"XXXX").unwrap();
        assert!(KnowledgeIndex::load(&p1).is_err());
    }

    #[test]
    fn keywords_and_fallback() {
        let task = TaskContext {
            objective: "Detect stress from skin".into(),
            ..Default::default()
        };
        let mut g = Gateway::new(Box::new(ReplayProvider::new(vec![
            r#"["electrodermal activity","SCR"]"#.into(),
            "I would search for stress papers.".into(),
        ])));
        let k = generate_keywords(&task, &mut g, &LlmSettings::default());
        assert_eq!(k.words, vec!["electrodermal activity", "SCR"]);
        assert!(!k.fallback);
        let k = generate_keywords(&task, &mut g, &LlmSettings::default());
        assert!(k.fallback);
        assert_eq!(k.words, vec!["detect", "stress", "from", "skin"]);
        // exhausted provider also falls back
        assert!(generate_keywords(&task, &mut g, &LlmSettings::default()).fallback);
    }
}
