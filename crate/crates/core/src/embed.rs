//! Name embeddings and cosine-similarity (STS) scores.
//!
//! Two sources are supported: a sentence-level [`EmbeddingStore`] loaded from
//! JSON Lines, where every feature and target name has its own vector, and a
//! [`WordVectorTable`] in word2vec text format, where a name is embedded as the
//! mean of its in-vocabulary token vectors.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STORE_FORMAT: &str = "sts-embed";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: bad header: {reason}")]
    BadHeader { line: usize, reason: String },
    #[error("line {line}: bad record: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("line {line}: vector for {name:?} has length {found}, expected {expected}")]
    DimMismatch {
        line: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate name {name:?}")]
    DuplicateName { line: usize, name: String },
    #[error("line {line}: vector for {name:?} is all zero")]
    ZeroVector { line: usize, name: String },
    #[error("header declares {declared} vectors, found {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("name {0:?} is not in the embedding store")]
    UnknownName(String),
    #[error("name {0:?} has no tokens")]
    EmptyName(String),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least one target name is required")]
    NoTargets,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u32>,
    dim: usize,
    #[serde(default)]
    provenance: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreRecord {
    name: String,
    vector: Vec<f64>,
}

/// Sentence-level embeddings keyed by exact name.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    provenance: String,
    names: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, provenance: impl Into<String>) -> Self {
        EmbeddingStore {
            dim,
            provenance: provenance.into(),
            names: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Inserts a vector; rejects wrong lengths, all-zero vectors and duplicates.
    pub fn insert(&mut self, name: impl Into<String>, vector: Vec<f64>) -> Result<(), EmbedError> {
        self.insert_at(name.into(), vector, 0)
    }

    fn insert_at(&mut self, name: String, vector: Vec<f64>, line: usize) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                line,
                name,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(EmbedError::ZeroVector { line, name });
        }
        if self.index.contains_key(&name) {
            return Err(EmbedError::DuplicateName { line, name });
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.vectors[i].as_slice())
    }

    /// Entries in file order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self, EmbedError> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let io = |source| EmbedError::Io {
            path: "<stream>".into(),
            source,
        };

        let header_line = loop {
            match lines.next() {
                Some((_, Ok(l))) if l.trim().is_empty() => continue,
                Some((i, Ok(l))) => break (i + 1, l),
                Some((_, Err(e))) => return Err(io(e)),
                None => {
                    return Err(EmbedError::BadHeader {
                        line: 1,
                        reason: "file is empty".into(),
                    })
                }
            }
        };
        let header: StoreHeader = serde_json::from_str(&header_line.1).map_err(|e| EmbedError::BadHeader {
            line: header_line.0,
            reason: e.to_string(),
        })?;
        if let Some(f) = &header.format {
            if f != STORE_FORMAT {
                return Err(EmbedError::BadHeader {
                    line: header_line.0,
                    reason: format!("format {f:?} is not {STORE_FORMAT:?}"),
                });
            }
        }
        if let Some(v) = header.version {
            if v != STORE_VERSION {
                return Err(EmbedError::BadHeader {
                    line: header_line.0,
                    reason: format!("unsupported version {v}"),
                });
            }
        }
        if header.dim == 0 {
            return Err(EmbedError::BadHeader {
                line: header_line.0,
                reason: "dim must be positive".into(),
            });
        }

        let mut store = EmbeddingStore::new(header.dim, header.provenance);
        for (i, line) in lines {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StoreRecord = serde_json::from_str(&line).map_err(|e| EmbedError::BadRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
            store.insert_at(rec.name, rec.vector, i + 1)?;
        }
        Ok(store)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        let header = StoreHeader {
            format: Some(STORE_FORMAT.into()),
            version: Some(STORE_VERSION),
            dim: self.dim,
            provenance: self.provenance.clone(),
        };
        writeln!(writer, "{}", serde_json::to_string(&header)?)?;
        for (name, vector) in self.iter() {
            let rec = StoreRecord {
                name: name.to_owned(),
                vector: vector.to_vec(),
            };
            writeln!(writer, "{}", serde_json::to_string(&rec)?)?;
        }
        writer.flush()
    }
}

pub fn load_embedding_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, EmbedError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    EmbeddingStore::read_jsonl(file)
}

/// Word-level vectors for mean pooling. Tokens are stored lowercased.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(name: &str) -> Vec<String> {
    name.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                line: 0,
                name: token.to_owned(),
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.entries.entry(token.to_lowercase()).or_insert(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Parses word2vec text format: `<count> <dim>` then `token v1 .. v_dim` per line.
    pub fn read_text<R: Read>(reader: R) -> Result<Self, EmbedError> {
        let io = |source| EmbedError::Io {
            path: "<stream>".into(),
            source,
        };
        let mut lines = BufReader::new(reader).lines();
        let header = lines.next().transpose().map_err(io)?.ok_or(EmbedError::BadHeader {
            line: 1,
            reason: "file is empty".into(),
        })?;
        let bad_header = |reason: &str| EmbedError::BadHeader {
            line: 1,
            reason: reason.to_owned(),
        };
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad_header("expected `<count> <dim>`"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad_header("expected `<count> <dim>`"))?;

        let mut table = WordVectorTable::new(dim);
        let mut found = 0;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io)?;
            let lineno = i + 2;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let vector = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbedError::BadRecord {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            if vector.len() != dim {
                return Err(EmbedError::DimMismatch {
                    line: lineno,
                    name: token.to_owned(),
                    expected: dim,
                    found: vector.len(),
                });
            }
            table.entries.entry(token.to_lowercase()).or_insert(vector);
            found += 1;
        }
        if found != count {
            return Err(EmbedError::CountMismatch { declared: count, found });
        }
        Ok(table)
    }
}

pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectorTable, EmbedError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    WordVectorTable::read_text(file)
}

/// Mean of the in-vocabulary token vectors of `name`. Returns the zero vector
/// when no token is in the vocabulary; [`cosine`] maps that to similarity 0.
pub fn pool_name(table: &WordVectorTable, name: &str) -> Result<Vec<f64>, EmbedError> {
    let tokens = tokenize(name);
    if tokens.is_empty() {
        return Err(EmbedError::EmptyName(name.to_owned()));
    }
    let mut sum = vec![0.0; table.dim];
    let mut hits = 0usize;
    for v in tokens.iter().filter_map(|t| table.get(t)) {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        hits += 1;
    }
    if hits > 0 {
        let n = hits as f64;
        sum.iter_mut().for_each(|s| *s /= n);
    }
    Ok(sum)
}

/// Cosine similarity, clamped to [−1, 1]. Zero-norm inputs give 0.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::LengthMismatch(u.len(), v.len()));
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Ok(0.0);
    }
    // sqrt of the product keeps self-similarity exactly 1; fall back when it
    // over- or underflows
    let mut denom = (uu * vv).sqrt();
    if !(denom.is_finite() && denom > 0.0) {
        denom = uu.sqrt() * vv.sqrt();
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Where name vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    Store(EmbeddingStore),
    Words(WordVectorTable),
}

impl EmbeddingSource {
    /// Vector for `name`: exact store lookup, or mean pooling over word vectors.
    pub fn embed(&self, name: &str) -> Result<Vec<f64>, EmbedError> {
        match self {
            EmbeddingSource::Store(s) => s
                .get(name)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| EmbedError::UnknownName(name.to_owned())),
            EmbeddingSource::Words(t) => pool_name(t, name),
        }
    }

    pub fn provenance(&self) -> String {
        match self {
            EmbeddingSource::Store(s) => s.provenance().to_owned(),
            EmbeddingSource::Words(t) => format!("word-vectors(dim={}, mean-pooled)", t.dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsScoreConfig {
    pub target_names: Vec<String>,
    /// Embed one-hot features by their source column name instead of `<column>_<category>`.
    #[serde(default)]
    pub strip_category_suffix: bool,
}

impl StsScoreConfig {
    pub fn new(targets: &[&str]) -> Self {
        StsScoreConfig {
            target_names: targets.iter().map(|s| s.to_string()).collect(),
            strip_category_suffix: false,
        }
    }
}

/// Mean cosine between each feature name and the target names.
pub fn sts_relevance(
    source: &EmbeddingSource,
    feature_names: &[String],
    cfg: &StsScoreConfig,
) -> Result<Vec<f64>, EmbedError> {
    if cfg.target_names.is_empty() {
        return Err(EmbedError::NoTargets);
    }
    let targets = cfg
        .target_names
        .iter()
        .map(|t| source.embed(t))
        .collect::<Result<Vec<_>, _>>()?;
    feature_names
        .iter()
        .map(|f| {
            let e = source.embed(f)?;
            let mut total = 0.0;
            for t in &targets {
                total += cosine(&e, t)?;
            }
            Ok(total / targets.len() as f64)
        })
        .collect()
}

/// Pairwise cosine matrix. Each unordered pair is computed once and mirrored;
/// the diagonal is 1 for names with a nonzero vector.
pub fn sts_redundancy(source: &EmbeddingSource, feature_names: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
    let vectors = feature_names
        .iter()
        .map(|f| source.embed(f))
        .collect::<Result<Vec<_>, _>>()?;
    let n = vectors.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = if vectors[i].iter().any(|&x| x != 0.0) { 1.0 } else { 0.0 };
        for j in (i + 1)..n {
            let c = cosine(&vectors[i], &vectors[j])?;
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}
