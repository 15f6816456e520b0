//! Exact inner-product top-k search over fixed-dimension vectors.
//!
//! The index is a full scan over an immutable snapshot: desk-scale corpora
//! make exactness affordable, and the same code doubles as the oracle-grade
//! retrieval used by global filtering and evaluation. Refreshes build a
//! complete new snapshot off-line and publish it with an atomic swap, so
//! searches in flight keep the snapshot they started with.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::lang::LangRules;
use crate::prompt::{self, PromptError};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector for `{id}` contains a non-finite value")]
    NonFinite { id: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("k must be >= 1")]
    BadK,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad matrix file: {message}")]
    BadFile { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

/// An immutable, versioned collection of embedding records.
#[derive(Debug)]
pub struct IndexSnapshot {
    dim: usize,
    version: u64,
    ids: Vec<String>,
    /// Row-major, ids.len() x dim.
    vectors: Vec<f32>,
}

impl IndexSnapshot {
    fn build(records: &[EmbeddingRecord], version: u64) -> Result<Self, IndexError> {
        if records.is_empty() {
            return Err(IndexError::Empty("records"));
        }
        let dim = records[0].vector.len();
        let mut ids = Vec::with_capacity(records.len());
        let mut vectors = Vec::with_capacity(records.len() * dim);
        for record in records {
            if record.vector.len() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: record.vector.len(),
                });
            }
            if record.vector.iter().any(|v| !v.is_finite()) {
                return Err(IndexError::NonFinite {
                    id: record.id.clone(),
                });
            }
            ids.push(record.id.clone());
            vectors.extend_from_slice(&record.vector);
        }
        Ok(IndexSnapshot {
            dim,
            version,
            ids,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub id: String,
    pub score: f32,
}

/// Results carry the snapshot version they were computed against.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub version: u64,
    pub hits: Vec<SearchHit>,
}

/// Exact top-k by dot product with a total order: descending score, ties by
/// ascending id.
pub fn search(snap: &IndexSnapshot, query: &[f32], k: usize) -> Result<SearchResult, IndexError> {
    if k == 0 {
        return Err(IndexError::BadK);
    }
    if query.len() != snap.dim {
        return Err(IndexError::DimensionMismatch {
            expected: snap.dim,
            got: query.len(),
        });
    }
    let mut scored: Vec<(f32, usize)> = (0..snap.len())
        .map(|i| {
            let score = snap
                .row(i)
                .iter()
                .zip(query)
                .map(|(a, b)| a * b)
                .sum::<f32>();
            (score, i)
        })
        .collect();
    scored.sort_by(|(sa, ia), (sb, ib)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| snap.ids[*ia].cmp(&snap.ids[*ib]))
    });
    scored.truncate(k);
    Ok(SearchResult {
        version: snap.version,
        hits: scored
            .into_iter()
            .map(|(score, i)| SearchHit {
                id: snap.ids[i].clone(),
                score,
            })
            .collect(),
    })
}

/// Shared handle over the current snapshot: many concurrent readers, one
/// writer, publication by atomic swap.
#[derive(Debug)]
pub struct SearchIndex {
    current: RwLock<Arc<IndexSnapshot>>,
}

impl SearchIndex {
    pub fn new(records: &[EmbeddingRecord]) -> Result<Self, IndexError> {
        Ok(SearchIndex {
            current: RwLock::new(Arc::new(IndexSnapshot::build(records, 1)?)),
        })
    }

    /// The snapshot readers should search against; the Arc keeps it alive
    /// even across concurrent refreshes.
    pub fn snapshot(&self) -> Arc<IndexSnapshot> {
        self.current.read().expect("index lock poisoned").clone()
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<SearchResult, IndexError> {
        search(&self.snapshot(), query, k)
    }

    /// Build a complete new snapshot from `new_records` and publish it
    /// atomically. On error the current snapshot and version are unchanged.
    pub fn refresh(&self, new_records: &[EmbeddingRecord]) -> Result<u64, IndexError> {
        let next_version = self.version() + 1;
        let snapshot = IndexSnapshot::build(new_records, next_version)?;
        *self.current.write().expect("index lock poisoned") = Arc::new(snapshot);
        Ok(next_version)
    }
}

/// Per-row layer normalization (zero mean, unit variance, epsilon 1e-6,
/// identity affine) followed by column-wise mean pooling.
pub fn pool_embedding(token_states: &[Vec<f64>]) -> Result<Vec<f64>, IndexError> {
    if token_states.is_empty() {
        return Err(IndexError::Empty("token states"));
    }
    let dim = token_states[0].len();
    if dim == 0 {
        return Err(IndexError::Empty("token state dimension"));
    }
    const EPS: f64 = 1e-6;
    let mut pooled = vec![0.0; dim];
    for row in token_states {
        if row.len() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
        let denom = (var + EPS).sqrt();
        for (acc, v) in pooled.iter_mut().zip(row) {
            *acc += (v - mean) / denom;
        }
    }
    let t = token_states.len() as f64;
    for v in &mut pooled {
        *v /= t;
    }
    Ok(pooled)
}

/// Retrieval query text: the question plus the answer-language instruction.
pub fn format_query(
    question: &str,
    answer_lang: &str,
    rules: &LangRules,
) -> Result<String, IndexError> {
    let instruction = prompt::answer_instruction(answer_lang, rules)?;
    Ok(format!("{question} {instruction}"))
}

const MATRIX_MAGIC: &[u8; 4] = b"EMBX";

fn io_err(path: &Path, source: std::io::Error) -> IndexError {
    IndexError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write records as a contiguous little-endian f32 row-major matrix with a
/// `{magic, dim, count}` header, plus a sidecar id list (one id per line).
pub fn write_matrix(
    matrix_path: &Path,
    ids_path: &Path,
    records: &[EmbeddingRecord],
) -> Result<(), IndexError> {
    if records.is_empty() {
        return Err(IndexError::Empty("records"));
    }
    let dim = records[0].vector.len();
    let mut writer =
        BufWriter::new(File::create(matrix_path).map_err(|e| io_err(matrix_path, e))?);
    let w = |writer: &mut BufWriter<File>, bytes: &[u8]| {
        writer.write_all(bytes).map_err(|e| io_err(matrix_path, e))
    };
    w(&mut writer, MATRIX_MAGIC)?;
    w(&mut writer, &(dim as u32).to_le_bytes())?;
    w(&mut writer, &(records.len() as u64).to_le_bytes())?;
    for record in records {
        if record.vector.len() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                got: record.vector.len(),
            });
        }
        for v in &record.vector {
            w(&mut writer, &v.to_le_bytes())?;
        }
    }
    writer.flush().map_err(|e| io_err(matrix_path, e))?;

    let mut ids = BufWriter::new(File::create(ids_path).map_err(|e| io_err(ids_path, e))?);
    for record in records {
        writeln!(ids, "{}", record.id).map_err(|e| io_err(ids_path, e))?;
    }
    ids.flush().map_err(|e| io_err(ids_path, e))?;
    Ok(())
}

pub fn read_matrix(matrix_path: &Path, ids_path: &Path) -> Result<Vec<EmbeddingRecord>, IndexError> {
    let bad = |message: String| IndexError::BadFile {
        path: matrix_path.display().to_string(),
        message,
    };
    let mut reader =
        BufReader::new(File::open(matrix_path).map_err(|e| io_err(matrix_path, e))?);
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(|e| io_err(matrix_path, e))?;
    if &magic != MATRIX_MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut dim_bytes = [0u8; 4];
    reader
        .read_exact(&mut dim_bytes)
        .map_err(|e| io_err(matrix_path, e))?;
    let dim = u32::from_le_bytes(dim_bytes) as usize;
    let mut count_bytes = [0u8; 8];
    reader
        .read_exact(&mut count_bytes)
        .map_err(|e| io_err(matrix_path, e))?;
    let count = u64::from_le_bytes(count_bytes) as usize;

    let ids_text = std::fs::read_to_string(ids_path).map_err(|e| io_err(ids_path, e))?;
    let ids: Vec<&str> = ids_text.lines().collect();
    if ids.len() != count {
        return Err(bad(format!("{} ids for {count} rows", ids.len())));
    }

    let mut records = Vec::with_capacity(count);
    let mut buf = vec![0u8; dim * 4];
    for id in ids {
        reader.read_exact(&mut buf).map_err(|e| io_err(matrix_path, e))?;
        let vector: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(EmbeddingRecord {
            id: id.to_string(),
            vector,
        });
    }
    Ok(records)
}
