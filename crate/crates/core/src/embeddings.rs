//! Static word vectors and the cosine estimate of pointwise mutual
//! information used by context rejection.
//!
//! Vectors are read from the common word2vec/fastText text format: an
//! optional `count dim` header followed by one `token f1 f2 ... fdim` line
//! per word.

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("embedding table is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_err(line: usize, message: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Format {
        line,
        message: message.into(),
    }
}

/// Read-only table of word vectors stored row-major.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    norms: Vec<f64>,
    skipped_zero: usize,
}

impl EmbeddingTable {
    /// Builds a table from in-memory entries with the same policies as
    /// [`load_embeddings`]: first occurrence wins, zero vectors are dropped.
    pub fn from_entries<I, S>(dimension: usize, entries: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut table = Self::empty(dimension);
        for (i, (token, vector)) in entries.into_iter().enumerate() {
            if vector.len() != dimension {
                return Err(format_err(
                    i + 1,
                    format!("expected {dimension} components, found {}", vector.len()),
                ));
            }
            table.insert(token.into(), &vector);
        }
        Ok(table)
    }

    fn empty(dimension: usize) -> Self {
        Self {
            dimension,
            index: HashMap::new(),
            data: Vec::new(),
            norms: Vec::new(),
            skipped_zero: 0,
        }
    }

    fn insert(&mut self, token: String, vector: &[f32]) {
        if self.index.contains_key(&token) {
            return;
        }
        let norm = vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if norm == 0.0 {
            self.skipped_zero += 1;
            return;
        }
        self.index.insert(token, self.norms.len());
        self.data.extend_from_slice(vector);
        self.norms.push(norm);
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// Number of all-zero vectors dropped while building the table.
    pub fn skipped_zero_vectors(&self) -> usize {
        self.skipped_zero
    }

    fn row(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().or_else(|| {
            let lower = token.to_lowercase();
            if lower == token {
                None
            } else {
                self.index.get(&lower).copied()
            }
        })
    }

    /// Exact-case lookup with a lowercase fallback.
    pub fn contains(&self, token: &str) -> bool {
        self.row(token).is_some()
    }

    pub fn vector(&self, token: &str) -> Option<&[f32]> {
        self.row(token).map(|r| self.slice(r))
    }

    fn slice(&self, row: usize) -> &[f32] {
        &self.data[row * self.dimension..(row + 1) * self.dimension]
    }

    /// Cosine similarity between the stored vectors of `x` and `y`, the
    /// embedding estimate of PMI(x, y). `None` if either token is missing.
    pub fn pmi_estimate(&self, x: &str, y: &str) -> Option<f64> {
        let (rx, ry) = (self.row(x)?, self.row(y)?);
        Some(self.cosine_rows(rx, ry))
    }

    fn cosine_rows(&self, rx: usize, ry: usize) -> f64 {
        let dot: f64 = self
            .slice(rx)
            .iter()
            .zip(self.slice(ry))
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        dot / (self.norms[rx] * self.norms[ry])
    }
}

/// Reads a table in word-vector text format. Duplicate tokens keep their
/// first vector; all-zero vectors are skipped.
pub fn load_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingTable, EmbeddingError> {
    let mut table: Option<EmbeddingTable> = None;
    let mut first = true;
    let mut components = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        let Some((&token, rest)) = fields.split_first() else {
            continue;
        };

        if std::mem::take(&mut first) {
            if let [count, dim] = fields[..] {
                if let (Ok(_), Ok(dim)) = (count.parse::<usize>(), dim.parse::<usize>()) {
                    if dim == 0 {
                        return Err(format_err(line_no, "header declares zero dimensions"));
                    }
                    table = Some(EmbeddingTable::empty(dim));
                    continue;
                }
            }
        }

        components.clear();
        for raw in rest {
            let value: f32 = raw
                .parse()
                .map_err(|_| format_err(line_no, format!("non-numeric component {raw:?}")))?;
            if !value.is_finite() {
                return Err(format_err(line_no, format!("non-finite component {raw:?}")));
            }
            components.push(value);
        }

        let table = table.get_or_insert_with(|| EmbeddingTable::empty(components.len()));
        if components.is_empty() || components.len() != table.dimension {
            return Err(format_err(
                line_no,
                format!(
                    "expected {} components for {token:?}, found {}",
                    table.dimension,
                    components.len()
                ),
            ));
        }
        table.insert(token.to_string(), &components);
    }

    let table = table.ok_or(EmbeddingError::Empty)?;
    if table.skipped_zero > 0 {
        log::warn!("skipped {} all-zero word vectors", table.skipped_zero);
    }
    Ok(table)
}
