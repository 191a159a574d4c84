//! Word-vector document embeddings and the semantic similarity feature.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::textproc::cosine_dense;

/// Pretrained word vectors, read-only after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Adds or replaces a vector. Panics if its length differs from `dim`
    /// or it holds a non-finite value.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dim, "embedding dimensionality mismatch");
        assert!(
            vector.iter().all(|v| v.is_finite()),
            "non-finite embedding value"
        );
        self.vectors.insert(token.into(), vector);
    }

    /// Writes the table in the text format read by [`load_embeddings`],
    /// header included, tokens in sorted order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let write = || -> std::io::Result<()> {
            writeln!(out, "{} {}", tokens.len(), self.dim)?;
            for tok in tokens {
                write!(out, "{tok}")?;
                for v in &self.vectors[tok] {
                    write!(out, " {v}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Loads a text word-vector file: an optional `count dim` header line, then
/// one `token v1 .. vdim` line per word. Blank lines are skipped. The first
/// vector line fixes the dimensionality when there is no header.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let format_err = |line: usize, message: String| Error::Format {
        path: PathBuf::from(path),
        line,
        message,
    };

    let mut dim: Option<usize> = None;
    let mut vectors = HashMap::new();
    let mut seen_content = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if !seen_content {
            seen_content = true;
            if let [count, d] = fields[..] {
                if let (Ok(_), Ok(d)) = (count.parse::<usize>(), d.parse::<usize>()) {
                    if d == 0 {
                        return Err(format_err(line_no, "header declares dimension 0".into()));
                    }
                    dim = Some(d);
                    continue;
                }
            }
        }
        let (token, values) = fields.split_first().expect("non-empty");
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected || expected == 0 {
            return Err(format_err(
                line_no,
                format!(
                    "token {token:?} has {} values, expected {expected}",
                    values.len()
                ),
            ));
        }
        let mut vector = Vec::with_capacity(expected);
        for v in values {
            match v.parse::<f32>() {
                Ok(x) if x.is_finite() => vector.push(x),
                _ => {
                    return Err(format_err(
                        line_no,
                        format!("token {token:?} has non-numeric value {v:?}"),
                    ))
                }
            }
        }
        vectors.insert((*token).to_owned(), vector);
    }

    match dim {
        Some(dim) if !vectors.is_empty() => Ok(EmbeddingTable { dim, vectors }),
        _ => Err(format_err(0, "no word vectors found".into())),
    }
}

/// Mean word vector of a document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVector {
    pub values: Vec<f64>,
    /// Tokens found in the table.
    pub covered: usize,
    /// Tokens looked up.
    pub total: usize,
}

/// Averages the vectors of the tokens present in `table`, counting repeats.
/// Tokens missing from the table are skipped.
pub fn embed_document<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> DocVector {
    let mut values = vec![0.0f64; table.dim()];
    let mut covered = 0usize;
    for tok in tokens {
        if let Some(vec) = table.get(tok.as_ref()) {
            for (acc, v) in values.iter_mut().zip(vec) {
                *acc += f64::from(*v);
            }
            covered += 1;
        }
    }
    if covered > 0 {
        let n = covered as f64;
        values.iter_mut().for_each(|v| *v /= n);
    }
    DocVector {
        values,
        covered,
        total: tokens.len(),
    }
}

pub fn semantic_similarity<S: AsRef<str>>(
    pub_tokens: &[S],
    grant_tokens: &[S],
    table: &EmbeddingTable,
) -> f64 {
    let a = embed_document(pub_tokens, table);
    let b = embed_document(grant_tokens, table);
    cosine_dense(&a.values, &b.values)
}
