//! Tokenization, term statistics, tf-idf vectors and cosine similarity.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Lowercasing tokenizer that splits on any non-alphanumeric character and
/// drops single-character tokens. Stopword removal is off unless a list is
/// supplied.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer {
    stopwords: HashSet<String>,
}

impl Tokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let stopwords = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        Tokenizer { stopwords }
    }

    /// Reads a stopword file with one token per line.
    pub fn from_stopword_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::with_stopwords(text.lines()))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|piece| piece.chars().nth(1).is_some())
            .map(str::to_lowercase)
            .filter(|tok| !self.stopwords.contains(tok))
            .collect()
    }

    pub fn bag(&self, text: &str) -> TermBag {
        TermBag::from_tokens(self.tokenize(text))
    }
}

/// Tokenizes with the default settings (no stopwords).
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

/// Term counts of one document. Iteration is in term order, so every sum
/// computed over a bag is reproducible.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermBag {
    counts: BTreeMap<String, u32>,
    length: u32,
}

impl TermBag {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut bag = TermBag::default();
        for tok in tokens {
            *bag.counts.entry(tok.into()).or_insert(0) += 1;
            bag.length += 1;
        }
        bag
    }

    /// Builds a bag from explicit counts; zero counts are ignored.
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u32)>,
        S: Into<String>,
    {
        let mut bag = TermBag::default();
        for (term, count) in counts {
            if count == 0 {
                continue;
            }
            *bag.counts.entry(term.into()).or_insert(0) += count;
            bag.length += count;
        }
        bag
    }

    pub fn count(&self, term: &str) -> u32 {
        self.counts.get(term).copied().unwrap_or(0)
    }

    /// Total number of tokens.
    pub fn len(&self) -> u32 {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    /// Number of distinct terms.
    pub fn unique_count(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.counts.iter().map(|(t, &c)| (t.as_str(), c))
    }
}

/// Corpus statistics over one grant-description view.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    doc_count: usize,
    df: HashMap<String, u64>,
    cf: HashMap<String, u64>,
    total_tokens: u64,
}

impl Vocabulary {
    pub fn build(docs: &[TermBag]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus(
                "cannot build a vocabulary from zero documents".into(),
            ));
        }
        let mut df: HashMap<String, u64> = HashMap::new();
        let mut cf: HashMap<String, u64> = HashMap::new();
        let mut total_tokens = 0u64;
        for doc in docs {
            for (term, count) in doc.iter() {
                *df.entry(term.to_owned()).or_insert(0) += 1;
                *cf.entry(term.to_owned()).or_insert(0) += u64::from(count);
            }
            total_tokens += u64::from(doc.len());
        }
        Ok(Vocabulary {
            doc_count: docs.len(),
            df,
            cf,
            total_tokens,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn df(&self, term: &str) -> u64 {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn cf(&self, term: &str) -> u64 {
        self.cf.get(term).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.total_tokens as f64 / self.doc_count as f64
    }

    pub fn term_count(&self) -> usize {
        self.df.len()
    }

    /// `ln(|D| / (df + 1))`, with `df = 0` for unseen terms.
    pub fn idf(&self, term: &str) -> f64 {
        (self.doc_count as f64 / (self.df(term) as f64 + 1.0)).ln()
    }
}

/// Sparse real vector keyed by term. Zero weights are never stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: BTreeMap<String, f64>,
}

impl SparseVector {
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let entries = entries
            .into_iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|(t, w)| (t.into(), w))
            .collect();
        SparseVector { entries }
    }

    pub fn get(&self, term: &str) -> f64 {
        self.entries.get(term).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(t, &w)| (t.as_str(), w))
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .entries
            .iter()
            .filter_map(|(t, w)| large.entries.get(t).map(|v| w * v))
            .sum()
    }

    pub fn cosine(&self, other: &SparseVector) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return 0.0;
        }
        (self.dot(other) / denom).clamp(-1.0, 1.0)
    }
}

/// Raw count times smoothed idf for every term of `bag`.
pub fn tfidf_vector(bag: &TermBag, vocab: &Vocabulary) -> SparseVector {
    SparseVector::from_entries(
        bag.iter()
            .map(|(term, count)| (term, f64::from(count) * vocab.idf(term))),
    )
}

pub fn cosine_similarity(a: &SparseVector, b: &SparseVector) -> f64 {
    a.cosine(b)
}

/// Cosine of two dense vectors of equal length; 0 when either norm is 0.
pub fn cosine_dense(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (dot / denom).clamp(-1.0, 1.0)
    }
}
