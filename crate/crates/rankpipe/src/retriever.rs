//! In-memory inverted index with BM25 scoring — the lexical first stage.
//!
//! # BM25
//!
//! ```text
//! score(q, d) = Σ_t  idf(t) · tf · (k1 + 1) / (tf + k1 · (1 − b + b · len(d)/avglen))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Lucene-style idf with defaults k1 = 0.9, b = 0.4, matching the toolchain
//! family commonly used behind listwise rerankers. No stemming, no
//! stopwords: deterministic and adequate at desk scale, a documented
//! divergence from production BM25 pipelines.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CandidateList, Document, Query, ScoredDoc, TypeError};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("duplicate doc id {0:?}")]
    DuplicateDocId(String),
    #[error("invalid BM25 parameters: k1={k1}, b={b} (need k1 >= 0, 0 <= b <= 1)")]
    InvalidParams { k1: f64, b: f64 },
    #[error("retrieval depth must be >= 1")]
    InvalidDepth,
    #[error("index file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    k1: f64,
    b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        if !(k1.is_finite() && k1 >= 0.0 && b.is_finite() && (0.0..=1.0).contains(&b)) {
            return Err(IndexError::InvalidParams { k1, b });
        }
        Ok(Self { k1, b })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

/// Retrieval depth: how many candidates to return per query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalConfig {
    depth: usize,
}

impl RetrievalConfig {
    pub fn new(depth: usize) -> Result<Self, IndexError> {
        if depth == 0 {
            return Err(IndexError::InvalidDepth);
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
}

impl Default for RetrievalConfig {
    /// Top 100.
    fn default() -> Self {
        Self { depth: 100 }
    }
}

/// Lowercases and splits on non-alphanumeric boundaries, dropping empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Postings keyed by term; each list holds `(doc ordinal, term frequency)`
/// sorted by ordinal. Immutable after build; concurrent searches are safe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    doc_ids: Vec<String>,
}

impl InvertedIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    pub fn doc_length(&self, ordinal: usize) -> u32 {
        self.doc_lengths[ordinal]
    }

    /// Document frequency of a term.
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn term_frequency(&self, term: &str, ordinal: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by_key(&ordinal, |&(d, _)| d).ok().map(|i| list[i].1)
            })
            .unwrap_or(0)
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn tf_part(&self, params: &Bm25Params, tf: u32, ordinal: usize) -> f64 {
        let tf = tf as f64;
        let len_norm = 1.0 - params.b + params.b * self.doc_lengths[ordinal] as f64 / self.avg_doc_length;
        tf * (params.k1 + 1.0) / (tf + params.k1 * len_norm)
    }
}

/// Builds an index over the given documents. Ids must be unique.
pub fn build_index<I>(docs: I) -> Result<InvertedIndex, IndexError>
where
    I: IntoIterator<Item = Document>,
{
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::new();
    let mut doc_ids = Vec::new();
    let mut seen = HashSet::new();

    for doc in docs {
        if !seen.insert(doc.id().to_string()) {
            return Err(IndexError::DuplicateDocId(doc.id().to_string()));
        }
        let ordinal = doc_ids.len() as u32;
        let terms = tokenize(doc.text());
        doc_lengths.push(terms.len() as u32);
        doc_ids.push(doc.id().to_string());

        let mut counts: HashMap<String, u32> = HashMap::new();
        for term in terms {
            *counts.entry(term).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            postings.entry(term).or_default().push((ordinal, tf));
        }
    }

    // Docs are ingested in ordinal order, so each postings list is sorted.
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let avg_doc_length =
        if doc_ids.is_empty() { 0.0 } else { total as f64 / doc_ids.len() as f64 };

    Ok(InvertedIndex { postings, doc_lengths, avg_doc_length, doc_ids })
}

/// BM25 score of one document for the given query terms. Repeated query
/// terms contribute once per occurrence. Zero when no query term occurs in
/// the document.
///
/// The ordinal must be valid for the index.
pub fn bm25_score(
    index: &InvertedIndex,
    params: &Bm25Params,
    query_terms: &[String],
    ordinal: usize,
) -> f64 {
    assert!(ordinal < index.doc_count(), "doc ordinal {ordinal} out of range");
    let mut score = 0.0;
    for term in query_terms {
        let tf = index.term_frequency(term, ordinal as u32);
        if tf == 0 {
            continue;
        }
        score += index.idf(term) * index.tf_part(params, tf, ordinal);
    }
    score
}

/// Top-k retrieval: scores every document sharing at least one term with
/// the query, then keeps the best `depth` in canonical order (descending
/// score, ties by ascending doc id). Documents scoring zero never appear.
pub fn search(
    index: &InvertedIndex,
    params: &Bm25Params,
    query: &Query,
    config: &RetrievalConfig,
) -> CandidateList {
    let terms = tokenize(query.text());
    let mut acc: HashMap<u32, f64> = HashMap::new();
    for term in &terms {
        let Some(list) = index.postings.get(term) else { continue };
        let idf = index.idf(term);
        for &(ordinal, tf) in list {
            *acc.entry(ordinal).or_insert(0.0) += idf * index.tf_part(params, tf, ordinal as usize);
        }
    }

    let mut scored: Vec<ScoredDoc> = acc
        .into_iter()
        .filter(|&(_, s)| s > 0.0)
        .map(|(ordinal, s)| {
            ScoredDoc::new(index.doc_id(ordinal as usize), s).expect("finite BM25 score")
        })
        .collect();
    scored.sort_by(ScoredDoc::canonical_cmp);
    scored.truncate(config.depth);

    CandidateList::new(query.id(), scored).expect("unique ordinals imply unique doc ids")
}

const INDEX_FORMAT: &str = "rankpipe-index";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    index: InvertedIndex,
}

/// Persists an index with a format/version header.
pub fn save_index<W: Write>(index: &InvertedIndex, writer: W) -> Result<(), IndexError> {
    let file = IndexFile {
        format: INDEX_FORMAT.to_string(),
        version: INDEX_VERSION,
        index: index.clone(),
    };
    serde_json::to_writer(writer, &file)
        .map_err(|e| IndexError::MalformedFile(format!("serialize: {e}")))
}

/// Loads a persisted index, validating the header and every structural
/// invariant. `load(save(x)) == x`.
pub fn load_index<R: BufRead>(reader: R) -> Result<InvertedIndex, IndexError> {
    let file: IndexFile =
        serde_json::from_reader(reader).map_err(|e| IndexError::MalformedFile(e.to_string()))?;
    if file.format != INDEX_FORMAT {
        return Err(IndexError::MalformedFile(format!("unknown format tag {:?}", file.format)));
    }
    if file.version != INDEX_VERSION {
        return Err(IndexError::MalformedFile(format!(
            "unsupported version {} (expected {INDEX_VERSION})",
            file.version
        )));
    }
    let index = file.index;

    let n = index.doc_ids.len();
    if index.doc_lengths.len() != n {
        return Err(IndexError::MalformedFile("doc_lengths/doc_ids length mismatch".into()));
    }
    let mut seen = HashSet::new();
    for id in &index.doc_ids {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(IndexError::MalformedFile(format!("invalid doc id {id:?}")));
        }
        if !seen.insert(id) {
            return Err(IndexError::MalformedFile(format!("duplicate doc id {id:?}")));
        }
    }
    for (term, list) in &index.postings {
        if list.is_empty() {
            return Err(IndexError::MalformedFile(format!("empty postings for term {term:?}")));
        }
        let mut prev: Option<u32> = None;
        for &(ordinal, tf) in list {
            if ordinal as usize >= n {
                return Err(IndexError::MalformedFile(format!(
                    "ordinal {ordinal} out of range for term {term:?}"
                )));
            }
            if tf == 0 {
                return Err(IndexError::MalformedFile(format!(
                    "zero term frequency for term {term:?}"
                )));
            }
            if prev.is_some_and(|p| p >= ordinal) {
                return Err(IndexError::MalformedFile(format!(
                    "postings for term {term:?} not strictly sorted by ordinal"
                )));
            }
            prev = Some(ordinal);
        }
    }
    let total: u64 = index.doc_lengths.iter().map(|&l| l as u64).sum();
    let expect_avg = if n == 0 { 0.0 } else { total as f64 / n as f64 };
    if !(index.avg_doc_length.is_finite() && (index.avg_doc_length - expect_avg).abs() <= 1e-9) {
        return Err(IndexError::MalformedFile(format!(
            "avg_doc_length {} inconsistent with doc_lengths (expected {expect_avg})",
            index.avg_doc_length
        )));
    }
    Ok(index)
}
