//! Shared domain types. No I/O, no inference.
//!
//! Everything here is an immutable value; invariants are enforced at
//! construction and all types are freely shareable between threads.
//!
//! Ordering convention used across the whole crate: descending score,
//! ties broken by ascending doc id. See [`ScoredDoc::canonical_cmp`].

use std::cmp::Ordering;
use std::collections::HashSet;

use thiserror::Error;

/// Violation of a domain-type invariant.
#[derive(Debug, Error)]
pub enum TypeError {
    #[error("id must be non-empty and contain no whitespace, got {0:?}")]
    InvalidId(String),
    #[error("score must be finite, got {0} for doc {1:?}")]
    NonFiniteScore(f64, String),
    #[error("duplicate doc id {0:?} in candidate list for query {1:?}")]
    DuplicateDocId(String, String),
    #[error("window config requires 1 <= step <= window size, got window={window} step={step}")]
    InvalidWindow { window: usize, step: usize },
    #[error("identifier scheme must hold 1..=26 distinct letters, requested {0}")]
    InvalidSchemeSize(usize),
    #[error("identifiers must be distinct, {0:?} repeats")]
    DuplicateIdentifier(char),
    #[error("position {position} out of range for identifier scheme of size {size}")]
    PositionOutOfRange { position: usize, size: usize },
    #[error("permutation of length {perm} applied to a window of length {window}")]
    LengthMismatch { perm: usize, window: usize },
    #[error("order {0:?} is not a permutation of 0..{1}")]
    NotAPermutation(Vec<usize>, usize),
}

fn validate_id(id: &str) -> Result<(), TypeError> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(TypeError::InvalidId(id.to_string()));
    }
    Ok(())
}

/// A search query: an id plus free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    id: String,
    text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TypeError> {
        let id = id.into();
        validate_id(&id)?;
        Ok(Self { id, text: text.into() })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// A corpus document. Empty text is tolerated (some corpora ship blank
/// passages); callers that care should check [`Document::text`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    id: String,
    text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, TypeError> {
        let id = id.into();
        validate_id(&id)?;
        Ok(Self { id, text: text.into() })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// A document id paired with a finite retrieval score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    doc_id: String,
    score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Result<Self, TypeError> {
        let doc_id = doc_id.into();
        validate_id(&doc_id)?;
        if !score.is_finite() {
            return Err(TypeError::NonFiniteScore(score, doc_id));
        }
        Ok(Self { doc_id, score })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    /// Descending score, ties broken by ascending doc id. Total because
    /// scores are finite by construction.
    pub fn canonical_cmp(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    }
}

/// An ordered list of scored documents for one query; the unit retrieval
/// emits and reranking permutes.
///
/// Entries are always held in canonical order (descending score, ties by
/// ascending doc id) and doc ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    query_id: String,
    entries: Vec<ScoredDoc>,
}

impl CandidateList {
    /// Builds a list, sorting entries into canonical order. Rejects
    /// duplicate doc ids.
    pub fn new(query_id: impl Into<String>, mut entries: Vec<ScoredDoc>) -> Result<Self, TypeError> {
        let query_id = query_id.into();
        validate_id(&query_id)?;
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.doc_id.as_str()) {
                return Err(TypeError::DuplicateDocId(e.doc_id.clone(), query_id));
            }
        }
        entries.sort_by(ScoredDoc::canonical_cmp);
        Ok(Self { query_id, entries })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn entries(&self) -> &[ScoredDoc] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

/// Sliding-window geometry: `window_size` candidates per window, advancing
/// by `step_size` from the back of the list toward the front.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    window_size: usize,
    step_size: usize,
}

impl WindowConfig {
    pub fn new(window_size: usize, step_size: usize) -> Result<Self, TypeError> {
        if window_size == 0 || step_size == 0 || step_size > window_size {
            return Err(TypeError::InvalidWindow { window: window_size, step: step_size });
        }
        Ok(Self { window_size, step_size })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn step_size(&self) -> usize {
        self.step_size
    }
}

impl Default for WindowConfig {
    /// Window 20, step 10.
    fn default() -> Self {
        Self { window_size: 20, step_size: 10 }
    }
}

/// The per-window document labels: an ordered alphabet of distinct
/// single-letter identifiers. Position `i` in a window is labeled
/// `alphabet[i]`.
///
/// Single uppercase Latin letters keep every identifier a single token in
/// common tokenizers (backends verify this; see `backend::Backend::check_identifiers`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifierScheme {
    alphabet: Vec<char>,
}

impl IdentifierScheme {
    /// The first `n` uppercase letters, `1 <= n <= 26`.
    pub fn uppercase(n: usize) -> Result<Self, TypeError> {
        if n == 0 || n > 26 {
            return Err(TypeError::InvalidSchemeSize(n));
        }
        Ok(Self { alphabet: ('A'..='Z').take(n).collect() })
    }

    /// A custom alphabet; identifiers must be distinct.
    pub fn custom(alphabet: Vec<char>) -> Result<Self, TypeError> {
        if alphabet.is_empty() || alphabet.len() > 26 {
            return Err(TypeError::InvalidSchemeSize(alphabet.len()));
        }
        let mut seen = HashSet::new();
        for &c in &alphabet {
            if !seen.insert(c) {
                return Err(TypeError::DuplicateIdentifier(c));
            }
        }
        Ok(Self { alphabet })
    }

    pub fn size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn identifiers(&self) -> &[char] {
        &self.alphabet
    }

    /// The identifier assigned to a window position.
    pub fn identifier_at(&self, position: usize) -> Result<char, TypeError> {
        self.alphabet
            .get(position)
            .copied()
            .ok_or(TypeError::PositionOutOfRange { position, size: self.alphabet.len() })
    }

    /// Inverse of [`identifier_at`](Self::identifier_at).
    pub fn position_of(&self, identifier: char) -> Option<usize> {
        self.alphabet.iter().position(|&c| c == identifier)
    }
}

impl Default for IdentifierScheme {
    /// "A".."T", matching the default window size of 20.
    fn default() -> Self {
        Self::uppercase(20).expect("20 <= 26")
    }
}

/// A bijection on `{0..k-1}`: `order[i]` is the window position ranked
/// `i`-th by the backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self, TypeError> {
        let k = order.len();
        let mut seen = vec![false; k];
        for &p in &order {
            if p >= k || seen[p] {
                return Err(TypeError::NotAPermutation(order.clone(), k));
            }
            seen[p] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(k: usize) -> Self {
        Self { order: (0..k).collect() }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.order.len()];
        for (i, &p) in self.order.iter().enumerate() {
            inv[p] = i;
        }
        Permutation { order: inv }
    }
}

/// Rearranges `items` so that output position `i` holds
/// `items[perm.order()[i]]`. Errors when lengths disagree.
pub fn apply_permutation<T: Clone>(items: &[T], perm: &Permutation) -> Result<Vec<T>, TypeError> {
    if items.len() != perm.len() {
        return Err(TypeError::LengthMismatch { perm: perm.len(), window: items.len() });
    }
    Ok(perm.order().iter().map(|&p| items[p].clone()).collect())
}
