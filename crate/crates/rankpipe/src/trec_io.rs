//! On-disk formats: JSONL corpora and queries, TREC run files, TREC qrels.
//!
//! Wire formats, exactly as trec_eval-style tooling expects:
//!
//! ```text
//! run file:  qid Q0 docid rank score tag\n     (score printed with 6 decimals)
//! qrels:     qid 0 docid grade\n
//! corpus:    {"id": "...", "contents": "..."}  one object per line
//! queries:   {"id": "...", "text": "..."}      one object per line
//! ```
//!
//! Input is split on any run of whitespace; output uses a single space.
//! Corpus lines accept `"text"` as an alias for `"contents"` (both appear
//! in common IR corpus dumps), and query lines accept the reverse alias.
//! All parse errors name the offending line.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, Write};

use serde::Deserialize;
use thiserror::Error;

use crate::types::{CandidateList, Document, Query, ScoredDoc, TypeError};

#[derive(Debug, Error)]
pub enum TrecIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

impl TrecIoError {
    fn at(line: usize, msg: impl Into<String>) -> Self {
        Self::Malformed { line, msg: msg.into() }
    }
}

/// Graded relevance judgments: `(query, doc) -> grade`, grades >= 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    per_query: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.per_query.get(query_id)?.get(doc_id).copied()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.per_query.keys().map(String::as_str)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.per_query.contains_key(query_id)
    }

    /// All grades for a query, sorted descending — the ideal gain vector.
    pub fn ideal_gains(&self, query_id: &str) -> Vec<u32> {
        let mut grades: Vec<u32> = self
            .per_query
            .get(query_id)
            .map(|docs| docs.values().copied().collect())
            .unwrap_or_default();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        grades
    }

    pub fn has_positive_judgment(&self, query_id: &str) -> bool {
        self.per_query
            .get(query_id)
            .is_some_and(|docs| docs.values().any(|&g| g > 0))
    }

    pub fn len(&self) -> usize {
        self.per_query.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.is_empty()
    }

    /// Test-support constructor.
    pub fn from_entries<I, Q, D>(entries: I) -> Result<Self, TrecIoError>
    where
        I: IntoIterator<Item = (Q, D, u32)>,
        Q: Into<String>,
        D: Into<String>,
    {
        let mut qrels = Qrels::default();
        for (i, (q, d, g)) in entries.into_iter().enumerate() {
            if qrels.per_query.entry(q.into()).or_default().insert(d.into(), g).is_some() {
                return Err(TrecIoError::at(i + 1, "duplicate (query, doc) judgment"));
            }
        }
        Ok(qrels)
    }
}

#[derive(Deserialize)]
struct CorpusLine {
    id: String,
    #[serde(alias = "text")]
    contents: String,
}

#[derive(Deserialize)]
struct QueryLine {
    id: String,
    #[serde(alias = "contents")]
    text: String,
}

/// Streaming JSONL corpus parser. Yields documents in file order and fails
/// on the line that introduces a duplicate id.
pub struct CorpusReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
    done: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self { lines: reader.lines(), line_no: 0, seen: HashSet::new(), done: false }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document, TrecIoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Result<CorpusLine, _> = serde_json::from_str(&line);
            let result = match parsed {
                Ok(rec) => {
                    if !self.seen.insert(rec.id.clone()) {
                        Err(TrecIoError::at(self.line_no, format!("duplicate doc id {:?}", rec.id)))
                    } else {
                        Document::new(rec.id, rec.contents)
                            .map_err(|e: TypeError| TrecIoError::at(self.line_no, e.to_string()))
                    }
                }
                Err(e) => Err(TrecIoError::at(self.line_no, e.to_string())),
            };
            if result.is_err() {
                self.done = true;
            }
            return Some(result);
        }
    }
}

/// Parses a JSONL corpus (`{"id", "contents"}` per line) into a document stream.
pub fn parse_corpus_jsonl<R: BufRead>(reader: R) -> CorpusReader<R> {
    CorpusReader::new(reader)
}

/// Collects an entire JSONL corpus.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, TrecIoError> {
    parse_corpus_jsonl(reader).collect()
}

/// Parses a JSONL query file (`{"id", "text"}` per line).
pub fn parse_queries_jsonl<R: BufRead>(reader: R) -> Result<Vec<Query>, TrecIoError> {
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QueryLine = serde_json::from_str(&line)
            .map_err(|e| TrecIoError::at(line_no, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(TrecIoError::at(line_no, format!("duplicate query id {:?}", rec.id)));
        }
        queries.push(
            Query::new(rec.id, rec.text).map_err(|e| TrecIoError::at(line_no, e.to_string()))?,
        );
    }
    Ok(queries)
}

/// Parses a TREC run file into per-query candidate lists.
///
/// Rows are `qid iter docid rank score tag`; queries may interleave, but
/// within one query ranks must read 1, 2, 3, ... in file order. Scores must
/// be finite. The iteration column (`Q0`) is accepted as any token and
/// ignored. Entries come back in canonical order — for rows with distinct
/// scores that is exactly the rank order; tied scores normalize to
/// ascending doc id.
pub fn parse_run<R: BufRead>(reader: R) -> Result<BTreeMap<String, CandidateList>, TrecIoError> {
    let mut per_query: BTreeMap<String, Vec<ScoredDoc>> = BTreeMap::new();
    let mut next_rank: BTreeMap<String, u32> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(TrecIoError::at(
                line_no,
                format!("expected 6 whitespace-separated columns, got {}", cols.len()),
            ));
        }
        let (qid, docid) = (cols[0], cols[2]);
        let rank: u32 = cols[3]
            .parse()
            .map_err(|_| TrecIoError::at(line_no, format!("non-numeric rank {:?}", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| TrecIoError::at(line_no, format!("non-numeric score {:?}", cols[4])))?;
        if !score.is_finite() {
            return Err(TrecIoError::at(line_no, format!("non-finite score {:?}", cols[4])));
        }

        if !seen.insert((qid.to_string(), docid.to_string())) {
            return Err(TrecIoError::at(
                line_no,
                format!("duplicate (query, doc) pair ({qid:?}, {docid:?})"),
            ));
        }
        let expected = next_rank.entry(qid.to_string()).or_insert(1);
        if rank != *expected {
            return Err(TrecIoError::at(
                line_no,
                format!("rank {rank} for query {qid:?} breaks contiguity, expected {expected}"),
            ));
        }
        *expected += 1;

        let entry =
            ScoredDoc::new(docid, score).map_err(|e| TrecIoError::at(line_no, e.to_string()))?;
        per_query.entry(qid.to_string()).or_default().push(entry);
    }

    per_query
        .into_iter()
        .map(|(qid, entries)| {
            CandidateList::new(qid.clone(), entries)
                .map(|list| (qid, list))
                .map_err(|e| TrecIoError::at(0, e.to_string()))
        })
        .collect()
}

/// Writes a run in TREC format, queries in map order, ranks 1..n, scores
/// with 6 decimal places, columns separated by single spaces.
pub fn write_run<W: Write>(
    run: &BTreeMap<String, CandidateList>,
    tag: &str,
    mut sink: W,
) -> Result<(), TrecIoError> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(TrecIoError::at(0, format!("run tag must be a single token, got {tag:?}")));
    }
    for (qid, list) in run {
        for (i, entry) in list.entries().iter().enumerate() {
            writeln!(sink, "{qid} Q0 {} {} {:.6} {tag}", entry.doc_id(), i + 1, entry.score())?;
        }
    }
    Ok(())
}

/// Parses TREC qrels: `qid 0 docid grade` rows, grades are integers >= 0.
pub fn parse_qrels<R: BufRead>(reader: R) -> Result<Qrels, TrecIoError> {
    let mut qrels = Qrels::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(TrecIoError::at(
                line_no,
                format!("expected 4 whitespace-separated columns, got {}", cols.len()),
            ));
        }
        let (qid, docid) = (cols[0], cols[2]);
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| TrecIoError::at(line_no, format!("non-numeric grade {:?}", cols[3])))?;
        if grade < 0 {
            return Err(TrecIoError::at(line_no, format!("negative grade {grade}")));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| TrecIoError::at(line_no, format!("grade {grade} out of range")))?;
        if qrels
            .per_query
            .entry(qid.to_string())
            .or_default()
            .insert(docid.to_string(), grade)
            .is_some()
        {
            return Err(TrecIoError::at(
                line_no,
                format!("duplicate judgment for ({qid:?}, {docid:?})"),
            ));
        }
    }
    Ok(qrels)
}
