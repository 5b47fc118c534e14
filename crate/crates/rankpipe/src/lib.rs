//! Multi-stage text ranking at desk scale.
//!
//! The pipeline is the classic retrieve-then-rerank stack:
//!
//! ```text
//! corpus ──► retriever (BM25) ──► candidate lists ──► rerank (sliding window) ──► eval (nDCG@k)
//!                                                        │
//!                                      backend (single-token logits | full generation)
//! ```
//!
//! Two inference paths drive the reranker. The *generation* path asks a
//! backend for the complete identifier permutation as text and parses it;
//! the *single-token* path reads only the logits of the first generated
//! identifier token and sorts by them, cutting decode steps per window from
//! `2m-1` to `1`. The [`objective`] module carries the matching training
//! side: a weighted pairwise ranking loss, a listwise likelihood, their
//! λ-weighted joint combination, analytic gradients, and a small trainer.
//!
//! Modules map onto pipeline stages:
//!
//! - [`types`] — shared domain types (candidate lists, windows, permutations)
//! - [`trec_io`] — JSONL corpora/queries, TREC run files, TREC qrels
//! - [`retriever`] — in-memory inverted index with BM25 scoring
//! - [`backend`] — inference abstraction: oracle mock, scripted mock, HTTP client
//! - [`rerank`] — sliding-window orchestrator and both ranking paths
//! - [`objective`] — losses, gradients, and the toy trainer
//! - [`eval`] — nDCG@k, latency benchmarking, speedup reports

pub mod backend;
pub mod eval;
pub mod objective;
pub mod rerank;
pub mod retriever;
pub mod trec_io;
pub mod types;

pub use types::{CandidateList, Document, Permutation, Query, ScoredDoc, WindowConfig};
