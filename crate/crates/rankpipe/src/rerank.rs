//! Sliding-window listwise reranking.
//!
//! A window of `m` candidates slides from the back of the list toward the
//! front with stride `s`; each window is reordered in place before the next
//! one is formed, so strong documents carried over in the `m - s` overlap
//! bubble toward the top. The final window is clamped to start at 0 — every
//! document is seen at least once even when `n` is not aligned to `s`.
//!
//! Per window the backend is consulted in one of two modes:
//!
//! - **single-token**: order positions by the first-decode-step logits of
//!   their identifiers (one decode step per window);
//! - **generation**: parse the generated identifier permutation text, with
//!   a repair pass for the malformed outputs real models produce.
//!
//! Whatever the backend does — including adversarial garbage under repair —
//! the output of a query is always a permutation of its input. A backend
//! failure aborts the query with the partial trace attached; there is no
//! silently half-reranked output.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::backend::{Backend, BackendError, PromptWindow};
use crate::types::{
    apply_permutation, CandidateList, IdentifierScheme, Permutation, ScoredDoc, TypeError,
    WindowConfig,
};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("window of {window} docs exceeds identifier scheme of size {scheme}")]
    WindowExceedsScheme { window: usize, scheme: usize },
    #[error("window size must be >= 1")]
    EmptyWindow,
    #[error("strict parse: duplicate identifier {0:?}")]
    DuplicateIdentifier(char),
    #[error("strict parse: unrecognized symbol {0:?}")]
    UnknownSymbol(char),
    #[error("strict parse: missing identifiers {0:?}")]
    MissingIdentifiers(Vec<char>),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend failed at window starting at {window_start} after {} completed windows: {source}", .completed.len())]
    QueryAborted {
        window_start: usize,
        completed: Vec<WindowTrace>,
        source: Box<RerankError>,
    },
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Which inference path drives each window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    SingleToken,
    Generation,
}

impl fmt::Display for RerankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RerankMode::SingleToken => f.write_str("single_token"),
            RerankMode::Generation => f.write_str("generation"),
        }
    }
}

/// How to treat malformed generation output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepairPolicy {
    /// Any duplicate, unknown, or missing identifier is an error.
    Strict,
    /// Keep the first occurrence of each valid identifier, drop everything
    /// unrecognized, append missing identifiers in window order.
    Repair,
}

/// Full reranking configuration. `depth` caps how far down the candidate
/// list reranking reaches (documents below it pass through untouched);
/// `truncate_chars` is the per-passage prompt budget.
#[derive(Debug, Clone)]
pub struct RerankConfig {
    pub window: WindowConfig,
    pub mode: RerankMode,
    pub scheme: IdentifierScheme,
    pub repair_policy: RepairPolicy,
    pub depth: usize,
    pub truncate_chars: usize,
}

impl RerankConfig {
    pub fn new(
        window: WindowConfig,
        mode: RerankMode,
        scheme: IdentifierScheme,
        repair_policy: RepairPolicy,
    ) -> Result<Self, RerankError> {
        if scheme.size() < window.window_size() {
            return Err(RerankError::WindowExceedsScheme {
                window: window.window_size(),
                scheme: scheme.size(),
            });
        }
        Ok(Self { window, mode, scheme, repair_policy, depth: 100, truncate_chars: 1000 })
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_truncate_chars(mut self, budget: usize) -> Self {
        self.truncate_chars = budget;
        self
    }
}

impl Default for RerankConfig {
    /// Window 20 step 10, single-token mode, identifiers "A".."T", repair
    /// policy, depth 100, 1000-char passages.
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            mode: RerankMode::SingleToken,
            scheme: IdentifierScheme::default(),
            repair_policy: RepairPolicy::Repair,
            depth: 100,
            truncate_chars: 1000,
        }
    }
}

fn duration_as_secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Evidence from one window call: what went in, what came out, what it
/// cost, and which repairs were applied.
#[derive(Debug, Clone, Serialize)]
pub struct WindowTrace {
    pub window_start: usize,
    pub input_doc_ids: Vec<String>,
    pub output_doc_ids: Vec<String>,
    pub decode_steps: usize,
    #[serde(serialize_with = "duration_as_secs")]
    pub wall_time: Duration,
    pub repairs_applied: Vec<String>,
}

/// Renders a deterministic prompt for one window. Passage text beyond
/// `truncate_chars` characters is cut and the identifier recorded in
/// [`PromptWindow::truncated`].
pub fn build_prompt(
    query_text: &str,
    passages: &[String],
    scheme: &IdentifierScheme,
    truncate_chars: usize,
) -> Result<PromptWindow, RerankError> {
    use std::fmt::Write;

    let k = passages.len();
    if k == 0 {
        return Err(RerankError::EmptyWindow);
    }
    if k > scheme.size() {
        return Err(RerankError::WindowExceedsScheme { window: k, scheme: scheme.size() });
    }

    let mut labeled = Vec::with_capacity(k);
    let mut truncated = Vec::new();
    for (i, passage) in passages.iter().enumerate() {
        let ident = scheme.identifier_at(i).expect("k <= scheme size");
        let text = if passage.chars().count() > truncate_chars {
            truncated.push(ident);
            passage.chars().take(truncate_chars).collect()
        } else {
            passage.clone()
        };
        labeled.push((ident, text));
    }

    let mut prompt = String::new();
    writeln!(
        prompt,
        "You are given {k} passages, each labeled with a single letter identifier."
    )
    .unwrap();
    writeln!(prompt, "Rank the passages by relevance to the query, most relevant first.").unwrap();
    writeln!(prompt).unwrap();
    writeln!(prompt, "Query: {query_text}").unwrap();
    writeln!(prompt).unwrap();
    for (ident, text) in &labeled {
        writeln!(prompt, "{ident}. {text}").unwrap();
    }
    writeln!(prompt).unwrap();
    write!(
        prompt,
        "Answer with the ranking of all {k} identifiers, like \"B > A > C\", \
         most relevant first. Use each identifier exactly once and output nothing else."
    )
    .unwrap();

    Ok(PromptWindow {
        query_text: query_text.to_string(),
        passages: labeled,
        rendered_prompt: prompt,
        truncated,
    })
}

/// Orders window positions by descending first-token logit; ties keep the
/// original window position (the first-stage ordering). The backend's
/// logits are validated against the window — a missing identifier is a
/// contract error.
pub fn rank_window_single_token(
    window: &PromptWindow,
    backend: &dyn Backend,
) -> Result<Permutation, RerankError> {
    let logits = backend.first_token_logits(window)?;
    logits.validate_for(window)?;
    let idents: Vec<char> = window.identifiers().collect();
    let mut order: Vec<usize> = (0..idents.len()).collect();
    order.sort_by(|&a, &b| {
        logits.scores[&idents[b]]
            .partial_cmp(&logits.scores[&idents[a]])
            .expect("logits validated finite")
            .then(a.cmp(&b))
    });
    Ok(Permutation::new(order).expect("argsort of 0..k is a permutation"))
}

/// Parses generated permutation text over the first `window_size`
/// identifiers of the scheme.
///
/// Characters are scanned left to right; whitespace and `>` separate
/// identifiers. Under [`RepairPolicy::Strict`] any duplicate, unrecognized,
/// or missing identifier is an error. Under [`RepairPolicy::Repair`] the
/// first occurrence of each valid identifier is kept, everything else is
/// dropped, and missing identifiers are appended in window order; the
/// returned notes describe each repair. The result is always a full
/// permutation of `{0..window_size-1}`.
pub fn parse_permutation(
    raw_text: &str,
    window_size: usize,
    scheme: &IdentifierScheme,
    policy: RepairPolicy,
) -> Result<(Permutation, Vec<String>), RerankError> {
    if window_size == 0 {
        return Err(RerankError::EmptyWindow);
    }
    if window_size > scheme.size() {
        return Err(RerankError::WindowExceedsScheme {
            window: window_size,
            scheme: scheme.size(),
        });
    }

    let mut order = Vec::with_capacity(window_size);
    let mut seen = vec![false; window_size];
    let mut duplicates = 0usize;
    let mut unrecognized = 0usize;

    for ch in raw_text.chars() {
        if ch.is_whitespace() || ch == '>' {
            continue;
        }
        match scheme.position_of(ch) {
            Some(pos) if pos < window_size => {
                if seen[pos] {
                    if policy == RepairPolicy::Strict {
                        return Err(RerankError::DuplicateIdentifier(ch));
                    }
                    duplicates += 1;
                } else {
                    seen[pos] = true;
                    order.push(pos);
                }
            }
            _ => {
                if policy == RepairPolicy::Strict {
                    return Err(RerankError::UnknownSymbol(ch));
                }
                unrecognized += 1;
            }
        }
    }

    let missing: Vec<usize> = (0..window_size).filter(|&p| !seen[p]).collect();
    if !missing.is_empty() && policy == RepairPolicy::Strict {
        let chars = missing
            .iter()
            .map(|&p| scheme.identifier_at(p).expect("p < window_size <= scheme size"))
            .collect();
        return Err(RerankError::MissingIdentifiers(chars));
    }

    let mut repairs = Vec::new();
    if raw_text.trim().is_empty() {
        repairs.push("empty generation; fell back to window order".to_string());
    }
    if duplicates > 0 {
        repairs.push(format!("dropped {duplicates} duplicate identifier occurrence(s)"));
    }
    if unrecognized > 0 {
        repairs.push(format!("dropped {unrecognized} unrecognized symbol(s)"));
    }
    if !missing.is_empty() && !raw_text.trim().is_empty() {
        let chars: Vec<char> = missing
            .iter()
            .map(|&p| scheme.identifier_at(p).expect("in range"))
            .collect();
        repairs.push(format!("appended missing identifiers {chars:?} in window order"));
    }
    order.extend(missing);

    let perm = Permutation::new(order).expect("seen[] bookkeeping yields a bijection");
    Ok((perm, repairs))
}

fn window_starts(n: usize, m: usize, s: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    if n <= m {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut start = n - m;
    loop {
        starts.push(start);
        if start == 0 {
            break;
        }
        start = start.saturating_sub(s);
    }
    starts
}

/// Reranks one query's candidates with the sliding window schedule.
///
/// `passage_of` resolves a doc id to its text; when it returns `None` the
/// doc id itself stands in for the passage and the substitution is noted in
/// the trace. Only the top `config.depth` candidates are reranked; the tail
/// passes through below them. Output scores are synthetic descending ranks
/// (`n`, `n-1`, ..., `1`) so the reranked order survives the canonical
/// (score, doc id) ordering exactly.
pub fn slide_rerank<P>(
    query_text: &str,
    candidates: &CandidateList,
    passage_of: P,
    backend: &dyn Backend,
    config: &RerankConfig,
) -> Result<(CandidateList, Vec<WindowTrace>), RerankError>
where
    P: Fn(&str) -> Option<String>,
{
    if candidates.is_empty() {
        return Err(RerankError::EmptyCandidates);
    }

    let total = candidates.len();
    let depth = config.depth.min(total);
    let mut head: Vec<ScoredDoc> = candidates.entries()[..depth].to_vec();
    let tail: Vec<ScoredDoc> = candidates.entries()[depth..].to_vec();

    let m = config.window.window_size();
    let s = config.window.step_size();
    let mut traces: Vec<WindowTrace> = Vec::new();

    for start in window_starts(depth, m, s) {
        let end = (start + m).min(depth);
        let slice = &head[start..end];
        let input_doc_ids: Vec<String> = slice.iter().map(|d| d.doc_id().to_string()).collect();

        let mut notes = Vec::new();
        let passages: Vec<String> = slice
            .iter()
            .map(|d| {
                passage_of(d.doc_id()).unwrap_or_else(|| {
                    notes.push(format!("missing passage text for {}; used doc id", d.doc_id()));
                    d.doc_id().to_string()
                })
            })
            .collect();

        let abort = |source: RerankError, completed: &[WindowTrace]| RerankError::QueryAborted {
            window_start: start,
            completed: completed.to_vec(),
            source: Box::new(source),
        };

        let prompt = match build_prompt(query_text, &passages, &config.scheme, config.truncate_chars)
        {
            Ok(p) => p,
            Err(e) => return Err(abort(e, &traces)),
        };
        for ident in &prompt.truncated {
            notes.push(format!("truncated passage {ident}"));
        }

        let started = Instant::now();
        let (perm, decode_steps) = match config.mode {
            RerankMode::SingleToken => match rank_window_single_token(&prompt, backend) {
                Ok(perm) => (perm, 1),
                Err(e) => return Err(abort(e, &traces)),
            },
            RerankMode::Generation => {
                let output = match backend.generate_permutation(&prompt) {
                    Ok(o) => o,
                    Err(e) => return Err(abort(e.into(), &traces)),
                };
                match parse_permutation(
                    &output.raw_text,
                    slice.len(),
                    &config.scheme,
                    config.repair_policy,
                ) {
                    Ok((perm, repairs)) => {
                        notes.extend(repairs);
                        (perm, output.decode_steps)
                    }
                    Err(e) => return Err(abort(e, &traces)),
                }
            }
        };
        let wall_time = started.elapsed();

        let reordered = apply_permutation(slice, &perm).expect("perm built for this window");
        head[start..end].clone_from_slice(&reordered);

        traces.push(WindowTrace {
            window_start: start,
            input_doc_ids,
            output_doc_ids: head[start..end].iter().map(|d| d.doc_id().to_string()).collect(),
            decode_steps,
            wall_time,
            repairs_applied: notes,
        });
    }

    // Synthetic descending scores pin the final order.
    let reranked: Vec<ScoredDoc> = head
        .into_iter()
        .chain(tail)
        .enumerate()
        .map(|(i, d)| {
            ScoredDoc::new(d.doc_id(), (total - i) as f64).expect("rank scores are finite")
        })
        .collect();
    let list = CandidateList::new(candidates.query_id(), reranked)?;

    debug_assert_eq!(
        {
            let mut a: Vec<&str> = list.doc_ids().collect();
            a.sort_unstable();
            a
        },
        {
            let mut b: Vec<&str> = candidates.doc_ids().collect();
            b.sort_unstable();
            b
        },
        "rerank must permute, not alter, the doc set"
    );
    Ok((list, traces))
}

/// The result of reranking a whole run: reranked lists, per-query traces,
/// and per-query failures. Failed queries are absent from `run` — a query
/// is either fully reranked or reported failed, never half done.
pub struct RerankOutcome {
    pub run: BTreeMap<String, CandidateList>,
    pub traces: BTreeMap<String, Vec<WindowTrace>>,
    pub failures: BTreeMap<String, RerankError>,
}

impl RerankOutcome {
    pub fn is_total_success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Reranks every query in a run independently, up to `parallelism` queries
/// at a time (windows within a query stay sequential). `query_text_of`
/// resolves query ids to text, falling back to the id itself.
pub fn rerank_run<Q, P>(
    run: &BTreeMap<String, CandidateList>,
    query_text_of: Q,
    passage_of: P,
    backend: &dyn Backend,
    config: &RerankConfig,
    parallelism: usize,
) -> RerankOutcome
where
    Q: Fn(&str) -> Option<String> + Sync,
    P: Fn(&str) -> Option<String> + Sync,
{
    type QueryResult = Result<(CandidateList, Vec<WindowTrace>), RerankError>;
    let items: Vec<(&String, &CandidateList)> = run.iter().collect();
    let mut results: Vec<Option<QueryResult>> = (0..items.len()).map(|_| None).collect();

    let rerank_one = |qid: &str, list: &CandidateList| {
        let text = query_text_of(qid).unwrap_or_else(|| qid.to_string());
        slide_rerank(&text, list, &passage_of, backend, config)
    };

    let workers = parallelism.max(1).min(items.len().max(1));
    if workers <= 1 {
        for (i, (qid, list)) in items.iter().enumerate() {
            results[i] = Some(rerank_one(qid, list));
        }
    } else {
        let next = AtomicUsize::new(0);
        let slots = Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                    if i >= items.len() {
                        break;
                    }
                    let (qid, list) = items[i];
                    let result = rerank_one(qid, list);
                    slots.lock().unwrap()[i] = Some(result);
                });
            }
        });
    }

    let mut outcome = RerankOutcome {
        run: BTreeMap::new(),
        traces: BTreeMap::new(),
        failures: BTreeMap::new(),
    };
    for ((qid, _), result) in items.into_iter().zip(results) {
        match result.expect("every slot filled") {
            Ok((list, traces)) => {
                outcome.run.insert(qid.clone(), list);
                outcome.traces.insert(qid.clone(), traces);
            }
            Err(e) => {
                outcome.failures.insert(qid.clone(), e);
            }
        }
    }
    outcome
}
