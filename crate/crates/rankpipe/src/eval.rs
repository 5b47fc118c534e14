//! Ranking quality and latency measurement.
//!
//! nDCG@k uses the trec_eval convention: linear gain and a `log2(i+1)`
//! discount,
//!
//! ```text
//! DCG@k  = Σ_{i=1..k} rel_i / log2(i + 1)
//! nDCG@k = DCG@k / IDCG@k
//! ```
//!
//! with IDCG built from the qrels grades sorted descending. Exponential
//! gain (`2^rel − 1`) is available behind [`GainScheme::Exponential`].
//! Queries without a positive judgment are excluded from the mean — never
//! scored zero — and the exclusions are always reported.
//!
//! Latency benchmarking replays a reranking run under each inference mode,
//! strictly single-threaded, one discarded warm-up repetition, median wall
//! time over the rest. The headline number is the speedup of single-token
//! inference over full generation, `(t_gen − t_single) / t_gen`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::backend::Backend;
use crate::rerank::{rerank_run, RerankConfig, RerankMode};
use crate::trec_io::Qrels;
use crate::types::CandidateList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cutoff k must be >= 1")]
    InvalidCutoff,
    #[error("run and qrels share no query ids; run-only ids: {0:?}")]
    DisjointQueries(Vec<String>),
    #[error("no evaluable queries: every run query lacks positive judgments")]
    NoEvaluableQueries,
    #[error("repetitions must be >= 1")]
    InvalidRepetitions,
    #[error("benchmark aborted, {failed} of {total} queries failed; first: {first}")]
    BenchmarkFailed { failed: usize, total: usize, first: String },
    #[error("speedup requires a generation and a single_token report, got {gen} and {single}")]
    WrongModes { gen: RerankMode, single: RerankMode },
    #[error("reports do not describe the same workload: {0}")]
    MismatchedReports(String),
}

/// How graded relevance converts to gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GainScheme {
    /// `rel` — the trec_eval ndcg_cut convention and the default here.
    Linear,
    /// `2^rel − 1`.
    Exponential,
}

impl GainScheme {
    fn gain(&self, grade: u32) -> f64 {
        match self {
            GainScheme::Linear => grade as f64,
            GainScheme::Exponential => (2.0f64).powi(grade as i32) - 1.0,
        }
    }
}

/// Per-query metric values plus their mean. `excluded` lists queries left
/// out of the mean (absent from qrels or without positive judgments).
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub metric_name: String,
    pub cutoff: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    pub excluded: Vec<String>,
}

/// nDCG@k for one ranking. `None` means the query is not evaluable (absent
/// from the qrels or no positive judgment) and must be excluded from
/// averages, not scored zero. A ranking that places no judged-relevant
/// document in the top k scores `Some(0.0)`.
pub fn ndcg_at_k(
    ranking: &[String],
    qrels: &Qrels,
    query_id: &str,
    k: usize,
    gain: GainScheme,
) -> Result<Option<f64>, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidCutoff);
    }
    if !qrels.has_positive_judgment(query_id) {
        return Ok(None);
    }

    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, doc_id)| {
            let grade = qrels.grade(query_id, doc_id).unwrap_or(0);
            gain.gain(grade) / ((i + 2) as f64).log2()
        })
        .sum();

    let idcg: f64 = qrels
        .ideal_gains(query_id)
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &grade)| gain.gain(grade) / ((i + 2) as f64).log2())
        .sum();

    debug_assert!(idcg > 0.0, "positive judgment implies positive ideal DCG");
    Ok(Some(dcg / idcg))
}

/// nDCG@k over a whole run. Errors when the run and qrels share no query
/// id; individual unjudged queries are excluded and reported.
pub fn evaluate_run(
    run: &BTreeMap<String, CandidateList>,
    qrels: &Qrels,
    k: usize,
    gain: GainScheme,
) -> Result<MetricReport, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidCutoff);
    }
    let overlap = run.keys().any(|qid| qrels.contains_query(qid));
    if !overlap {
        return Err(EvalError::DisjointQueries(run.keys().cloned().collect()));
    }

    let mut per_query = BTreeMap::new();
    let mut excluded = Vec::new();
    for (qid, list) in run {
        let ranking: Vec<String> = list.doc_ids().map(str::to_string).collect();
        match ndcg_at_k(&ranking, qrels, qid, k, gain)? {
            Some(score) => {
                per_query.insert(qid.clone(), score);
            }
            None => excluded.push(qid.clone()),
        }
    }
    if per_query.is_empty() {
        return Err(EvalError::NoEvaluableQueries);
    }
    let mean = per_query.values().sum::<f64>() / per_query.len() as f64;
    Ok(MetricReport { metric_name: "ndcg".to_string(), cutoff: k, per_query, mean, excluded })
}

fn duration_as_secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Wall time and decode accounting for one (dataset, mode) benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub dataset: String,
    pub mode: RerankMode,
    /// Median over repetitions, after one discarded warm-up.
    #[serde(serialize_with = "duration_as_secs")]
    pub wall_time: Duration,
    pub decode_steps: u64,
    pub windows: u64,
    pub repetitions: usize,
}

fn median(mut durations: Vec<Duration>) -> Duration {
    durations.sort_unstable();
    let n = durations.len();
    if n % 2 == 1 {
        durations[n / 2]
    } else {
        (durations[n / 2 - 1] + durations[n / 2]) / 2
    }
}

/// Replays `run` through the reranker `repetitions` times (plus one
/// discarded warm-up), strictly serially, and reports the median wall time.
/// Any per-query backend failure aborts the benchmark.
pub fn bench_rerank<Q, P>(
    run: &BTreeMap<String, CandidateList>,
    query_text_of: Q,
    passage_of: P,
    backend: &dyn Backend,
    config: &RerankConfig,
    repetitions: usize,
    dataset: &str,
) -> Result<LatencyReport, EvalError>
where
    Q: Fn(&str) -> Option<String> + Sync,
    P: Fn(&str) -> Option<String> + Sync,
{
    if repetitions == 0 {
        return Err(EvalError::InvalidRepetitions);
    }

    let mut decode_steps = 0u64;
    let mut windows = 0u64;
    let mut times = Vec::with_capacity(repetitions);

    for rep in 0..=repetitions {
        let started = std::time::Instant::now();
        let outcome = rerank_run(run, &query_text_of, &passage_of, backend, config, 1);
        let elapsed = started.elapsed();
        if !outcome.is_total_success() {
            let first = outcome
                .failures
                .iter()
                .next()
                .map(|(qid, e)| format!("{qid}: {e}"))
                .unwrap_or_default();
            return Err(EvalError::BenchmarkFailed {
                failed: outcome.failures.len(),
                total: run.len(),
                first,
            });
        }
        if rep == 0 {
            // Warm-up: keep the per-window accounting, discard the time.
            decode_steps = outcome
                .traces
                .values()
                .flatten()
                .map(|t| t.decode_steps as u64)
                .sum();
            windows = outcome.traces.values().map(|t| t.len() as u64).sum();
        } else {
            times.push(elapsed);
        }
    }

    Ok(LatencyReport {
        dataset: dataset.to_string(),
        mode: config.mode,
        wall_time: median(times),
        decode_steps,
        windows,
        repetitions,
    })
}

/// Speedup of single-token inference over generation, as a percentage of
/// the generation time: `(t_gen − t_single) / t_gen × 100`. The two
/// reports must describe the same dataset and window workload.
pub fn speedup(generation: &LatencyReport, single: &LatencyReport) -> Result<f64, EvalError> {
    if generation.mode != RerankMode::Generation || single.mode != RerankMode::SingleToken {
        return Err(EvalError::WrongModes { gen: generation.mode, single: single.mode });
    }
    if generation.dataset != single.dataset {
        return Err(EvalError::MismatchedReports(format!(
            "datasets {:?} vs {:?}",
            generation.dataset, single.dataset
        )));
    }
    if generation.windows != single.windows {
        return Err(EvalError::MismatchedReports(format!(
            "window totals {} vs {}",
            generation.windows, single.windows
        )));
    }
    Ok(speedup_pct(generation.wall_time, single.wall_time))
}

/// The raw percentage for a (generation, single-token) wall-time pair.
pub fn speedup_pct(generation: Duration, single: Duration) -> f64 {
    let gen_s = generation.as_secs_f64();
    let single_s = single.as_secs_f64();
    (gen_s - single_s) / gen_s * 100.0
}

/// Formats a speedup percentage to one decimal with an explicit sign, e.g.
/// `+24.7%`.
pub fn format_speedup(pct: f64) -> String {
    format!("{pct:+.1}%")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::OracleBackend;
    use crate::rerank::RepairPolicy;
    use crate::types::{IdentifierScheme, ScoredDoc, WindowConfig};

    fn qrels_of(entries: &[(&str, &str, u32)]) -> Qrels {
        Qrels::from_entries(entries.iter().map(|&(q, d, g)| (q, d, g))).unwrap()
    }

    fn ranking(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ndcg_ideal_order_is_one() {
        let qrels = qrels_of(&[("q1", "d1", 3), ("q1", "d2", 1)]);
        let score = ndcg_at_k(&ranking(&["d1", "d2"]), &qrels, "q1", 10, GainScheme::Linear)
            .unwrap()
            .unwrap();
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ndcg_swapped_order_matches_hand_formula() {
        // (1/log2(2) + 3/log2(3)) / (3/log2(2) + 1/log2(3))
        let qrels = qrels_of(&[("q1", "d1", 3), ("q1", "d2", 1)]);
        let got = ndcg_at_k(&ranking(&["d2", "d1"]), &qrels, "q1", 10, GainScheme::Linear)
            .unwrap()
            .unwrap();
        let expected = (1.0 + 3.0 / 3.0f64.log2()) / (3.0 + 1.0 / 3.0f64.log2());
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.796_708).abs() < 1e-6);
    }

    #[test]
    fn ndcg_no_judged_docs_in_ranking_is_zero() {
        let qrels = qrels_of(&[("q1", "d1", 2)]);
        let got = ndcg_at_k(&ranking(&["x", "y"]), &qrels, "q1", 10, GainScheme::Linear)
            .unwrap()
            .unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn ndcg_excludes_unjudged_and_all_zero_queries() {
        let qrels = qrels_of(&[("q1", "d1", 0)]);
        assert!(ndcg_at_k(&ranking(&["d1"]), &qrels, "q1", 10, GainScheme::Linear)
            .unwrap()
            .is_none());
        assert!(ndcg_at_k(&ranking(&["d1"]), &qrels, "missing", 10, GainScheme::Linear)
            .unwrap()
            .is_none());
    }

    #[test]
    fn ndcg_exponential_gain() {
        let qrels = qrels_of(&[("q1", "d1", 2), ("q1", "d2", 1)]);
        let got = ndcg_at_k(&ranking(&["d2", "d1"]), &qrels, "q1", 10, GainScheme::Exponential)
            .unwrap()
            .unwrap();
        let expected = (1.0 + 3.0 / 3.0f64.log2()) / (3.0 + 1.0 / 3.0f64.log2());
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn ndcg_invariant_below_cutoff_for_unjudged_reordering() {
        let qrels = qrels_of(&[("q1", "d1", 2), ("q1", "d2", 1)]);
        let a = ndcg_at_k(
            &ranking(&["d1", "d2", "u1", "u2", "u3"]),
            &qrels,
            "q1",
            2,
            GainScheme::Linear,
        )
        .unwrap()
        .unwrap();
        let b = ndcg_at_k(
            &ranking(&["d1", "d2", "u3", "u1", "u2"]),
            &qrels,
            "q1",
            2,
            GainScheme::Linear,
        )
        .unwrap()
        .unwrap();
        assert_eq!(a, b);
    }

    fn list(qid: &str, ids: &[&str]) -> CandidateList {
        let n = ids.len();
        CandidateList::new(
            qid,
            ids.iter()
                .enumerate()
                .map(|(i, id)| ScoredDoc::new(*id, (n - i) as f64).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn evaluate_run_two_query_fixture() {
        let qrels = qrels_of(&[("q1", "d1", 3), ("q1", "d2", 1), ("q2", "a", 1)]);
        let run = BTreeMap::from([
            ("q1".to_string(), list("q1", &["d2", "d1"])),
            ("q2".to_string(), list("q2", &["a"])),
        ]);
        let report = evaluate_run(&run, &qrels, 10, GainScheme::Linear).unwrap();
        let q1 = (1.0 + 3.0 / 3.0f64.log2()) / (3.0 + 1.0 / 3.0f64.log2());
        assert!((report.per_query["q1"] - q1).abs() < 1e-12);
        assert!((report.per_query["q2"] - 1.0).abs() < 1e-12);
        assert!((report.mean - (q1 + 1.0) / 2.0).abs() < 1e-12);
        assert!(report.excluded.is_empty());
    }

    #[test]
    fn evaluate_run_disjoint_queries_is_an_error() {
        let qrels = qrels_of(&[("other", "d1", 1)]);
        let run = BTreeMap::from([("q1".to_string(), list("q1", &["d1"]))]);
        let err = evaluate_run(&run, &qrels, 10, GainScheme::Linear).unwrap_err();
        assert!(matches!(err, EvalError::DisjointQueries(ids) if ids == vec!["q1".to_string()]));
    }

    #[test]
    fn evaluate_run_reports_exclusions() {
        let qrels = qrels_of(&[("q1", "d1", 1), ("q2", "d1", 0)]);
        let run = BTreeMap::from([
            ("q1".to_string(), list("q1", &["d1"])),
            ("q2".to_string(), list("q2", &["d1"])),
            ("q3".to_string(), list("q3", &["d1"])),
        ]);
        let report = evaluate_run(&run, &qrels, 10, GainScheme::Linear).unwrap();
        assert_eq!(report.per_query.len(), 1);
        assert_eq!(report.excluded, vec!["q2".to_string(), "q3".to_string()]);
    }

    #[test]
    fn moving_a_relevant_doc_up_never_decreases_ndcg() {
        // Exhaustive over all rankings of <= 5 docs: moving a judged
        // document one position up, past a doc of lower or equal grade,
        // cannot lower nDCG@k.
        fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items.to_vec()];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.to_vec();
                let head = rest.remove(i);
                for mut tail in permutations(&rest) {
                    tail.insert(0, head);
                    out.push(tail);
                }
            }
            out
        }

        let grades = [2u32, 1, 0, 3, 0];
        for n in 2..=5usize {
            let qrels = Qrels::from_entries(
                (0..n).map(|d| ("q", format!("d{d}"), grades[d])),
            )
            .unwrap();
            for ranking in permutations(&(0..n).collect::<Vec<_>>()) {
                for pos in 1..n {
                    if grades[ranking[pos]] == 0 || grades[ranking[pos - 1]] > grades[ranking[pos]]
                    {
                        continue;
                    }
                    let mut moved = ranking.clone();
                    moved.swap(pos - 1, pos);
                    for k in 1..=4usize {
                        let ids = |r: &[usize]| -> Vec<String> {
                            r.iter().map(|d| format!("d{d}")).collect()
                        };
                        let before =
                            ndcg_at_k(&ids(&ranking), &qrels, "q", k, GainScheme::Linear)
                                .unwrap()
                                .unwrap();
                        let after = ndcg_at_k(&ids(&moved), &qrels, "q", k, GainScheme::Linear)
                            .unwrap()
                            .unwrap();
                        assert!(
                            after >= before - 1e-12,
                            "moving {} up in {ranking:?} at k={k} dropped {before} -> {after}",
                            ranking[pos]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn speedup_table_pairs() {
        let pct = speedup_pct(Duration::from_secs_f64(142.3), Duration::from_secs_f64(107.1));
        assert_eq!(format_speedup(pct), "+24.7%");
        let pct = speedup_pct(Duration::from_secs_f64(218.4), Duration::from_secs_f64(126.4));
        assert_eq!(format_speedup(pct), "+42.1%");
        let pct = speedup_pct(Duration::from_secs(5), Duration::from_secs(5));
        assert_eq!(format_speedup(pct), "+0.0%");
    }

    #[test]
    fn speedup_validates_report_pairing() {
        let report = |mode, dataset: &str, windows| LatencyReport {
            dataset: dataset.to_string(),
            mode,
            wall_time: Duration::from_secs(1),
            decode_steps: 10,
            windows,
            repetitions: 1,
        };
        let gen = report(RerankMode::Generation, "dl", 9);
        let single = report(RerankMode::SingleToken, "dl", 9);
        assert!(speedup(&gen, &single).is_ok());
        assert!(speedup(&single, &gen).is_err());
        assert!(speedup(&gen, &report(RerankMode::SingleToken, "other", 9)).is_err());
        assert!(speedup(&gen, &report(RerankMode::SingleToken, "dl", 8)).is_err());
    }

    #[test]
    fn median_of_durations() {
        let d = |ms| Duration::from_millis(ms);
        assert_eq!(median(vec![d(5)]), d(5));
        assert_eq!(median(vec![d(9), d(1), d(5)]), d(5));
        assert_eq!(median(vec![d(1), d(9), d(3), d(5)]), d(4));
    }

    fn bench_config(mode: RerankMode, m: usize, s: usize) -> RerankConfig {
        RerankConfig::new(
            WindowConfig::new(m, s).unwrap(),
            mode,
            IdentifierScheme::uppercase(26).unwrap(),
            RepairPolicy::Repair,
        )
        .unwrap()
    }

    fn bench_run(n_queries: usize, n_docs: usize) -> BTreeMap<String, CandidateList> {
        (0..n_queries)
            .map(|q| {
                let qid = format!("q{q}");
                let entries = (0..n_docs)
                    .map(|d| ScoredDoc::new(format!("q{q}d{d:02}"), (n_docs - d) as f64).unwrap())
                    .collect();
                (qid.clone(), CandidateList::new(qid, entries).unwrap())
            })
            .collect()
    }

    #[test]
    fn bench_decode_step_accounting() {
        // n=30, m=20, s=10: windows at 10 and 0 -> 2 windows per query.
        // Single-token: 1 step per window. Generation: 2*20-1 = 39.
        let run = bench_run(2, 30);
        let backend = OracleBackend::hashed();

        let single = bench_rerank(
            &run,
            |_| None,
            |_| None,
            &backend,
            &bench_config(RerankMode::SingleToken, 20, 10),
            1,
            "fixture",
        )
        .unwrap();
        assert_eq!(single.windows, 4);
        assert_eq!(single.decode_steps, 4);

        let generation = bench_rerank(
            &run,
            |_| None,
            |_| None,
            &backend,
            &bench_config(RerankMode::Generation, 20, 10),
            1,
            "fixture",
        )
        .unwrap();
        assert_eq!(generation.windows, 4);
        assert_eq!(generation.decode_steps, 4 * 39);
        assert!(generation.decode_steps >= single.decode_steps);

        assert!(speedup(&generation, &single).is_ok());
    }

    #[test]
    fn bench_rejects_zero_repetitions() {
        let run = bench_run(1, 3);
        let err = bench_rerank(
            &run,
            |_| None,
            |_| None,
            &OracleBackend::hashed(),
            &bench_config(RerankMode::SingleToken, 20, 10),
            0,
            "fixture",
        )
        .unwrap_err();
        assert!(matches!(err, EvalError::InvalidRepetitions));
    }

    #[test]
    fn bench_simulated_latency_orders_modes_and_grows_with_window_size() {
        let run = bench_run(2, 20);
        let backend = OracleBackend::hashed().with_latency(Duration::from_micros(600));

        let mut speedups = Vec::new();
        for m in [5usize, 10, 20] {
            let s = m / 2;
            let single = bench_rerank(
                &run,
                |_| None,
                |_| None,
                &backend,
                &bench_config(RerankMode::SingleToken, m, s),
                1,
                "fixture",
            )
            .unwrap();
            let generation = bench_rerank(
                &run,
                |_| None,
                |_| None,
                &backend,
                &bench_config(RerankMode::Generation, m, s),
                1,
                "fixture",
            )
            .unwrap();
            assert!(generation.wall_time > single.wall_time, "m={m}");
            speedups.push(speedup(&generation, &single).unwrap());
        }
        assert!(
            speedups[0] < speedups[1] && speedups[1] < speedups[2],
            "speedup not increasing in m: {speedups:?}"
        );
    }
}
