//! The `rankpipe` executable: the full retrieve/rerank/train/eval/bench
//! pipeline behind reproducible, scriptable subcommands.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input or parse error,
//! 3 precondition or overwrite refusal. Primary outputs are written to a
//! temporary file and renamed on success, so a failing command never
//! leaves a partially written output behind.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rankpipe::backend::{Backend, HttpBackend, OracleBackend, ScriptedBackend};
use rankpipe::eval::{
    bench_rerank, evaluate_run, format_speedup, speedup, GainScheme, LatencyReport,
};
use rankpipe::objective::{
    load_training_jsonl, save_model, train, write_loss_curve_csv, LossConfig, TrainConfig,
};
use rankpipe::retriever::{build_index, load_index, save_index, search, Bm25Params, RetrievalConfig};
use rankpipe::rerank::{rerank_run, RepairPolicy, RerankConfig, RerankMode, WindowTrace};
use rankpipe::trec_io::{
    parse_corpus_jsonl, parse_qrels, parse_queries_jsonl, parse_run, write_run,
};
use rankpipe::types::{IdentifierScheme, WindowConfig};

#[derive(Parser)]
#[command(name = "rankpipe", version, about = "Multi-stage text ranking pipeline")]
struct Cli {
    /// Seed for anything stochastic (training shuffles).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Verbosity of progress output on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, PartialOrd, ValueEnum)]
enum LogLevel {
    Quiet,
    Warn,
    Info,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Index(IndexArgs),
    /// Retrieve top-k candidates for a JSONL query file.
    Retrieve(RetrieveArgs),
    /// Rerank a TREC run with a sliding-window backend.
    Rerank(RerankArgs),
    /// Train the toy scoring model on JSONL training windows.
    Train(TrainArgs),
    /// Score a run against qrels with nDCG@k.
    Eval(EvalArgs),
    /// Measure reranking latency per inference mode.
    Bench(BenchArgs),
}

#[derive(Args)]
struct IndexArgs {
    /// JSONL corpus, one {"id", "contents"} object per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Where to write the index.
    #[arg(long)]
    output: PathBuf,
    /// Overwrite an existing index file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    /// JSONL queries, one {"id", "text"} object per line.
    #[arg(long)]
    queries: PathBuf,
    /// TREC run output path.
    #[arg(long)]
    output: PathBuf,
    /// Candidates per query.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    /// BM25 k1.
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    /// BM25 b.
    #[arg(long, default_value_t = 0.4)]
    b: f64,
    /// Run tag column.
    #[arg(long, default_value = "bm25")]
    tag: String,
    /// Query-level parallelism.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallel: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
#[clap(rename_all = "snake_case")]
enum ModeArg {
    SingleToken,
    Generation,
}

impl From<ModeArg> for RerankMode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::SingleToken => RerankMode::SingleToken,
            ModeArg::Generation => RerankMode::Generation,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Repair,
    Strict,
}

#[derive(Args)]
struct BackendArgs {
    /// mock-oracle | mock-scripted | http=<url> (or `http` with
    /// RERANK_BACKEND_URL set).
    #[arg(long)]
    backend: String,

    /// URL fallback for `--backend http`.
    #[arg(long, env = "RERANK_BACKEND_URL", hide_env_values = true)]
    backend_url: Option<String>,

    /// HTTP request timeout in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,

    /// Extra attempts after a transport failure.
    #[arg(long, default_value_t = 2)]
    retries: u32,

    /// Scripted mock: file with one generation (or JSON logits object) per
    /// line, consumed per window.
    #[arg(long)]
    script: Option<PathBuf>,

    /// Mock backends: simulated per-decode-step latency in microseconds.
    #[arg(long, default_value_t = 0)]
    mock_latency_us: u64,
}

#[derive(Args)]
struct WindowArgs {
    /// Sliding window size m.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..=26))]
    window: u32,
    /// Sliding window step s.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    step: u32,
    /// Rerank only the top this-many candidates per query.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    depth: u32,
    /// Per-passage prompt budget in characters.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u32).range(1..))]
    truncate: u32,
}

#[derive(Args)]
struct RerankArgs {
    /// Input TREC run.
    #[arg(long)]
    input: PathBuf,
    /// Output TREC run.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::SingleToken)]
    mode: ModeArg,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, value_enum, default_value_t = PolicyArg::Repair)]
    policy: PolicyArg,
    #[command(flatten)]
    backend: BackendArgs,
    /// Optional JSONL queries file supplying query text (ids are used
    /// otherwise).
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Optional JSONL corpus supplying passage text (doc ids are used
    /// otherwise).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Write one window trace per line as JSONL.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Run tag for the output.
    #[arg(long, default_value = "rerank")]
    tag: String,
    /// Query-level parallelism.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallel: u32,
}

#[derive(Args)]
struct TrainArgs {
    /// JSONL training windows: {"features": [[...], ...], "gold_ranks": [...]}.
    #[arg(long)]
    data: PathBuf,
    /// Where to write the trained model (JSON).
    #[arg(long)]
    model_out: PathBuf,
    /// Where to write the loss curve (CSV: epoch,joint,lm,rank_weighted).
    #[arg(long)]
    curve_out: PathBuf,
    /// Weight of the pairwise ranking term.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    epochs: u32,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    batch_size: u32,
    /// Learning rate (the full-scale default; toy linear data usually
    /// wants a larger value).
    #[arg(long, default_value_t = 5e-6)]
    lr: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// TREC run to score.
    #[arg(long)]
    run: PathBuf,
    /// TREC qrels.
    #[arg(long)]
    qrels: PathBuf,
    /// Cutoff.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    /// Gain scheme.
    #[arg(long, value_enum, default_value_t = GainArg::Linear)]
    gain: GainArg,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GainArg {
    Linear,
    Exponential,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
#[clap(rename_all = "snake_case")]
enum ModesArg {
    Both,
    SingleToken,
    Generation,
}

#[derive(Args)]
struct BenchArgs {
    /// TREC run supplying the candidate lists to rerank.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    window: WindowArgs,
    /// Which inference modes to measure.
    #[arg(long, value_enum, default_value_t = ModesArg::Both)]
    modes: ModesArg,
    /// Timed repetitions (one extra warm-up repetition is always run and
    /// discarded).
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    repetitions: u32,
    /// Dataset label for the report.
    #[arg(long, default_value = "run")]
    dataset: String,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Emit machine-readable CSV rows.
    #[arg(long)]
    csv: bool,
    /// Emit the reports as JSON.
    #[arg(long)]
    json: bool,
}

/// Command failure with its exit-code class.
enum CliError {
    /// Exit 2: unreadable or unparseable input.
    Input(String),
    /// Exit 3: refused precondition (e.g. overwrite without --force).
    Precondition(String),
    /// Exit 1: everything else.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Input(_) => 2,
            CliError::Precondition(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Runtime(m) | CliError::Input(m) | CliError::Precondition(m) => m,
        }
    }
}

fn input_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {e}"))
}

fn runtime_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = Logger { level: cli.log_level };
    let result = match cli.command {
        Command::Index(args) => cmd_index(args, &log),
        Command::Retrieve(args) => cmd_retrieve(args, &log),
        Command::Rerank(args) => cmd_rerank(args, &log),
        Command::Train(args) => cmd_train(args, cli.seed, &log),
        Command::Eval(args) => cmd_eval(args, &log),
        Command::Bench(args) => cmd_bench(args, &log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

struct Logger {
    level: LogLevel,
}

impl Logger {
    fn warn(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Warn {
            eprintln!("warning: {}", msg.as_ref());
        }
    }

    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= LogLevel::Info {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| input_err(&format!("open {}", path.display()), e))
}

/// Writes via a temp file in the destination directory, renaming into
/// place only on success.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| runtime_err(&format!("create temp file near {}", path.display()), e))?;
    write(tmp.as_file_mut())?;
    tmp.as_file_mut()
        .flush()
        .map_err(|e| runtime_err(&format!("flush {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| runtime_err(&format!("rename into {}", path.display()), e))?;
    Ok(())
}

fn cmd_index(args: IndexArgs, log: &Logger) -> Result<(), CliError> {
    if args.output.exists() && !args.force {
        return Err(CliError::Precondition(format!(
            "{} already exists; pass --force to rebuild",
            args.output.display()
        )));
    }

    let reader = open_reader(&args.corpus)?;
    let mut docs = Vec::new();
    let mut empty_text = 0usize;
    for doc in parse_corpus_jsonl(reader) {
        let doc = doc.map_err(|e| input_err(&args.corpus.display().to_string(), e))?;
        if doc.text().is_empty() {
            empty_text += 1;
        }
        docs.push(doc);
    }
    if empty_text > 0 {
        log.warn(format!("{empty_text} document(s) have empty text"));
    }

    let index =
        build_index(docs).map_err(|e| input_err(&args.corpus.display().to_string(), e))?;
    write_atomic(&args.output, |w| {
        save_index(&index, w).map_err(|e| runtime_err("write index", e))
    })?;

    println!("{} documents, {} terms", index.doc_count(), index.vocab_size());
    log.info(format!("index written to {}", args.output.display()));
    Ok(())
}

/// Runs `f` over the items with up to `parallel` worker threads, keeping
/// results in input order.
fn map_parallel<T, R, F>(items: Vec<T>, parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if parallel <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..parallel.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("all slots filled")).collect()
}

fn cmd_retrieve(args: RetrieveArgs, log: &Logger) -> Result<(), CliError> {
    let index = load_index(open_reader(&args.index)?)
        .map_err(|e| input_err(&args.index.display().to_string(), e))?;
    let queries = parse_queries_jsonl(open_reader(&args.queries)?)
        .map_err(|e| input_err(&args.queries.display().to_string(), e))?;
    let params =
        Bm25Params::new(args.k1, args.b).map_err(|e| input_err("bm25 params", e))?;
    let config =
        RetrievalConfig::new(args.k as usize).map_err(|e| input_err("retrieval depth", e))?;

    let lists = map_parallel(queries, args.parallel as usize, |q| {
        (q.id().to_string(), search(&index, &params, q, &config))
    });
    let mut run = BTreeMap::new();
    let mut empty = 0usize;
    for (qid, list) in lists {
        if list.is_empty() {
            empty += 1;
        }
        run.insert(qid, list);
    }
    if empty > 0 {
        log.warn(format!("{empty} query(ies) matched no documents"));
    }
    // Queries with no hits have no rows to write.
    run.retain(|_, list| !list.is_empty());

    write_atomic(&args.output, |w| {
        write_run(&run, &args.tag, w).map_err(|e| runtime_err("write run", e))
    })?;
    println!(
        "retrieved {} candidate(s) across {} query(ies)",
        run.values().map(|l| l.len()).sum::<usize>(),
        run.len()
    );
    Ok(())
}

enum AnyBackend {
    Oracle(OracleBackend),
    Scripted(ScriptedBackend),
    Http(HttpBackend),
}

impl AnyBackend {
    fn as_dyn(&self) -> &dyn Backend {
        match self {
            AnyBackend::Oracle(b) => b,
            AnyBackend::Scripted(b) => b,
            AnyBackend::Http(b) => b,
        }
    }

    fn is_http(&self) -> bool {
        matches!(self, AnyBackend::Http(_))
    }
}

fn build_backend(args: &BackendArgs) -> Result<AnyBackend, CliError> {
    let latency = (args.mock_latency_us > 0).then(|| Duration::from_micros(args.mock_latency_us));
    match args.backend.as_str() {
        "mock-oracle" => {
            let mut oracle = OracleBackend::hashed();
            if let Some(tau) = latency {
                oracle = oracle.with_latency(tau);
            }
            Ok(AnyBackend::Oracle(oracle))
        }
        "mock-scripted" => {
            let mut scripted = ScriptedBackend::new();
            if let Some(tau) = latency {
                scripted = scripted.with_latency(tau);
            }
            let path = args.script.as_ref().ok_or_else(|| {
                CliError::Input("--backend mock-scripted requires --script FILE".into())
            })?;
            for line in open_reader(path)?.lines() {
                let line = line.map_err(|e| input_err(&path.display().to_string(), e))?;
                if line.trim().is_empty() {
                    continue;
                }
                // A JSON object scripts a logits response, anything else a
                // generation.
                if line.trim_start().starts_with('{') {
                    let map: BTreeMap<String, f64> = serde_json::from_str(&line)
                        .map_err(|e| input_err(&path.display().to_string(), e))?;
                    let mut by_char = BTreeMap::new();
                    for (k, v) in map {
                        let mut chars = k.chars();
                        match (chars.next(), chars.next()) {
                            (Some(c), None) => {
                                by_char.insert(c, v);
                            }
                            _ => {
                                return Err(CliError::Input(format!(
                                    "{}: logits key {k:?} is not a single identifier",
                                    path.display()
                                )))
                            }
                        }
                    }
                    scripted.push_logits(by_char);
                } else {
                    scripted.push_generation(line);
                }
            }
            Ok(AnyBackend::Scripted(scripted))
        }
        other => {
            let url = if let Some(rest) = other.strip_prefix("http=") {
                rest.to_string()
            } else if other == "http" {
                args.backend_url.clone().ok_or_else(|| {
                    CliError::Input(
                        "--backend http needs --backend-url or RERANK_BACKEND_URL".into(),
                    )
                })?
            } else {
                return Err(CliError::Input(format!(
                    "unknown backend {other:?}; expected mock-oracle, mock-scripted, or http=<url>"
                )));
            };
            Ok(AnyBackend::Http(HttpBackend::new(
                url,
                Duration::from_millis(args.timeout_ms),
                args.retries,
            )))
        }
    }
}

fn rerank_config(
    window: &WindowArgs,
    mode: RerankMode,
    policy: PolicyArg,
) -> Result<RerankConfig, CliError> {
    let window_config = WindowConfig::new(window.window as usize, window.step as usize)
        .map_err(|e| input_err("window config", e))?;
    let scheme = IdentifierScheme::uppercase((window.window as usize).clamp(20, 26))
        .map_err(|e| input_err("identifier scheme", e))?;
    let policy = match policy {
        PolicyArg::Repair => RepairPolicy::Repair,
        PolicyArg::Strict => RepairPolicy::Strict,
    };
    Ok(RerankConfig::new(window_config, mode, scheme, policy)
        .map_err(|e| input_err("rerank config", e))?
        .with_depth(window.depth as usize)
        .with_truncate_chars(window.truncate as usize))
}

type TextMap = HashMap<String, String>;

fn load_text_maps(
    queries: Option<&PathBuf>,
    corpus: Option<&PathBuf>,
) -> Result<(TextMap, TextMap), CliError> {
    let mut query_texts = HashMap::new();
    if let Some(path) = queries {
        for q in parse_queries_jsonl(open_reader(path)?)
            .map_err(|e| input_err(&path.display().to_string(), e))?
        {
            query_texts.insert(q.id().to_string(), q.text().to_string());
        }
    }
    let mut passages = HashMap::new();
    if let Some(path) = corpus {
        for doc in parse_corpus_jsonl(open_reader(path)?) {
            let doc = doc.map_err(|e| input_err(&path.display().to_string(), e))?;
            passages.insert(doc.id().to_string(), doc.text().to_string());
        }
    }
    Ok((query_texts, passages))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    query_id: &'a str,
    #[serde(flatten)]
    trace: &'a WindowTrace,
}

fn cmd_rerank(args: RerankArgs, log: &Logger) -> Result<(), CliError> {
    let run = parse_run(open_reader(&args.input)?)
        .map_err(|e| input_err(&args.input.display().to_string(), e))?;
    let config = rerank_config(&args.window, args.mode.into(), args.policy)?;
    let backend = build_backend(&args.backend)?;

    // HTTP backends must prove the identifier scheme is single-token before
    // any window is sent.
    if backend.is_http() {
        let violations = backend
            .as_dyn()
            .check_identifiers(&config.scheme)
            .map_err(|e| runtime_err("identifier check", e))?;
        if !violations.is_empty() {
            return Err(CliError::Precondition(format!(
                "backend tokenizer splits identifier(s) {violations:?}; pick a smaller window"
            )));
        }
    }

    let (query_texts, passages) = load_text_maps(args.queries.as_ref(), args.corpus.as_ref())?;
    let outcome = rerank_run(
        &run,
        |qid| query_texts.get(qid).cloned(),
        |doc_id| passages.get(doc_id).cloned(),
        backend.as_dyn(),
        &config,
        args.parallel as usize,
    );

    for (qid, err) in &outcome.failures {
        log.warn(format!("query {qid} failed: {err}"));
    }
    if outcome.run.is_empty() && !outcome.failures.is_empty() {
        return Err(CliError::Runtime(format!(
            "all {} query(ies) failed; no output written",
            outcome.failures.len()
        )));
    }

    write_atomic(&args.output, |w| {
        write_run(&outcome.run, &args.tag, w).map_err(|e| runtime_err("write run", e))
    })?;

    if let Some(trace_path) = &args.trace {
        write_atomic(trace_path, |w| {
            for (qid, traces) in &outcome.traces {
                for trace in traces {
                    let line = serde_json::to_string(&TraceLine { query_id: qid, trace })
                        .map_err(|e| runtime_err("serialize trace", e))?;
                    writeln!(w, "{line}").map_err(|e| runtime_err("write trace", e))?;
                }
            }
            Ok(())
        })?;
    }

    println!(
        "reranked {} query(ies) ({} failed)",
        outcome.run.len(),
        outcome.failures.len()
    );
    if !outcome.failures.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} of {} query(ies) failed; successful output kept",
            outcome.failures.len(),
            run.len()
        )));
    }
    Ok(())
}

fn cmd_train(args: TrainArgs, seed: u64, log: &Logger) -> Result<(), CliError> {
    let dataset = load_training_jsonl(open_reader(&args.data)?)
        .map_err(|e| input_err(&args.data.display().to_string(), e))?;
    let loss_cfg = LossConfig::new(args.lambda).map_err(|e| input_err("lambda", e))?;
    let train_cfg = TrainConfig {
        epochs: args.epochs as usize,
        batch_size: args.batch_size as usize,
        learning_rate: args.lr,
        seed,
    };

    let (model, curve) =
        train(&dataset, &train_cfg, &loss_cfg).map_err(|e| runtime_err("training", e))?;

    write_atomic(&args.model_out, |w| {
        save_model(&model, w).map_err(|e| runtime_err("write model", e))
    })?;
    write_atomic(&args.curve_out, |w| {
        write_loss_curve_csv(&curve, w).map_err(|e| runtime_err("write curve", e))
    })?;

    let last = curve.last().expect("epochs >= 1");
    println!(
        "trained {} epoch(s) on {} window(s); final joint={:.6} lm={:.6} rank_weighted={:.6}",
        curve.len(),
        dataset.len(),
        last.joint,
        last.lm,
        last.rank_weighted
    );
    log.info(format!("model written to {}", args.model_out.display()));
    Ok(())
}

fn cmd_eval(args: EvalArgs, log: &Logger) -> Result<(), CliError> {
    let run = parse_run(open_reader(&args.run)?)
        .map_err(|e| input_err(&args.run.display().to_string(), e))?;
    let qrels = parse_qrels(open_reader(&args.qrels)?)
        .map_err(|e| input_err(&args.qrels.display().to_string(), e))?;
    let gain = match args.gain {
        GainArg::Linear => GainScheme::Linear,
        GainArg::Exponential => GainScheme::Exponential,
    };

    let report = evaluate_run(&run, &qrels, args.k as usize, gain)
        .map_err(|e| input_err("evaluate", e))?;

    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| runtime_err("serialize", e))?
        );
        return Ok(());
    }

    for (qid, score) in &report.per_query {
        println!("ndcg@{} {qid} {score:.4}", report.cutoff);
    }
    if !report.excluded.is_empty() {
        log.warn(format!(
            "{} query(ies) excluded (no positive judgments): {}",
            report.excluded.len(),
            report.excluded.join(", ")
        ));
    }
    println!("mean ndcg@{} {:.4}", report.cutoff, report.mean);
    Ok(())
}

fn cmd_bench(args: BenchArgs, log: &Logger) -> Result<(), CliError> {
    let run = parse_run(open_reader(&args.run)?)
        .map_err(|e| input_err(&args.run.display().to_string(), e))?;
    let backend = build_backend(&args.backend)?;
    let (query_texts, passages) = load_text_maps(args.queries.as_ref(), args.corpus.as_ref())?;

    let modes: Vec<RerankMode> = match args.modes {
        ModesArg::Both => vec![RerankMode::Generation, RerankMode::SingleToken],
        ModesArg::SingleToken => vec![RerankMode::SingleToken],
        ModesArg::Generation => vec![RerankMode::Generation],
    };

    let mut reports: Vec<LatencyReport> = Vec::new();
    for mode in modes {
        let config = rerank_config(&args.window, mode, PolicyArg::Repair)?;
        log.info(format!("benchmarking {mode} mode..."));
        let report = bench_rerank(
            &run,
            |qid| query_texts.get(qid).cloned(),
            |doc_id| passages.get(doc_id).cloned(),
            backend.as_dyn(),
            &config,
            args.repetitions as usize,
            &args.dataset,
        )
        .map_err(|e| runtime_err("bench", e))?;
        reports.push(report);
    }

    let pair = match reports.as_slice() {
        [generation, single] => Some(
            speedup(generation, single).map_err(|e| runtime_err("speedup", e))?,
        ),
        _ => None,
    };

    if args.json {
        #[derive(Serialize)]
        struct BenchOutput<'a> {
            reports: &'a [LatencyReport],
            speedup_pct: Option<f64>,
        }
        println!(
            "{}",
            serde_json::to_string_pretty(&BenchOutput { reports: &reports, speedup_pct: pair })
                .map_err(|e| runtime_err("serialize", e))?
        );
        return Ok(());
    }

    if args.csv {
        println!("dataset,mode,wall_time_s,decode_steps,speedup_pct");
        for report in &reports {
            let pct = pair.map(|p| format!("{p:.1}")).unwrap_or_default();
            println!(
                "{},{},{:.6},{},{}",
                report.dataset,
                report.mode,
                report.wall_time.as_secs_f64(),
                report.decode_steps,
                pct
            );
        }
        return Ok(());
    }

    for report in &reports {
        println!(
            "{:<12} {:<13} wall {:>10.3}s  decode_steps {:>8}  windows {:>6}  (median of {})",
            report.dataset,
            report.mode.to_string(),
            report.wall_time.as_secs_f64(),
            report.decode_steps,
            report.windows,
            report.repetitions
        );
    }
    if let Some(pct) = pair {
        println!("Speedup {}", format_speedup(pct));
    }
    Ok(())
}
