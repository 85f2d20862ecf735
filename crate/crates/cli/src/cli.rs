//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgabduce::abducer::{abduce, SearchBudget, SearchMode};
use kgabduce::diagnostics::{collapse_profile, evaluate_cardinality_profile, oversensitivity_profile};
use kgabduce::enumerate::ExhaustiveBound;
use kgabduce::executor::evaluate;
use kgabduce::graph::{load_split, SplitName};
use kgabduce::metrics::evaluate_run;
use kgabduce::rewards::{combined_reward, RewardWeights};
use kgabduce::sampler::{augment, filter_unseen, sample_dataset, PairRecord};
use kgabduce::synth::random_graph;
use kgabduce::{parse, Condition, DatasetSplit, Error, Hypothesis, KnowledgeGraph, PatternId};
use serde::{Deserialize, Serialize};

use crate::view::{self, ConditionInput, ResultItem};

#[derive(Debug, Parser)]
#[command(name = "kgabduce", version, about = "Controllable abductive reasoning over knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Entity, relation and triple counts of a dataset directory.
    Stats(StatsArgs),
    /// Sample observation-hypothesis pairs as JSONL.
    Sample(SampleArgs),
    /// Execute a hypothesis and print its conclusion.
    Eval(EvalArgs),
    /// Score a hypothesis against an observation and a condition.
    Score(ScoreArgs),
    /// Search for hypotheses explaining an observation.
    Abduce(AbduceArgs),
    /// Score predictions against reference pairs.
    Evaluate(EvaluateArgs),
    /// Hypothesis-space and reward-sensitivity diagnostics.
    Diagnose(DiagnoseArgs),
    /// Run the HTTP JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
}

impl From<Split> for SplitName {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitName::Train,
            Split::Valid => SplitName::Valid,
            Split::Test => SplitName::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Montecarlo,
    Exhaustive,
}

#[derive(Debug, Args)]
struct GraphArgs {
    /// Directory with entity2id.txt, relation2id.txt and train/valid/test.txt.
    #[arg(long)]
    graph: PathBuf,
    /// Which cumulative graph to use.
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Debug, Args)]
struct WeightArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda2: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda3: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

impl WeightArgs {
    fn weights(&self) -> Result<RewardWeights, CliError> {
        let w = RewardWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            alpha: self.alpha,
        };
        w.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(w)
    }
}

#[derive(Debug, Args)]
struct OutArg {
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Graph the pairs are sampled on.
    #[arg(long, value_enum, default_value = "train")]
    split: Split,
    #[arg(long, default_value_t = 10)]
    per_pattern: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append sub-logic records for decomposable patterns.
    #[arg(long)]
    augment: bool,
    /// Keep only pairs whose observation holds an entity absent from the previous split.
    #[arg(long)]
    unseen_only: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    hypothesis: String,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    hypothesis: String,
    /// Comma-separated entity ids or names.
    #[arg(long)]
    observation: String,
    #[arg(long, help = format!("Condition: {}", kgabduce::hypothesis::CONDITION_GRAMMAR))]
    condition: String,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct AbduceArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Comma-separated entity ids or names.
    #[arg(long)]
    observation: String,
    #[arg(long, help = format!("Condition: {}", kgabduce::hypothesis::CONDITION_GRAMMAR))]
    condition: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum, default_value = "montecarlo")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    proposals: usize,
    #[arg(long, default_value_t = 64)]
    beam_width: usize,
    /// Largest entity count allowed in exhaustive mode (triples: ten times this).
    #[arg(long, default_value_t = 200)]
    exhaustive_bound: usize,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// JSONL rows `{"hypothesis": "...", "condition": "..."}`.
    #[arg(long)]
    predictions: PathBuf,
    /// JSONL pair records as written by `sample`.
    #[arg(long)]
    references: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DiagnoseKind {
    /// Mean candidate counts grouped by number of relations.
    Collapse,
    /// Conclusion-size histograms and per-observation candidate counts.
    Profile,
    /// Similarity after swapping one relation of a sampled hypothesis.
    Oversensitivity,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(value_enum)]
    kind: DiagnoseKind,
    /// Dataset directory; a synthetic graph is used when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 100)]
    synthetic_entities: usize,
    #[arg(long, default_value_t = 5)]
    synthetic_relations: usize,
    #[arg(long, default_value_t = 500)]
    synthetic_edges: usize,
    /// Restrict to one pattern (profile and oversensitivity).
    #[arg(long)]
    pattern: Option<String>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    exhaustive_bound: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Largest entity count allowed in exhaustive mode (triples: ten times this).
    #[arg(long, default_value_t = 200)]
    exhaustive_bound: usize,
    /// Allowed CORS origin; any origin when absent.
    #[arg(long)]
    ui_origin: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Condition { .. } | Error::Syntax { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn bound(max_entities: usize) -> ExhaustiveBound {
    ExhaustiveBound {
        max_entities,
        max_triples: max_entities.saturating_mul(10),
    }
}

/// Rejects malformed condition strings before any data is read. Entity and
/// relation names can only be resolved once the graph is loaded.
fn precheck_condition(text: &str) -> Result<(), CliError> {
    match text.split_once(':').map(|(k, _)| k.trim()) {
        Some("entity" | "relation") => Ok(()),
        _ => Condition::parse(text, None).map(|_| ()).map_err(CliError::from),
    }
}

fn load(dir: &Path) -> Result<DatasetSplit, CliError> {
    Ok(load_split(dir)?)
}

fn output<'a>(out: &OutArg, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, CliError> {
    match &out.out {
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::Data(format!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(stdout)),
    }
}

fn write_json<T: Serialize>(out: &OutArg, stdout: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let mut w = output(out, stdout)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::Data(e.to_string()))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct SplitCounts {
    triples: usize,
}

#[derive(Serialize)]
struct Stats {
    entity_count: usize,
    relation_count: usize,
    triple_count: usize,
    duplicates_dropped: usize,
    monotone: bool,
    train: SplitCounts,
    valid: SplitCounts,
    test: SplitCounts,
}

fn stats(a: StatsArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let s = load(&a.graph)?;
    let counts = |g: &KnowledgeGraph| SplitCounts {
        triples: g.triple_count(),
    };
    let report = Stats {
        entity_count: s.test.entity_count(),
        relation_count: s.test.relation_count(),
        triple_count: s.test.triple_count(),
        duplicates_dropped: s.train.stats().duplicates_dropped + s.valid.stats().duplicates_dropped + s.test.stats().duplicates_dropped,
        monotone: s.is_monotone(),
        train: counts(&s.train),
        valid: counts(&s.valid),
        test: counts(&s.test),
    };
    write_json(&a.out, stdout, &report)
}

fn sample(a: SampleArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if a.per_pattern == 0 {
        return Err(CliError::Usage("--per-pattern must be at least 1".into()));
    }
    let s = load(&a.graph)?;
    let which: SplitName = a.split.into();
    let g = s.graph(which);
    let drawn = sample_dataset(g, a.per_pattern, a.seed)?;
    for (p, n) in &drawn.shortfall {
        eprintln!("warning: pattern {p} is short by {n} records");
    }
    let mut records = drawn.records;
    if a.augment {
        let aug = augment(g, &records)?;
        eprintln!(
            "augmented: {} sub-logic records kept, {} empty, {} oversize, {} duplicate",
            aug.records.len() - records.len(),
            aug.dropped_empty,
            aug.dropped_oversize,
            aug.dropped_duplicate
        );
        records = aug.records;
    }
    if a.unseen_only {
        let previous = match which {
            SplitName::Train => return Err(CliError::Usage("--unseen-only needs --split valid or test".into())),
            SplitName::Valid => &s.train,
            SplitName::Test => &s.valid,
        };
        records = filter_unseen(records, previous);
    }
    let mut w = output(&a.out, stdout)?;
    for r in &records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(w).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

#[derive(Serialize)]
struct EvalOutput {
    hypothesis: String,
    pattern: Option<PatternId>,
    conclusion: kgabduce::EntitySet,
    names: Vec<String>,
}

fn parse_hypothesis(text: &str, g: &KnowledgeGraph) -> Result<Hypothesis, CliError> {
    let h = parse(text)?;
    h.check_ids(g).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(h)
}

fn eval(a: EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let s = load(&a.graph.graph)?;
    let g = s.graph(a.graph.split.into());
    let h = parse_hypothesis(&a.hypothesis, g)?;
    let conclusion = evaluate(g, &h)?;
    let names = conclusion.iter().map(|&e| g.entity_name(e).unwrap_or_default().to_string()).collect();
    write_json(
        &a.out,
        stdout,
        &EvalOutput {
            hypothesis: h.to_string(),
            pattern: h.pattern(),
            conclusion,
            names,
        },
    )
}

fn score(a: ScoreArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let w = a.weights.weights()?;
    precheck_condition(&a.condition)?;
    let s = load(&a.graph.graph)?;
    let g = s.graph(a.graph.split.into());
    let h = parse_hypothesis(&a.hypothesis, g)?;
    let obs = view::parse_observation(&a.observation, g).map_err(CliError::Usage)?;
    if obs.is_empty() {
        return Err(CliError::Usage("--observation must name at least one entity".into()));
    }
    let cond = Condition::parse(&a.condition, Some(g))?;
    let conclusion = evaluate(g, &h)?;
    write_json(&a.out, stdout, &combined_reward(&conclusion, &obs, &h, &cond, &w)?)
}

#[derive(Serialize)]
struct AbduceOutput {
    observation: kgabduce::EntitySet,
    condition: String,
    seed: u64,
    mode: SearchMode,
    candidates: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic: Option<String>,
    results: Vec<ResultItem>,
}

fn abduce_cmd(a: AbduceArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let w = a.weights.weights()?;
    if a.k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    precheck_condition(&a.condition)?;
    let s = load(&a.graph.graph)?;
    let g = s.graph(a.graph.split.into());
    let cond = Condition::parse(&a.condition, Some(g))?;
    let obs = view::parse_observation(&a.observation, g).map_err(CliError::Usage)?;
    if obs.is_empty() {
        return Err(CliError::Usage("--observation must name at least one entity".into()));
    }
    let mode = match a.mode {
        Mode::Montecarlo => SearchMode::MonteCarlo,
        Mode::Exhaustive => SearchMode::Exhaustive,
    };
    let budget = SearchBudget {
        proposals_per_pattern: a.proposals,
        beam_width: a.beam_width,
        mode,
        seed: a.seed,
        exhaustive_bound: bound(a.exhaustive_bound),
    };
    let out = abduce(g, &obs, &cond, &budget, a.k, &w)?;
    let results = out.hypotheses.iter().map(|s| ResultItem::new(g, s, &obs)).collect();
    write_json(
        &a.out,
        stdout,
        &AbduceOutput {
            observation: obs,
            condition: cond.to_string(),
            seed: a.seed,
            mode,
            candidates: out.candidates,
            diagnostic: out.diagnostic,
            results,
        },
    )
}

#[derive(Deserialize)]
struct PredictionRow {
    hypothesis: String,
    condition: ConditionInput,
}

fn evaluate_cmd(a: EvaluateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let s = load(&a.graph.graph)?;
    let g = s.graph(a.graph.split.into());
    let rows: Vec<PredictionRow> = read_jsonl(&a.predictions)?;
    let refs: Vec<PairRecord> = read_jsonl(&a.references)?;
    let mut preds = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let at = |e: Error| CliError::Data(format!("{}:{}: {e}", a.predictions.display(), i + 1));
        let h = parse(&r.hypothesis).map_err(at)?;
        h.check_ids(g).map_err(at)?;
        preds.push((h, r.condition.resolve(g).map_err(at)?));
    }
    if preds.len() != refs.len() {
        return Err(CliError::Data(format!(
            "{} predictions but {} references",
            preds.len(),
            refs.len()
        )));
    }
    write_json(&a.out, stdout, &evaluate_run(g, &preds, &refs)?)
}

#[derive(Serialize)]
struct OversensitivityRow {
    pattern: PatternId,
    #[serde(flatten)]
    scores: kgabduce::diagnostics::Oversensitivity,
}

fn diagnose(a: DiagnoseArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let split;
    let synthetic;
    let g: &KnowledgeGraph = match &a.graph {
        Some(dir) => {
            split = load(dir)?;
            split.graph(a.split.into())
        }
        None => {
            synthetic = random_graph(a.synthetic_entities, a.synthetic_relations, a.synthetic_edges, a.seed);
            &synthetic
        }
    };
    let patterns: Vec<PatternId> = match &a.pattern {
        Some(p) => vec![p.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?],
        None => PatternId::ALL.to_vec(),
    };
    let b = bound(a.exhaustive_bound);
    match a.kind {
        DiagnoseKind::Collapse => write_json(&a.out, stdout, &collapse_profile(g, a.samples, a.seed, &b)?),
        DiagnoseKind::Profile => {
            let rows = patterns
                .iter()
                .map(|&p| evaluate_cardinality_profile(g, p, a.samples, a.seed, Some(&b)))
                .collect::<Result<Vec<_>, _>>()?;
            write_json(&a.out, stdout, &rows)
        }
        DiagnoseKind::Oversensitivity => {
            let rows = patterns
                .iter()
                .map(|&p| {
                    oversensitivity_profile(g, p, a.samples, a.seed).map(|scores| OversensitivityRow { pattern: p, scores })
                })
                .collect::<Result<Vec<_>, _>>()?;
            write_json(&a.out, stdout, &rows)
        }
    }
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let origin = match &a.ui_origin {
        Some(o) => Some(o.parse().map_err(|_| CliError::Usage(format!("invalid origin `{o}`")))?),
        None => None,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    rt.block_on(async move {
        let state = crate::api::AppState::new(bound(a.exhaustive_bound));
        let app = crate::api::router(state.clone(), origin);
        let addr = format!("{}:{}", a.bind, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Data(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on http://{addr}");
        let dir = a.graph.clone();
        let which: SplitName = a.split.into();
        let loader = tokio::task::spawn_blocking(move || load_split(dir));
        let server = tokio::spawn(async move { axum::serve(listener, app).await });
        match loader.await {
            Ok(Ok(split)) => {
                eprintln!("graph loaded: {} entities, {} triples", split.test.entity_count(), split.graph(which).triple_count());
                state.install(split, which);
            }
            Ok(Err(e)) => return Err(CliError::from(e)),
            Err(e) => return Err(CliError::Data(e.to_string())),
        }
        server
            .await
            .map_err(|e| CliError::Data(e.to_string()))?
            .map_err(|e| CliError::Data(e.to_string()))
    })
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 on usage
/// errors and 2 on data errors.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Stats(a) => stats(a, stdout),
        Command::Sample(a) => sample(a, stdout),
        Command::Eval(a) => eval(a, stdout),
        Command::Score(a) => score(a, stdout),
        Command::Abduce(a) => abduce_cmd(a, stdout),
        Command::Evaluate(a) => evaluate_cmd(a, stdout),
        Command::Diagnose(a) => diagnose(a, stdout),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

pub fn main_with_stdio() -> i32 {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    run(std::env::args_os(), &mut lock)
}
