//! Command-line front end: evaluation runs, ad-hoc scoring, dataset
//! validation, and a peer-prediction worked example.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
//! Configuration precedence: flags > environment variables > config file >
//! defaults.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use serum_core::backend::{Backend, BackendConfig, BackendKind};
use serum_core::benchmarks::{compute_stats, load, TaskKind};
use serum_core::harness::{self, report, DatasetSpec, HarnessError, PriorMode, RunConfig};
use serum_core::pts::{pts_expected_reward, pts_frequency, pts_reward, PtsContext};
use serum_core::scoring::{select, tau, MethodId, ScoredCandidate};
use serum_core::{BackendError, DataError};

#[derive(Parser)]
#[command(
    name = "serum",
    about = "Score and select surprisingly likely answers under a language-model backend",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate selection methods over a benchmark dataset.
    Eval(EvalArgs),
    /// Score ad-hoc candidates for a single question.
    Score(ScoreArgs),
    /// Parse a dataset and print its statistics.
    Validate(ValidateArgs),
    /// Print a worked example of the peer-prediction reward.
    PtsDemo,
}

#[derive(Args)]
struct BackendArgs {
    /// Backend kind.
    #[arg(long, value_parser = ["ngram", "remote"])]
    backend: Option<String>,
    /// Training corpus for the ngram backend.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Base URL of the remote log-probability service.
    #[arg(long)]
    remote_url: Option<String>,
    /// Model identifier sent to the remote service.
    #[arg(long)]
    model: Option<String>,
    /// Directory for the persistent score cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset kind.
    #[arg(long, value_parser = ["truthfulqa", "copa", "storycloze"])]
    task: Option<String>,
    /// Dataset file path.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Comma-separated method list, e.g. max_post,max_ratio,top_k_min_prior:k=3.
    #[arg(long)]
    methods: Option<String>,
    /// Prior context mode (truthfulqa only): question_mark, empty, or multi:<file>.
    #[arg(long)]
    prior: Option<String>,
    /// Parallel scoring jobs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory for report.json, report.txt and instances.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record failing items as unanswered instead of aborting.
    #[arg(long)]
    skip_errors: bool,
    /// JSON config file mirroring the run-config field names.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// The question (conditioning context).
    #[arg(long)]
    question: String,
    /// Reduced context used for the prior.
    #[arg(long, default_value = "?")]
    prior_context: String,
    /// Candidate answer; repeat the flag for each candidate.
    #[arg(long = "candidate")]
    candidates: Vec<String>,
    /// Comma-separated method list (defaults to all six).
    #[arg(long)]
    methods: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ValidateArgs {
    /// Dataset kind.
    #[arg(long, value_parser = ["truthfulqa", "copa", "storycloze"])]
    task: String,
    /// Dataset file path.
    #[arg(long)]
    data: PathBuf,
}

enum CliError {
    Usage(String),
    Data(String),
    Backend(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Backend(m) => m,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(err: HarnessError) -> Self {
        match &err {
            HarnessError::Backend(BackendError::InvalidParam(_)) => {
                CliError::Usage(err.to_string())
            }
            // Items fail during scoring, i.e. on the backend side.
            HarnessError::Backend(_) | HarnessError::ItemFailed { .. } => {
                CliError::Backend(err.to_string())
            }
            HarnessError::InvalidConfig(_) | HarnessError::Scoring(_) => {
                CliError::Usage(err.to_string())
            }
            _ => CliError::Data(err.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(err: BackendError) -> Self {
        match err {
            BackendError::InvalidParam(_) => CliError::Usage(err.to_string()),
            _ => CliError::Backend(err.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{err}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let result = match cli.command {
        Command::Eval(args) => run_eval(args),
        Command::Score(args) => run_score(args),
        Command::Validate(args) => run_validate(args),
        Command::PtsDemo => run_pts_demo(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn parse_methods(spec: &str) -> Result<Vec<MethodId>, CliError> {
    let mut methods = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let method: MethodId = name
            .parse()
            .map_err(|e| CliError::Usage(format!("--methods: {e}")))?;
        if !methods.contains(&method) {
            methods.push(method);
        }
    }
    if methods.is_empty() {
        return Err(CliError::Usage("--methods lists no methods".into()));
    }
    Ok(methods)
}

fn parse_prior(spec: &str) -> Result<PriorMode, CliError> {
    match spec {
        "question_mark" => Ok(PriorMode::Item),
        "empty" => Ok(PriorMode::Empty),
        other => match other.strip_prefix("multi:") {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Data(format!("--prior multi file {path}: {e}")))?;
                let contexts: Vec<String> = text.lines().map(str::to_string).collect();
                if contexts.is_empty() {
                    return Err(CliError::Data(format!(
                        "--prior multi file {path} is empty"
                    )));
                }
                Ok(PriorMode::Multi(contexts))
            }
            None => Err(CliError::Usage(format!(
                "--prior must be question_mark, empty, or multi:<file>, got {other:?}"
            ))),
        },
    }
}

/// Builds the run config from file < environment < flags.
fn resolve_run_config(args: &EvalArgs) -> Result<RunConfig, CliError> {
    let mut config: RunConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("config file {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("config file {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };

    config.backend = config.backend.with_env_overrides(|k| std::env::var(k).ok());

    if let Some(kind) = &args.backend.backend {
        config.backend.kind = match kind.as_str() {
            "ngram" => BackendKind::Ngram,
            _ => BackendKind::Remote,
        };
    }
    if let Some(url) = &args.backend.remote_url {
        config.backend.remote_url = Some(url.clone());
    }
    if let Some(dir) = &args.backend.cache_dir {
        config.backend.cache_dir = Some(dir.clone());
    }
    if let Some(model) = &args.backend.model {
        config.model = model.clone();
    }
    if let Some(corpus) = &args.backend.corpus {
        config.corpus_path = Some(corpus.clone());
    }
    if let (Some(task), Some(data)) = (&args.task, &args.data) {
        let kind: TaskKind = task
            .parse()
            .map_err(|e: String| CliError::Usage(e))?;
        config.datasets = vec![DatasetSpec {
            kind,
            path: data.clone(),
        }];
    } else if args.task.is_some() || args.data.is_some() {
        return Err(CliError::Usage(
            "--task and --data must be given together".into(),
        ));
    }
    if let Some(methods) = &args.methods {
        config.methods = parse_methods(methods)?;
    }
    if let Some(prior) = &args.prior {
        if !config
            .datasets
            .iter()
            .all(|d| d.kind == TaskKind::TruthfulQa)
        {
            return Err(CliError::Usage(
                "--prior applies to truthfulqa datasets only".into(),
            ));
        }
        config.prior_mode = parse_prior(prior)?;
    }
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if args.skip_errors {
        config.skip_errors = true;
    }

    if config.datasets.is_empty() {
        return Err(CliError::Usage(
            "no dataset given: pass --task and --data (or a config file)".into(),
        ));
    }
    if config.methods.is_empty() {
        return Err(CliError::Usage(
            "no methods given: pass --methods (or a config file)".into(),
        ));
    }
    config.validate().map_err(CliError::from)?;
    Ok(config)
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let config = resolve_run_config(&args)?;
    let outcome = harness::evaluate(&config)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    print!("{}", report::render_aggregate_table(&outcome.report));
    println!(
        "\nwrote {}, {}, {}",
        outcome.report_json.display(),
        outcome.report_txt.display(),
        outcome.instances_jsonl.display()
    );
    Ok(())
}

fn backend_from_args(args: &BackendArgs) -> Result<Box<dyn Backend>, CliError> {
    let mut backend = BackendConfig::ngram();
    backend.kind = match args.backend.as_deref() {
        Some("remote") => BackendKind::Remote,
        _ => BackendKind::Ngram,
    };
    if let Some(url) = &args.remote_url {
        backend.remote_url = Some(url.clone());
    }
    if let Some(dir) = &args.cache_dir {
        backend.cache_dir = Some(dir.clone());
    }
    let backend = backend.with_env_overrides(|k| {
        // Flags win over the environment.
        match k {
            "SERUM_REMOTE_URL" if args.remote_url.is_some() => None,
            "SERUM_CACHE_DIR" if args.cache_dir.is_some() => None,
            _ => std::env::var(k).ok(),
        }
    });
    let mut config = RunConfig::default();
    config.backend = backend;
    config.corpus_path = args.corpus.clone();
    if let Some(model) = &args.model {
        config.model = model.clone();
    }
    harness::build_backend(&config).map_err(CliError::from)
}

fn run_score(args: ScoreArgs) -> Result<(), CliError> {
    if args.candidates.is_empty() {
        return Err(CliError::Usage(
            "at least one --candidate is required".into(),
        ));
    }
    let methods = match &args.methods {
        Some(spec) => parse_methods(spec)?,
        None => MethodId::all_default(),
    };
    let backend = backend_from_args(&args.backend)?;

    let mut cands = Vec::new();
    for (idx, text) in args.candidates.iter().enumerate() {
        let post = backend
            .score_continuation(&args.question, text)
            .map_err(CliError::from)?;
        let prior = backend
            .score_continuation(&args.prior_context, text)
            .map_err(CliError::from)?;
        let cand = ScoredCandidate::new(
            idx,
            text.clone(),
            post.total_logprob,
            prior.total_logprob,
            post.token_count,
        )
        .map_err(|e| CliError::Data(e.to_string()))?;
        cands.push(cand);
    }

    println!("index\tlogp_post\tlogp_prior\ttau\tcandidate");
    for c in &cands {
        println!(
            "{}\t{}\t{}\t{}\t{}",
            c.index(),
            c.logp_post(),
            c.logp_prior(),
            tau(c),
            c.text()
        );
    }
    println!();
    for method in methods {
        let selection = select(method, &cands).map_err(|e| CliError::Usage(e.to_string()))?;
        println!(
            "{}: index {} ({})",
            method.flag_name(),
            selection.chosen_index,
            cands[selection.chosen_index].text()
        );
    }
    Ok(())
}

fn run_validate(args: ValidateArgs) -> Result<(), CliError> {
    let kind: TaskKind = args.task.parse().map_err(|e: String| CliError::Usage(e))?;
    let loaded = load(kind, &args.data)?;
    for warning in &loaded.warnings {
        eprintln!("warning: {warning}");
    }
    let stats = compute_stats(&loaded.items)?;
    println!("task: {}", kind.name());
    println!("items: {}", stats.item_count);
    println!("mean candidates per item: {:.4}", stats.mean_candidates);
    if stats.filtered_count + stats.unfiltered_count > 0 {
        println!(
            "splits: {} filtered, {} unfiltered",
            stats.filtered_count, stats.unfiltered_count
        );
    }
    if !stats.category_histogram.is_empty() {
        println!("categories: {}", stats.category_histogram.len());
        for (category, count) in &stats.category_histogram {
            println!("  {category}: {count}");
        }
    }
    Ok(())
}

fn run_pts_demo() -> Result<(), CliError> {
    let labels = ["hague", "amsterdam", "other"];
    let counts: BTreeMap<String, u64> = [("hague", 1u64), ("amsterdam", 12), ("other", 7)]
        .into_iter()
        .map(|(l, c)| (l.to_string(), c))
        .collect();
    let peer_dist: BTreeMap<String, f64> = [("hague", 0.3), ("amsterdam", 0.7), ("other", 0.0)]
        .into_iter()
        .map(|(l, p)| (l.to_string(), p))
        .collect();
    let ctx = PtsContext::new(
        labels.iter().map(|s| s.to_string()).collect(),
        counts.clone(),
        "hague",
        "hague",
    )
    .map_err(|e| CliError::Data(e.to_string()))?;

    println!("Peer-prediction reward, worked example");
    println!();
    println!("A question with answer space: {}", labels.join(", "));
    println!("Counts of each answer among peers on similar questions:");
    for label in labels {
        println!("  {label:<10} count {}", counts[label]);
    }
    println!();
    println!("Empirical frequency R(x) = count(x) / total:");
    for label in labels {
        let freq = pts_frequency(&ctx, label).map_err(|e| CliError::Data(e.to_string()))?;
        println!("  {label:<10} R = {freq:.4}");
    }
    println!();
    println!("Peer answer distribution for this question:");
    for label in labels {
        println!("  {label:<10} p = {:.4}", peer_dist[label]);
    }
    println!();
    println!("Expected reward of reporting x: p(x) / R(x):");
    for label in labels {
        let reward = pts_expected_reward(&ctx, &peer_dist, label)
            .map_err(|e| CliError::Data(e.to_string()))?;
        println!("  {label:<10} expected reward = {reward:.4}");
    }
    println!();
    let realized = pts_reward(&ctx).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "Realized reward when report and peer agree on {:?}: 1/R = {realized:.4}",
        ctx.report()
    );
    println!();
    println!("The rarer answer wins in expectation despite the lower peer");
    println!("probability, because the reward scales inversely with the prior.");
    Ok(())
}
