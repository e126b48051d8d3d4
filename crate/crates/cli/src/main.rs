//! `refinery` command-line entry point.
//!
//! Exit codes: 0 success, 1 fatal error, 2 partial failure (some records
//! failed but output was written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refinery::backend::Backends;
use refinery::config::Config;
use refinery::corpus::{self, Corpus, FailureRecord, LabelRecord, OutputRecord, RefinementRecord};
use refinery::databuild::{self, BuildConfig, BuildModels, ReasoningStrategy};
use refinery::evaluator::Evaluator;
use refinery::experiment::{self, ExperimentPlan, FeedbackTier, RunStatus};
use refinery::feedback::{choose_order, FeedbackLabels, OrderPolicy};
use refinery::pipeline::{run_pipeline, LabelMode, PipelineKind, PipelineModels, RefineInput};
use refinery::stats::TableFormat;
use refinery::backend::ApproxTokenCounter;

const VALUES_HELP: &str = "\
Pipelines:
  p1-faith, p1-comp, p1-conc  one dimension, one call
  p2                          one dimension per session, three calls
  p3                          one dimension per turn in a single session
  p4                          all dimensions in one call
  refeed                      reflective reasoning over all dimensions
  dcr                         per-sentence critique, then refinement
  acueval                     unsupported-fact detection, then refinement

Order policies:
  fixed                       faithfulness, completeness, conciseness
  fixed:DIM,DIM,DIM           a given permutation
  random[:SEED]               uniform over the six permutations per record
  last:DIM[:SEED]             DIM always last, the other two shuffled

DIM is faith, comp or conc. A policy without a seed uses --seed.

Exit codes: 0 success, 1 fatal error, 2 partial failure.
The API key for HTTP backends is read from REFINERY_API_KEY.";

#[derive(Parser, Debug)]
#[command(name = "refinery", version, about = "Evaluate, refine and report on multi-dimensional summary feedback", after_help = VALUES_HELP)]
struct Cli {
    /// Config file (TOML).
    #[arg(long, global = true, default_value = "refinery.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label and score every summary in a corpus.
    Evaluate(EvaluateArgs),
    /// Refine every summary with one pipeline.
    #[command(after_help = VALUES_HELP)]
    Refine(RefineArgs),
    /// Build a reasoning training dataset.
    BuildDataset(BuildArgs),
    /// Run the configured pipelines × tiers × policies sweep.
    #[command(after_help = VALUES_HELP)]
    Experiment(ExperimentArgs),
    /// Render tables from an outcome file.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Corpus file; defaults to [corpus] path.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Seed for every random choice; a random seed is drawn and printed when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Detector tier: high or low.
    #[arg(long, default_value = "high", value_parser = parse_tier)]
    feedback_tier: FeedbackTier,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// Backend id; defaults to the tier's detector.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[command(flatten)]
    common: Common,
    /// Labels written by `evaluate`; computed with the detector when absent.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_parser = parse_pipeline)]
    pipeline: PipelineKind,
    #[arg(long, default_value = "fixed")]
    order_policy: String,
    /// Reuse the initial labels in later P2/P3 turns instead of relabelling.
    #[arg(long)]
    stale_labels: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
    /// reflective or receptive.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<ReasoningStrategy>,
    /// Require a strict gain in every dimension.
    #[arg(long)]
    strict_delta: bool,
    /// Largest accepted reasoning length in tokens.
    #[arg(long)]
    token_cap: Option<usize>,
    /// Keep the default feedback order in every record.
    #[arg(long)]
    no_shuffle: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// Pipelines to run; repeatable. Overrides [pipelines] kinds.
    #[arg(long = "pipeline", value_parser = parse_pipeline)]
    pipelines: Vec<PipelineKind>,
    /// Order policies; repeatable. Overrides [trials] policies.
    #[arg(long = "order-policy")]
    order_policies: Vec<String>,
    /// Also run the other tier.
    #[arg(long)]
    both_tiers: bool,
    #[arg(long)]
    stale_labels: bool,
    /// Output directory; defaults to [paths] output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Outcome file written by `experiment`.
    #[arg(long)]
    outcome: PathBuf,
    #[arg(long, default_value = "markdown", value_parser = parse_format)]
    format: TableFormat,
    #[arg(long, default_value_t = refinery::stats::DEFAULT_RESAMPLES)]
    resamples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resample whole documents in the bootstrap.
    #[arg(long)]
    group_by_document: bool,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pipeline(s: &str) -> Result<PipelineKind, String> {
    s.parse().map_err(|e: refinery::pipeline::UnknownPipeline| e.to_string())
}

fn parse_tier(s: &str) -> Result<FeedbackTier, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<TableFormat, String> {
    s.parse()
}

fn parse_strategy(s: &str) -> Result<ReasoningStrategy, String> {
    match s.to_ascii_lowercase().as_str() {
        "reflective" => Ok(ReasoningStrategy::Reflective),
        "receptive" => Ok(ReasoningStrategy::Receptive),
        other => Err(format!("unknown strategy {other:?} (expected reflective or receptive)")),
    }
}

/// A fatal error: message for standard error, exit code 1.
struct Fatal(String);

impl<E: std::fmt::Display> From<E> for Fatal {
    fn from(e: E) -> Self {
        Fatal(e.to_string())
    }
}

type CmdResult = Result<ExitCode, Fatal>;

const PARTIAL: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Report(args) => cmd_report(args),
        cmd => load_config(&cli.config).and_then(|config| match cmd {
            Command::Evaluate(a) => cmd_evaluate(&config, a),
            Command::Refine(a) => cmd_refine(&config, a),
            Command::BuildDataset(a) => cmd_build_dataset(&config, a),
            Command::Experiment(a) => cmd_experiment(&config, a),
            Command::Report(_) => unreachable!(),
        }),
    };
    match result {
        Ok(code) => code,
        Err(Fatal(msg)) => {
            eprintln!("refinery: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Path) -> Result<Config, Fatal> {
    if !path.exists() {
        return Err(Fatal(format!("config {} not found (pass --config)", path.display())));
    }
    Ok(Config::load(path)?)
}

/// The seed and where it came from.
fn resolve_seed(flag: Option<u64>, config: &Config) -> (u64, &'static str) {
    match (flag, config.defaults.seed) {
        (Some(s), _) => (s, "flag"),
        (None, Some(s)) => (s, "config"),
        (None, None) => {
            let s = rand::random::<u32>() as u64;
            eprintln!("refinery: no --seed given, using {s}");
            (s, "random")
        }
    }
}

fn load_corpus(flag: &Option<PathBuf>, config: &Config) -> Result<Corpus, Fatal> {
    let path = match flag {
        Some(p) => p.clone(),
        None => config
            .corpus
            .path
            .as_ref()
            .map(|p| config.resolve(p))
            .ok_or_else(|| Fatal("no corpus given (pass --corpus or set [corpus] path)".into()))?,
    };
    corpus::load_corpus(&path).map_err(|e| Fatal(format!("{}: {e}", path.display())))
}

fn detector_id(config: &Config, tier: FeedbackTier) -> Result<String, Fatal> {
    let p = &config.pipelines;
    let role = match tier {
        FeedbackTier::High => &p.detector_high,
        FeedbackTier::Low => &p.detector_low,
    };
    Ok(config.role_backend(role, &format!("pipelines.detector_{tier}"))?)
}

fn exit_for(ok: usize, failed: usize) -> ExitCode {
    match (ok, failed) {
        (_, 0) => ExitCode::SUCCESS,
        (0, _) => ExitCode::from(1),
        _ => ExitCode::from(PARTIAL),
    }
}

fn failure(record_id: String, stage: &str, message: impl ToString) -> OutputRecord {
    OutputRecord::Failure(FailureRecord {
        record_id,
        stage: stage.into(),
        message: message.to_string(),
        pipeline: None,
        raw: None,
    })
}

fn keyfacts_for(entry: &corpus::CorpusEntry, evaluator: &Evaluator) -> Result<refinery::KeyFactSet, String> {
    match &entry.keyfacts {
        Some(k) => Ok(k.clone()),
        None => evaluator
            .extract_key_facts(&entry.document.id, &entry.document.text)
            .map(|x| x.keyfacts)
            .map_err(|e| e.to_string()),
    }
}

fn cmd_evaluate(config: &Config, args: &EvaluateArgs) -> CmdResult {
    let corpus = load_corpus(&args.common.corpus, config)?;
    let backends = config.build_backends()?;
    let id = match &args.backend {
        Some(b) => b.clone(),
        None => detector_id(config, args.common.feedback_tier)?,
    };
    let evaluator = Evaluator::new(config.handle(&backends, &id)?);
    let mut out = Vec::new();
    let (mut ok, mut failed) = (0, 0);
    for entry in &corpus.entries {
        let kf = keyfacts_for(entry, &evaluator);
        for s in &entry.summaries {
            let rec = kf.clone().and_then(|kf| {
                let e = evaluator.evaluate(&entry.document, s, &kf).map_err(|e| e.to_string())?;
                let labels = e.labels(s.len(), kf.len()).map_err(|e| e.to_string())?;
                Ok(LabelRecord {
                    record_id: s.record_id(),
                    doc_id: s.doc_id.clone(),
                    summarizer: s.summarizer_id.clone(),
                    labels,
                    scores: e.scores,
                    keyfacts: Some(kf),
                    evaluation: Some(e),
                })
            });
            match rec {
                Ok(r) => {
                    ok += 1;
                    out.push(OutputRecord::Labels(r));
                }
                Err(e) => {
                    failed += 1;
                    eprintln!("refinery: {}: {e}", s.record_id());
                    out.push(failure(s.record_id(), "evaluate", e));
                }
            }
        }
    }
    corpus::write_results(&args.out, &out)?;
    eprintln!("refinery: {ok} labelled, {failed} failed");
    Ok(exit_for(ok, failed))
}

fn cmd_refine(config: &Config, args: &RefineArgs) -> CmdResult {
    let (seed, _) = resolve_seed(args.common.seed, config);
    let policy: OrderPolicy = experiment::parse_policy(&args.order_policy, seed).map_err(Fatal)?;
    let corpus = load_corpus(&args.common.corpus, config)?;
    let backends = config.build_backends()?;
    let refine = config.handle(&backends, &config.role_backend(&config.pipelines.refine, "pipelines.refine")?)?;
    let reason = config
        .pipelines
        .reason
        .as_ref()
        .map(|r| config.handle(&backends, r))
        .transpose()?;
    let det_model = config.handle(&backends, &detector_id(config, args.common.feedback_tier)?)?;
    let detector = Evaluator::new(det_model.clone());
    let stored: Vec<LabelRecord> = match &args.labels {
        Some(p) => corpus::load_results::<OutputRecord>(p)?
            .into_iter()
            .filter_map(|r| match r {
                OutputRecord::Labels(l) => Some(l),
                _ => None,
            })
            .collect(),
        None => Vec::new(),
    };
    let stale = args.stale_labels || config.pipelines.stale_labels;

    let mut out = Vec::new();
    let (mut ok, mut failed) = (0, 0);
    for (index, (entry, s)) in corpus.records().enumerate() {
        let rid = s.record_id();
        let prepared = (|| -> Result<(refinery::KeyFactSet, FeedbackLabels), String> {
            if let Some(l) = stored.iter().find(|l| l.record_id == rid) {
                let kf = match &l.keyfacts {
                    Some(k) => k.clone(),
                    None => keyfacts_for(entry, &detector)?,
                };
                return Ok((kf, l.labels.clone()));
            }
            let kf = keyfacts_for(entry, &detector)?;
            let e = detector.evaluate(&entry.document, s, &kf).map_err(|e| e.to_string())?;
            let labels = e.labels(s.len(), kf.len()).map_err(|e| e.to_string())?;
            Ok((kf, labels))
        })();
        let (kf, labels) = match prepared {
            Ok(x) => x,
            Err(e) => {
                failed += 1;
                eprintln!("refinery: {rid}: {e}");
                out.push(failure(rid, "labels", e));
                continue;
            }
        };
        let order = choose_order(&policy, index as u64);
        let input = RefineInput {
            document: &entry.document,
            summary: s,
            keyfacts: &kf,
            labels: &labels,
        };
        let models = PipelineModels {
            refine: &refine,
            reason: reason.as_ref(),
            detector: Some(&det_model),
            label_mode: if stale { LabelMode::Stale } else { LabelMode::Relabel(&detector) },
        };
        match run_pipeline(args.pipeline, input, order, models, None) {
            Ok(result) => {
                ok += 1;
                out.push(OutputRecord::Refinement(RefinementRecord {
                    record_id: rid,
                    doc_id: s.doc_id.clone(),
                    summarizer: s.summarizer_id.clone(),
                    policy: policy.label(),
                    labels,
                    result,
                }));
            }
            Err(e) => {
                failed += 1;
                eprintln!("refinery: {rid}: {e}");
                let raw = e.raw().map(str::to_string);
                out.push(OutputRecord::Failure(FailureRecord {
                    record_id: rid,
                    stage: "refine".into(),
                    message: e.to_string(),
                    pipeline: Some(args.pipeline.to_string()),
                    raw,
                }));
            }
        }
    }
    corpus::write_results(&args.out, &out)?;
    eprintln!("refinery: {ok} refined, {failed} failed");
    Ok(exit_for(ok, failed))
}

fn write(path: &Path, text: &str) -> Result<(), Fatal> {
    std::fs::write(path, text).map_err(|e| Fatal(format!("{}: {e}", path.display())))
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("records serialize") + "\n")
        .collect()
}

fn cmd_build_dataset(config: &Config, args: &BuildArgs) -> CmdResult {
    let (seed, _) = resolve_seed(args.common.seed, config);
    let db = &config.databuild;
    let strategy = match args.strategy {
        Some(s) => s,
        None => parse_strategy(&db.strategy).map_err(Fatal)?,
    };
    let corpus = load_corpus(&args.common.corpus, config)?;
    let backends: Backends = config.build_backends()?;
    let teacher_id = match &db.teacher {
        Some(t) => t.clone(),
        None => config.role_backend(&config.pipelines.refine, "databuild.teacher")?,
    };
    let teacher = config.handle(&backends, &teacher_id)?;
    let detector = Evaluator::new(config.handle(&backends, &detector_id(config, args.common.feedback_tier)?)?);
    let verifier = Evaluator::new(config.handle(&backends, &config.role_backend(&config.pipelines.eval, "pipelines.eval")?)?);
    let summarizers = db
        .summarizers
        .iter()
        .map(|id| config.handle(&backends, id))
        .collect::<Result<Vec<_>, _>>()?;
    let build_config = BuildConfig {
        pipeline: match strategy {
            ReasoningStrategy::Reflective => "ReFeed".into(),
            ReasoningStrategy::Receptive => "P4-FT".into(),
        },
        strategy,
        tier: args.common.feedback_tier.to_string(),
        token_cap: args.token_cap.unwrap_or(db.token_cap),
        strict_delta: args.strict_delta || db.strict_delta,
        shuffle_orders: db.shuffle_orders && !args.no_shuffle,
        seed,
    };
    let models = BuildModels {
        summarizers: &summarizers,
        detector: &detector,
        teacher: &teacher,
        verifier: &verifier,
        counter: &ApproxTokenCounter,
    };
    let build = databuild::build_dataset(&corpus, &build_config, &models);
    std::fs::create_dir_all(&args.out).map_err(|e| Fatal(format!("{}: {e}", args.out.display())))?;
    write(&args.out.join("train.jsonl"), &build.records_jsonl())?;
    write(&args.out.join("samples.jsonl"), &jsonl(&build.samples))?;
    write(&args.out.join("dropped.jsonl"), &jsonl(&build.dropped))?;
    write(&args.out.join("ledger.csv"), &databuild::stage_ledger(std::slice::from_ref(&build.ledger)))?;
    let l = &build.ledger;
    eprintln!(
        "refinery: {} samples, {} format-passed, {} verified ({}), {} dropped",
        l.original,
        l.format_passed,
        l.verification_passed,
        l.ratio_text(),
        build.dropped.len()
    );
    Ok(if build.dropped.is_empty() {
        ExitCode::SUCCESS
    } else if l.original == 0 {
        ExitCode::from(1)
    } else {
        ExitCode::from(PARTIAL)
    })
}

fn cmd_experiment(config: &Config, args: &ExperimentArgs) -> CmdResult {
    let (seed, source) = resolve_seed(args.common.seed, config);
    let mut config = config.clone();
    if let Some(c) = &args.common.corpus {
        config.corpus.path = Some(std::path::absolute(c)?);
    }
    if args.both_tiers {
        config.pipelines.tiers = vec!["high".into(), "low".into()];
    } else if config.pipelines.tiers.is_empty() || args.common.feedback_tier != FeedbackTier::High {
        config.pipelines.tiers = vec![args.common.feedback_tier.to_string()];
    }
    if !args.pipelines.is_empty() {
        config.pipelines.kinds = args.pipelines.iter().map(ToString::to_string).collect();
    }
    if !args.order_policies.is_empty() {
        config.trials.policies = args.order_policies.clone();
    }
    config.pipelines.stale_labels |= args.stale_labels;
    let plan = ExperimentPlan::from_config(&config, seed)?;
    let corpus = corpus::load_corpus(&plan.corpus).map_err(|e| Fatal(format!("{}: {e}", plan.corpus.display())))?;
    let backends = config.build_backends()?;
    let mut outcome = experiment::run_experiment(&plan, &corpus, &backends, &config)?;
    outcome.manifest.seed_source = source.into();
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.paths.output.as_ref().map(|p| config.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("out"));
    experiment::write_outputs(&outcome, &out_dir)?;
    let m = &outcome.manifest;
    eprintln!(
        "refinery: {} outcomes, {} failures, status {:?}, outputs in {}",
        m.outcomes,
        m.failures,
        m.status,
        out_dir.display()
    );
    Ok(match outcome.status {
        RunStatus::Complete => ExitCode::SUCCESS,
        RunStatus::Partial => ExitCode::from(PARTIAL),
        RunStatus::Failed => {
            eprintln!(
                "refinery: failure share over the budget of {}",
                plan.failure_budget
            );
            ExitCode::from(1)
        }
    })
}

fn cmd_report(args: &ReportArgs) -> CmdResult {
    let records = experiment::load_outcomes(&args.outcome)?;
    if records.is_empty() {
        return Err(Fatal(format!("{} holds no outcome records", args.outcome.display())));
    }
    let text = experiment::render_report(&records, args.resamples, args.seed, args.group_by_document, args.format);
    match &args.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}
