//! Command-line pipeline: `generate`, `fit`, `evaluate`, `explain`.
//!
//! Every command writes its outputs plus one `manifest.json` into `--out`.
//! Tunables live in the config file; flags only choose files, seed, threads
//! and verbosity.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::em::{fit, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{assignment_cosine, evaluate_rules, event_time_mae_with, EvalReport, PredictorSettings};
use crate::event_store::{load_sequences, save_sequences, LoadMode, PredicateCatalog};
use crate::rule_logic::RuleSet;
use crate::report::{catalog_differences, explain_sequence, format_explanation, ModelReport};
use crate::simulator::{load_labels, save_labels, simulate_corpus, GroundTruth, GroundTruthFile};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const CATALOG_FILE: &str = "catalog.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const MODEL_FILE: &str = "model.json";
pub const MANIFEST_FILE: &str = "manifest.json";

const PREDICTOR_PANELS: usize = 400;

#[derive(Debug, Parser)]
#[command(name = "rule-tpp", version, about = "Temporal logic rule discovery for event sequences")]
pub struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a corpus and label sidecar from a ground-truth config.
    Generate(GenerateArgs),
    /// Fit rules and parameters to a corpus.
    Fit(FitArgs),
    /// Score a model report against a ground-truth config.
    Evaluate(EvaluateArgs),
    /// Per-event posterior ranking for one sequence.
    Explain(ExplainArgs),
}

#[derive(Debug, Default, Args)]
pub struct LoadArgs {
    /// Reject unsorted time lists (default).
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Sort unsorted time lists with a warning.
    #[arg(long)]
    pub lenient: bool,
}

impl LoadArgs {
    fn mode(&self) -> LoadMode {
        if self.lenient {
            LoadMode::Lenient
        } else {
            LoadMode::Strict
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Ground-truth config (JSON or TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training config (TOML or JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Catalog file; defaults to `catalog.json` next to the corpus.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub load: LoadArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model report written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Ground-truth config.
    #[arg(long)]
    pub config: PathBuf,
    /// Corpus for assignment and event-time metrics.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Label sidecar matching `--corpus`.
    #[arg(long, requires = "corpus")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub load: LoadArgs,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Zero-based sequence index in the corpus.
    #[arg(long)]
    pub sequence: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub load: LoadArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub duration_secs: f64,
    pub version: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

struct Run {
    command: &'static str,
    config: Option<PathBuf>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Run {
            command,
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    fn finish(self, out: &Path) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: self.config,
            seed: self.seed,
            inputs: hashes(&self.inputs)?,
            outputs: hashes(&self.outputs)?,
            duration_secs: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        write_json(&out.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn load_truth(path: &Path) -> Result<GroundTruthFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::config("<file>", e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::config("<file>", e.to_string()))
    }
}

fn catalog_for(corpus: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| corpus.parent().unwrap_or(Path::new(".")).join(CATALOG_FILE))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<RunManifest> {
    let mut run = Run::new("generate");
    let mut spec = load_truth(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let gt = GroundTruth::from_file_spec(&spec)?;
    let sim = simulate_corpus(&gt, spec.count, spec.seed, spec.max_retries)?;
    log::info!("simulated {} sequences ({} redraws)", sim.sequences.len(), sim.resampled);
    create_dir(&args.out)?;
    let corpus = args.out.join(CORPUS_FILE);
    let labels = args.out.join(LABELS_FILE);
    let catalog = args.out.join(CATALOG_FILE);
    let truth = args.out.join(TRUTH_FILE);
    save_sequences(&corpus, &gt.catalog, &sim.sequences)?;
    save_labels(&labels, &sim.labels)?;
    write_json(&catalog, &gt.catalog)?;
    write_json(&truth, &spec)?;
    run.config = Some(args.config.clone());
    run.seed = Some(spec.seed);
    run.inputs = vec![args.config.clone()];
    run.outputs = vec![corpus, labels, catalog, truth];
    run.finish(&args.out)
}

pub fn cmd_fit(args: &FitArgs) -> Result<RunManifest> {
    let mut run = Run::new("fit");
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let catalog_path = catalog_for(&args.corpus, args.catalog.as_deref());
    let catalog = PredicateCatalog::from_file(&catalog_path)?;
    let corpus = load_sequences(&args.corpus, &catalog, args.load.mode())?;
    let sidecar = args.corpus.parent().unwrap_or(Path::new(".")).join(LABELS_FILE);
    if sidecar.exists() {
        log::info!("label sidecar {} ignored during fit", sidecar.display());
    }
    cfg.validate(catalog.body_count())?;
    let initial = cfg
        .initial_rules
        .as_ref()
        .map(|specs| RuleSet::from_specs(specs, &catalog))
        .transpose()?;
    let result = fit(&corpus, &cfg, initial)?;
    for (h, rule) in result.rule_set.iter().enumerate() {
        log::info!("rule {}: {}", h + 1, rule.describe(&catalog));
    }
    let report = ModelReport::new(&catalog, &cfg, &result, &corpus)?;
    create_dir(&args.out)?;
    let model = args.out.join(MODEL_FILE);
    write_json(&model, &report)?;
    run.config = args.config.clone();
    run.seed = Some(cfg.seed);
    run.inputs = args.config.iter().cloned().chain([args.corpus.clone(), catalog_path]).collect();
    run.outputs = vec![model];
    run.finish(&args.out)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<RunManifest> {
    let mut run = Run::new("evaluate");
    let model = ModelReport::load(&args.model)?;
    let spec = load_truth(&args.config)?;
    let diff = catalog_differences(&model.catalog, &spec.catalog);
    if !diff.is_empty() {
        return Err(Error::CatalogMismatch(diff.join(", ")));
    }
    let truth = GroundTruth::from_file_spec(&spec)?;
    let rules = model.rule_set()?;
    let params = model.params()?;
    let mut report: EvalReport = evaluate_rules(&rules, &params, &truth.rule_set, &truth.params);
    report.seed = Some(model.seed);
    run.inputs = vec![args.model.clone(), args.config.clone()];
    if let Some(corpus_path) = &args.corpus {
        let seqs = load_sequences(corpus_path, &model.catalog, args.load.mode())?;
        run.inputs.push(corpus_path.clone());
        let settings = PredictorSettings::from_mean_gap(model.mean_inter_event, PREDICTOR_PANELS)?;
        let et = event_time_mae_with(&params, &rules, &seqs, model.config.delta, &settings)?;
        report.event_time_mae = Some(et.model_mae);
        report.baseline_event_time_mae = Some(et.baseline_mae);
        match &args.labels {
            Some(labels_path) => {
                let labels = load_labels(labels_path)?;
                run.inputs.push(labels_path.clone());
                let inferred = seqs
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let ex = explain_sequence(i, s, &params, &rules, &model.catalog, model.config.delta)?;
                        Ok(ex.events.iter().map(|e| e.ranking[0].component).collect())
                    })
                    .collect::<Result<Vec<Vec<usize>>>>()?;
                report.assignment_cosine = Some(assignment_cosine(
                    &rules,
                    &inferred,
                    &truth.rule_set,
                    &labels,
                    model.catalog.body_count(),
                )?);
            }
            None => log::info!("no labels given, assignment cosine omitted"),
        }
    }
    create_dir(&args.out)?;
    let json = args.out.join("eval.json");
    let csv = args.out.join("eval.csv");
    write_json(&json, &report)?;
    write_text(&csv, &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()))?;
    run.config = Some(args.config.clone());
    run.seed = Some(model.seed);
    run.outputs = vec![json, csv];
    run.finish(&args.out)
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<(RunManifest, String)> {
    let mut run = Run::new("explain");
    let model = ModelReport::load(&args.model)?;
    let seqs = load_sequences(&args.corpus, &model.catalog, args.load.mode())?;
    let seq = seqs.get(args.sequence).ok_or_else(|| {
        Error::validation(format!("unknown sequence id {} (corpus has {})", args.sequence, seqs.len()))
    })?;
    let ex = explain_sequence(
        args.sequence,
        seq,
        &model.params()?,
        &model.rule_set()?,
        &model.catalog,
        model.config.delta,
    )?;
    let text = format_explanation(&ex);
    create_dir(&args.out)?;
    let json = args.out.join("explain.json");
    let txt = args.out.join("explain.txt");
    write_json(&json, &ex)?;
    write_text(&txt, &text)?;
    run.seed = Some(model.seed);
    run.inputs = vec![args.model.clone(), args.corpus.clone()];
    run.outputs = vec![json, txt];
    Ok((run.finish(&args.out)?, text))
}

/// Process exit status for an error class.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Catalog(_) | Error::UnknownPredicate(_) | Error::Rule(_) | Error::PredicateIndex(_) => 2,
        Error::Io { .. } => 3,
        Error::Numerical(_) | Error::Unexplained { .. } | Error::RetryBudget { .. } => 4,
        Error::Parse { .. } | Error::Validation { .. } | Error::CatalogMismatch(_) | Error::Json(_) => 5,
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            2 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    init_logging(&cli);
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("threads", e.to_string()))?;
    }
    match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| ()),
        Command::Fit(a) => cmd_fit(a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ()),
        Command::Explain(a) => {
            let (_, text) = cmd_explain(a)?;
            print!("{text}");
            Ok(())
        }
    }
}
