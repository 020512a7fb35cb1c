//! Command-line front end: `synth`, `prepare`, `train`, `generate`,
//! `eval` and `report`.
//!
//! Every subcommand writes only inside its run directory: `--run-dir`, or
//! `$LETTERLORA_RUN_ROOT/<subcommand>`, or `runs/<subcommand>`. Each run
//! directory holds one `manifest.json` describing the run.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 internal failure.

mod manifest;
mod pipeline;

pub use manifest::RunManifest;
pub use manifest::MANIFEST_FILE;
pub use pipeline::{
    build_tokenizer, encode_examples, fresh_model, read_examples, train_pipeline, write_examples, TrainArtifacts, QUANT_BLOCK,
};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::dataprep::{self, DataError, PrepareOptions, Task};
use crate::eval::{self, EvalError};
use crate::model::{Checkpoint, ModelError};
use crate::quant::BitWidth;
use crate::trainer::{MemoryBudget, TrainConfig, TrainError};

/// Environment variable naming the default run root.
pub const RUN_ROOT_ENV: &str = "LETTERLORA_RUN_ROOT";

#[derive(Debug)]
pub enum CliError {
    /// Bad input or usage; exit code 1.
    Invalid(String),
    /// Anything else; exit code 2.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => CliError::Internal(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) => CliError::Internal(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_)
            | TrainError::EmptyDataset
            | TrainError::NoAdapters
            | TrainError::TokenBudget { .. }
            | TrainError::GroupTooLarge { .. }
            | TrainError::NonFinite { .. } => CliError::Invalid(e.to_string()),
            TrainError::Model(m) => m.into(),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) | EvalError::Json(_) => CliError::Internal(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "letterlora", version, about = "Fine-tune and evaluate a tiny letter-generation model")]
struct Cli {
    /// Output directory for this run.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic letter corpus (corpus.jsonl).
    Synth(SynthArgs),
    /// Turn raw letters into prompt/completion examples (JSON lines).
    Prepare(PrepareArgs),
    /// Train LoRA adapters and write a checkpoint.
    Train(TrainArgs),
    /// Complete one prompt with a checkpoint.
    Generate(GenerateArgs),
    /// Score a checkpoint on a test set with ROUGE-1/2/L.
    Eval(EvalArgs),
    /// Summarize expert ratings and ROUGE score files.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n: usize,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// JSON-lines corpus of {"raw": ...} objects or a directory of .txt letters.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "letter")]
    task: Task,
    /// Strip or mask patient identifiers and shift dates.
    #[arg(long)]
    anonymize: bool,
    /// Seed for the per-letter date shifts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    max_tokens: usize,
    /// Move the last N examples to test.jsonl.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training examples (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Fast-pool capacity for optimizer paging; unbounded when absent.
    #[arg(long)]
    budget_bytes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Quantize the frozen base to 4 or 8 bits.
    #[arg(long)]
    quantize: Option<u8>,
    #[arg(long, default_value_t = 512)]
    vocab_size: usize,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prompt_file: PathBuf,
    #[arg(long, default_value_t = 256)]
    max_new: usize,
    /// Use the frozen base model only.
    #[arg(long)]
    no_adapters: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test examples (JSON lines).
    #[arg(long)]
    testset: PathBuf,
    #[arg(long, default_value_t = 256)]
    max_new: usize,
    /// Evaluate the frozen base model only.
    #[arg(long)]
    no_adapters: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Ratings CSV (case_id, rater_id and the four dimension scores).
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Per-case ROUGE CSV from `eval`; give two to compare them.
    #[arg(long)]
    scores: Vec<PathBuf>,
}

fn run_dir(explicit: Option<PathBuf>, sub: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        std::env::var_os(RUN_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(sub)
    })
}

fn invalid(m: impl Into<String>) -> CliError {
    CliError::Invalid(m.into())
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(invalid(format!("{} does not exist", p.display())))
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns
/// the process exit code. Diagnostics go to standard error.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    1
                }
            };
        }
    };
    match run(cli, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<(), CliError> {
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Prepare(_) => "prepare",
        Command::Train(_) => "train",
        Command::Generate(_) => "generate",
        Command::Eval(_) => "eval",
        Command::Report(_) => "report",
    };
    let dir = run_dir(cli.run_dir, name);
    let mut manifest = RunManifest::start(name, args);
    match cli.command {
        Command::Synth(a) => synth(&dir, a, &mut manifest)?,
        Command::Prepare(a) => prepare(&dir, a, &mut manifest)?,
        Command::Train(a) => train(&dir, a, &mut manifest)?,
        Command::Generate(a) => generate(&dir, a, &mut manifest)?,
        Command::Eval(a) => evaluate(&dir, a, &mut manifest)?,
        Command::Report(a) => report(&dir, a, &mut manifest)?,
    }
    manifest.finish(&dir)?;
    Ok(())
}

fn synth(dir: &Path, a: SynthArgs, m: &mut RunManifest) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    std::fs::create_dir_all(dir)?;
    let out = dir.join("corpus.jsonl");
    dataprep::write_raw_corpus(&out, &dataprep::generate_synthetic_corpus(a.seed, a.n))?;
    m.seed = Some(a.seed);
    m.config = json!({ "n": a.n });
    m.outputs.push(out);
    Ok(())
}

fn prepare(dir: &Path, a: PrepareArgs, m: &mut RunManifest) -> Result<(), CliError> {
    require_file(&a.input)?;
    let raw = dataprep::read_raw_corpus(&a.input)?;
    if raw.is_empty() {
        return Err(invalid(format!("{} holds no letters", a.input.display())));
    }
    if a.holdout >= raw.len() {
        return Err(invalid(format!("--holdout {} leaves no training letters of {}", a.holdout, raw.len())));
    }
    let opts = PrepareOptions {
        task: a.task,
        anonymize: a.anonymize.then_some(a.seed),
        max_tokens: a.max_tokens,
    };
    let examples = dataprep::prepare_examples(&raw, &opts)?;
    std::fs::create_dir_all(dir)?;
    let (train, test) = examples.split_at(examples.len() - a.holdout);
    let train_path = dir.join("train.jsonl");
    write_examples(&train_path, train)?;
    m.outputs.push(train_path);
    if !test.is_empty() {
        let test_path = dir.join("test.jsonl");
        write_examples(&test_path, test)?;
        m.outputs.push(test_path);
    }
    m.seed = Some(a.seed);
    m.inputs.push(a.input);
    m.config = json!({
        "task": a.task,
        "anonymize": a.anonymize,
        "max_tokens": a.max_tokens,
        "holdout": a.holdout,
    });
    Ok(())
}

fn train(dir: &Path, a: TrainArgs, m: &mut RunManifest) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(p) => {
            require_file(p)?;
            TrainConfig::from_toml(&std::fs::read_to_string(p)?)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.steps {
        config.total_steps = s;
    }
    if let Some(lr) = a.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(t) = a.max_tokens {
        config.max_tokens = t;
    }
    config.validate()?;
    let quantize = match a.quantize {
        None => None,
        Some(4) => Some(BitWidth::Four),
        Some(8) => Some(BitWidth::Eight),
        Some(b) => return Err(invalid(format!("--quantize must be 4 or 8, got {b}"))),
    };
    require_file(&a.data)?;
    let examples = read_examples(&a.data)?;
    let mut budget = match a.budget_bytes {
        Some(b) => MemoryBudget::with_capacity(b),
        None => MemoryBudget::unbounded(),
    };
    std::fs::create_dir_all(dir)?;
    let art = pipeline::train_pipeline(&examples, &config, a.vocab_size, quantize, &mut budget)?;
    let ckpt = dir.join("checkpoint.llck");
    art.checkpoint.save(&ckpt)?;
    let metrics = dir.join("metrics.csv");
    crate::trainer::write_metrics_csv(&metrics, &art.metrics)?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, config.to_toml())?;
    m.seed = Some(config.seed);
    m.config = json!({
        "train": config,
        "vocab_size": a.vocab_size,
        "quantize": a.quantize,
        "budget_bytes": a.budget_bytes,
        "offload_events": budget.offload_count(),
        "peak_fast_pool_bytes": budget.peak(),
    });
    m.inputs.extend(a.config);
    m.inputs.push(a.data);
    m.outputs.extend([ckpt, metrics, cfg_path]);
    Ok(())
}

fn load_checkpoint(path: &Path, no_adapters: bool) -> Result<Checkpoint, CliError> {
    require_file(path)?;
    let mut ck = Checkpoint::load(path)?;
    if no_adapters {
        ck.model.adapters = Default::default();
    }
    Ok(ck)
}

fn generate(dir: &Path, a: GenerateArgs, m: &mut RunManifest) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint, a.no_adapters)?;
    require_file(&a.prompt_file)?;
    let prompt = std::fs::read_to_string(&a.prompt_file)?;
    let ids = ck.tokenizer.encode(prompt.trim_end());
    let text = ck.model.generate(&ck.tokenizer, &ids, a.max_new)?;
    std::fs::create_dir_all(dir)?;
    let out = dir.join("output.txt");
    std::fs::write(&out, format!("{text}\n"))?;
    println!("{text}");
    m.config = json!({ "max_new": a.max_new, "no_adapters": a.no_adapters });
    m.inputs.extend([a.checkpoint, a.prompt_file]);
    m.outputs.push(out);
    Ok(())
}

fn evaluate(dir: &Path, a: EvalArgs, m: &mut RunManifest) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint, a.no_adapters)?;
    require_file(&a.testset)?;
    let test = read_examples(&a.testset)?;
    let result = eval::evaluate_corpus(&ck.model, &ck.tokenizer, &test, a.max_new)?;
    eval::write_eval_reports(dir, &result)?;
    for v in eval::VARIANTS {
        eprintln!("{v} f1 mean {:.4}", result.mean_f1(v));
    }
    m.config = json!({ "max_new": a.max_new, "no_adapters": a.no_adapters, "cases": test.len() });
    m.inputs.extend([a.checkpoint, a.testset]);
    m.outputs
        .extend(["cases.csv", "outputs.jsonl", "summary.csv", "summary.json", "report.md"].map(|f| dir.join(f)));
    Ok(())
}

fn report(dir: &Path, a: ReportArgs, m: &mut RunManifest) -> Result<(), CliError> {
    if a.ratings.is_none() && a.scores.is_empty() {
        return Err(invalid("report needs --ratings and/or --scores"));
    }
    if a.scores.len() > 2 {
        return Err(invalid("give at most two --scores files"));
    }
    std::fs::create_dir_all(dir)?;
    if let Some(r) = &a.ratings {
        require_file(r)?;
        let summary = eval::aggregate_ratings(&eval::read_ratings_csv(r)?)?;
        eval::write_rating_reports(dir, &summary)?;
        m.outputs.extend(
            ["ratings_dimensions.csv", "ratings_cases.csv", "ratings.json", "ratings.md"].map(|f| dir.join(f)),
        );
    }
    if !a.scores.is_empty() {
        let mut tables = Vec::new();
        for p in &a.scores {
            require_file(p)?;
            tables.push(eval::read_case_csv(p)?);
        }
        let mut rows = Vec::new();
        for v in eval::VARIANTS {
            let cols: Vec<Vec<f64>> = tables.iter().map(|t| t.iter().map(|r| r.f1(v)).collect()).collect();
            let mut row = json!({
                "variant": v.to_string(),
                "means": cols.iter().map(|c| eval::mean(c)).collect::<Vec<_>>(),
                "sds": cols.iter().map(|c| eval::sample_sd(c)).collect::<Vec<_>>(),
            });
            if let [x, y] = cols.as_slice() {
                row["t_test"] = serde_json::to_value(eval::paired_t_test(y, x)?)?;
            }
            rows.push(row);
        }
        let out = dir.join("scores.json");
        std::fs::write(&out, serde_json::to_string_pretty(&rows)?)?;
        m.outputs.push(out);
    }
    m.inputs.extend(a.ratings);
    m.inputs.extend(a.scores);
    Ok(())
}
