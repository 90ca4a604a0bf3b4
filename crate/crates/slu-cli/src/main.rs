//! `slu` — command-line frontend for the training pipeline.
//!
//! One subcommand per pipeline stage: `build-vocab` trains the subword
//! inventory, `segment` applies it, `align` projects slot labels onto
//! translations, `train` fits a model, `evaluate` scores a checkpoint, and
//! `predict` labels new utterances. Exit codes: 0 on success, 1 for usage
//! problems (bad flags, refusing to overwrite without `--force`), 2 for
//! data or validation errors. Runtime failures print one machine-parseable
//! JSON line to stderr.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use slu_core::align::{
    load_intent_only, load_translations, project_slots, write_intent_only, AlignmentOutcome,
    IntentOnlyRecord, Tokenizer,
};
use slu_core::corpus::{link_parallel, load_dataset, Dataset, Example};
use slu_core::metrics::{evaluate, predict_labels};
use slu_core::model::{load_checkpoint, save_checkpoint};
use slu_core::subword::{train_unigram, SubwordModel};
use slu_core::trainer::{train, TrainConfig, TrainInputs};
use slu_core::CoreError;

#[derive(Parser)]
#[command(name = "slu", version, about = "Joint intent and slot model pipeline")]
struct Cli {
    /// Cap on internal worker threads. The pipeline's reductions are all
    /// sequential by design, so this is a compatibility cap, not a speedup.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a unigram subword inventory from a text corpus.
    BuildVocab(BuildVocabArgs),
    /// Segment a text with a subword model.
    Segment(SegmentArgs),
    /// Project slot labels from a source dataset onto its translations.
    Align(AlignArgs),
    /// Train a model and write a checkpoint plus a training log.
    Train(TrainArgs),
    /// Score a checkpoint against a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Label utterances with a checkpoint.
    Predict(PredictArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Input corpus: UTF-8 text, one utterance per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Output TSV model file.
    #[arg(long)]
    output: PathBuf,
    /// Number of pieces to keep (the reserved specials don't count).
    #[arg(long)]
    vocab_size: usize,
    /// Longest candidate piece, in characters.
    #[arg(long, default_value_t = 8)]
    max_piece_len: usize,
    /// Drop multi-character seed pieces rarer than this.
    #[arg(long, default_value_t = 1)]
    min_freq: u64,
    /// Expectation-maximization iterations before pruning.
    #[arg(long, default_value_t = 8)]
    em_iters: usize,
    /// Overwrite the output file if it exists.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SegmentArgs {
    /// Subword model TSV file.
    #[arg(long)]
    model: PathBuf,
    /// Text to segment.
    #[arg(long)]
    text: String,
    /// Draw a random segmentation instead of the best-scoring one.
    #[arg(long)]
    sample: bool,
    /// Sampling temperature on segmentation probabilities (0 = uniform
    /// over segmentations, 1 = proportional to probability).
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Random seed for --sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AlignArgs {
    /// Source-language labeled dataset (JSONL).
    #[arg(long)]
    dataset: PathBuf,
    /// Translation records (JSONL).
    #[arg(long)]
    translations: PathBuf,
    /// Output JSONL dataset of slot-aligned translations.
    #[arg(long)]
    aligned_output: PathBuf,
    /// Output JSONL of intent-only records for translations that failed
    /// slot alignment.
    #[arg(long)]
    intent_only_output: PathBuf,
    /// Overwrite the output files if they exist.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Labeled training dataset (JSONL), iterated every epoch.
    #[arg(long)]
    train: PathBuf,
    /// Additional labeled datasets joined into the parallel index by
    /// shared example id (e.g. aligned translations). Repeatable.
    #[arg(long)]
    parallel: Vec<PathBuf>,
    /// Intent-only translation records (JSONL) for the machine-translation
    /// augmentation pool.
    #[arg(long)]
    intent_only: Option<PathBuf>,
    /// Development dataset (JSONL) used for checkpoint selection.
    #[arg(long)]
    dev: PathBuf,
    /// Subword model TSV file.
    #[arg(long)]
    subword_model: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output training log (JSONL): step records, evaluations, summary.
    #[arg(long)]
    log: PathBuf,
    /// Override the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite the output files if they exist.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled dataset to score (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Subword model TSV file.
    #[arg(long)]
    subword_model: PathBuf,
    /// Also write the report JSON to this file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overwrite the output file if it exists.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint file.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Utterances to label: JSONL with id, locale, and words. Labels
    /// already present are ignored.
    #[arg(long)]
    input: PathBuf,
    /// Subword model TSV file.
    #[arg(long)]
    subword_model: PathBuf,
    /// Output labeled dataset (JSONL).
    #[arg(long)]
    output: PathBuf,
    /// Overwrite the output file if it exists.
    #[arg(long)]
    force: bool,
}

/// Errors split by exit code: usage problems (1) and data errors (2).
enum CliError {
    Usage(String),
    Data(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Data(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    /// One JSON line for stderr: `{"error":{"kind":…,"message":…}}`.
    fn diagnostic(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(msg) => ("usage", msg.clone()),
            CliError::Data(e) => (error_kind(e), e.to_string()),
        };
        serde_json::json!({"error": {"kind": kind, "message": message}}).to_string()
    }
}

/// Stable machine-readable tag per error variant.
fn error_kind(e: &CoreError) -> &'static str {
    match e {
        CoreError::Io(_) => "io",
        CoreError::Json { .. } => "json",
        CoreError::Schema { .. } => "schema",
        CoreError::DuplicateExample { .. } => "duplicate_example",
        CoreError::EmptyCorpus => "empty_corpus",
        CoreError::VocabTooSmall { .. } => "vocab_too_small",
        CoreError::UncoveredChar { .. } => "uncovered_char",
        CoreError::BadSubwordModel(_) => "bad_subword_model",
        CoreError::MalformedBrackets { .. } => "malformed_brackets",
        CoreError::SequenceTooLong { .. } => "sequence_too_long",
        CoreError::NonFinite { .. } => "non_finite",
        CoreError::ShapeMismatch(_) => "shape_mismatch",
        CoreError::LabelOutOfRange { .. } => "label_out_of_range",
        CoreError::BadCheckpoint(_) => "bad_checkpoint",
        CoreError::BadConfig(_) => "bad_config",
        CoreError::Misaligned(_) => "misaligned",
        CoreError::EmptyDataset => "empty_dataset",
        CoreError::Invalid(_) => "invalid",
    }
}

/// Refuse to clobber outputs without --force, and insist the parent
/// directory already exists so typos don't silently create trees.
fn check_output(path: &Path, force: bool) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.is_dir() {
            return Err(CliError::Usage(format!(
                "parent directory of output {} does not exist",
                path.display()
            )));
        }
    }
    if path.exists() && !force {
        return Err(CliError::Usage(format!(
            "output {} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap renders its own usage text; --help and --version land
            // here too and are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads == 0 {
        let err = CliError::Usage("--threads must be at least 1".into());
        eprintln!("{}", err.diagnostic());
        return ExitCode::from(err.exit_code());
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::BuildVocab(args) => build_vocab(args),
        Command::Segment(args) => segment(args),
        Command::Align(args) => align(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Predict(args) => predict(args),
    }
}

fn build_vocab(args: BuildVocabArgs) -> Result<(), CliError> {
    check_output(&args.output, args.force)?;
    let text = std::fs::read_to_string(&args.corpus).map_err(CoreError::from)?;
    let lines: Vec<String> = text.lines().map(|l| l.to_string()).collect();
    let model = train_unigram(
        &lines,
        args.vocab_size,
        args.max_piece_len,
        args.min_freq,
        args.em_iters,
    )?;
    model.save(&args.output)?;
    println!(
        "{}",
        serde_json::json!({"pieces": model.num_pieces(), "output": args.output.display().to_string()})
    );
    Ok(())
}

fn segment(args: SegmentArgs) -> Result<(), CliError> {
    let model = SubwordModel::load(&args.model)?;
    let seg = if args.sample {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        model.sample(&args.text, args.alpha, &mut rng)?
    } else {
        model.segment(&args.text)?
    };
    println!("{}", seg.pieces.join(" "));
    Ok(())
}

/// Per-status counters, printed as the align subcommand's summary line.
#[derive(Default, Serialize)]
struct AlignCounts {
    aligned_plain: usize,
    aligned_bracketed: usize,
    intent_only: usize,
}

fn align(args: AlignArgs) -> Result<(), CliError> {
    check_output(&args.aligned_output, args.force)?;
    check_output(&args.intent_only_output, args.force)?;
    let dataset = load_dataset(&args.dataset)?;
    let translations = load_translations(&args.translations)?;
    let by_id: HashMap<u64, &Example> =
        dataset.examples.iter().map(|ex| (ex.id, ex)).collect();

    let mut counts = AlignCounts::default();
    let mut aligned = Vec::new();
    let mut intent_only = Vec::new();
    for rec in &translations {
        let source = by_id.get(&rec.id).copied().ok_or_else(|| {
            CoreError::Invalid(format!("translation references unknown example id {}", rec.id))
        })?;
        rec.validate_against(source)?;
        let tokenizer = Tokenizer::for_text(&rec.plain_text);
        match project_slots(source, rec, tokenizer)? {
            AlignmentOutcome::AlignedPlain(a) => {
                counts.aligned_plain += 1;
                aligned.push(a.example);
            }
            AlignmentOutcome::AlignedBracketed(a) => {
                counts.aligned_bracketed += 1;
                aligned.push(a.example);
            }
            AlignmentOutcome::IntentOnly(rec) => {
                counts.intent_only += 1;
                intent_only.push(rec);
            }
        }
    }

    Dataset::from_examples(aligned)?.save(&args.aligned_output)?;
    let file = std::fs::File::create(&args.intent_only_output).map_err(CoreError::from)?;
    write_intent_only(std::io::BufWriter::new(file), &intent_only)?;
    println!("{}", serde_json::to_string(&counts).expect("counts serialize"));
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    check_output(&args.checkpoint, args.force)?;
    check_output(&args.log, args.force)?;
    let mut config = TrainConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let train_data = load_dataset(&args.train)?;
    let dev = load_dataset(&args.dev)?;
    let subword = SubwordModel::load(&args.subword_model)?;
    let extra: Vec<Dataset> =
        args.parallel.iter().map(load_dataset).collect::<Result<_, _>>()?;
    let parallel = link_parallel(std::iter::once(&train_data).chain(extra.iter()));
    let intent_only: Vec<IntentOnlyRecord> = match &args.intent_only {
        Some(path) => load_intent_only(path)?,
        None => Vec::new(),
    };

    let outcome = train(
        &config,
        &TrainInputs {
            train: &train_data,
            dev: &dev,
            subword: &subword,
            parallel: &parallel,
            intent_only: &intent_only,
        },
    )?;
    save_checkpoint(
        &args.checkpoint,
        &outcome.checkpoint.params,
        &outcome.checkpoint.intents,
        &outcome.checkpoint.slots,
    )?;
    outcome.log.save(&args.log)?;
    println!(
        "{}",
        serde_json::to_string(&outcome.log.summary).expect("summary serializes")
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    if let Some(output) = &args.output {
        check_output(output, args.force)?;
    }
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let subword = SubwordModel::load(&args.subword_model)?;
    let data = load_dataset(&args.data)?;
    let report = evaluate(
        &checkpoint.params,
        &subword,
        &data,
        &checkpoint.intents,
        &checkpoint.slots,
    )?;
    let json = report.to_json_string();
    if let Some(output) = &args.output {
        std::fs::write(output, format!("{json}\n")).map_err(CoreError::from)?;
    }
    println!("{json}");
    Ok(())
}

/// Input schema for `predict`: a dataset line minus the labels. Labeled
/// lines are accepted (so a gold file can be re-labeled directly); their
/// labels are ignored.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRecord {
    id: u64,
    locale: String,
    words: Vec<String>,
    #[serde(default)]
    #[allow(dead_code)]
    slots: Option<Vec<String>>,
    #[serde(default)]
    #[allow(dead_code)]
    intent: Option<String>,
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    check_output(&args.output, args.force)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let subword = SubwordModel::load(&args.subword_model)?;
    let file = std::fs::File::open(&args.input).map_err(CoreError::from)?;
    let mut labeled = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CoreError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictRecord = serde_json::from_str(&line).map_err(|e| CoreError::Json {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        match predict_labels(
            &checkpoint.params,
            &subword,
            &rec.words,
            &checkpoint.intents,
            &checkpoint.slots,
        ) {
            Ok(utt) => labeled.push(Example {
                id: rec.id,
                locale: rec.locale,
                words: rec.words,
                slots: utt.slots,
                intent: utt.intent,
            }),
            // Mirror evaluation: utterances too long for the model are
            // skipped, with a diagnostic naming them.
            Err(CoreError::SequenceTooLong { len, max }) => {
                eprintln!(
                    "{}",
                    serde_json::json!({
                        "warning": {
                            "kind": "sequence_too_long",
                            "id": rec.id,
                            "len": len,
                            "max": max,
                        }
                    })
                );
            }
            Err(e) => return Err(e.into()),
        }
    }
    let file = std::fs::File::create(&args.output).map_err(CoreError::from)?;
    let mut w = std::io::BufWriter::new(file);
    for ex in &labeled {
        let line = serde_json::to_string(ex).expect("example serializes");
        writeln!(w, "{line}").map_err(CoreError::from)?;
    }
    w.flush().map_err(CoreError::from)?;
    println!("{}", serde_json::json!({"labeled": labeled.len()}));
    Ok(())
}
