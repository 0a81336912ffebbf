//! Command-line pipeline over the conversation-encoder library: prepare a
//! corpus, pre-train, evaluate recall, fine-tune a classifier, evaluate it,
//! test significance between run suites, and dump predictions.
//!
//! Exit codes: 0 success, 2 argument/configuration errors, 3 input/output
//! errors, 4 numerical divergence, 1 anything else.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use convcode::convcom::{evaluate_pretrain, pretrain, PretrainSchedule};
use convcode::corpus::{self, format::write_atomic, CorpusRules};
use convcode::defaults;
use convcode::encoder::{Capacity, CodeModel};
use convcode::erc::{
    self, finetune, load_dataset, macro_f1, paired_t_test, predict_dataset, weighted_accuracy,
    ErcModel, FinetuneJob, FinetuneSchedule, TransferVariant,
};
use convcode::error::Error;
use convcode::kernel::{Checkpoint, SeedRng};

use config::{ConfigFile, Echo};

#[derive(Parser)]
#[command(
    name = "convcode",
    version,
    about = "Self-supervised conversation-encoder pre-training and emotion-classification fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a prepared corpus from raw text files (one utterance per
    /// line, blank lines between episodes).
    Prepare(PrepareArgs),
    /// Pre-train an encoder on the completion task.
    Pretrain(PretrainArgs),
    /// Score a pre-trained encoder's recall on a prepared split.
    EvalPretrain(EvalPretrainArgs),
    /// Fine-tune a classifier over a labeled dataset (repeated runs).
    Finetune(FinetuneArgs),
    /// Evaluate a fine-tuned classifier on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Paired t-test between two fine-tuning summaries.
    Significance(SignificanceArgs),
    /// Per-utterance prediction dump for a labeled dataset.
    Predict(PredictArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Master seed for every random choice of the command.
    #[arg(long)]
    seed: Option<u64>,
    /// key=value configuration file (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PrepareArgs {
    /// Directory of raw .txt files.
    #[arg(long)]
    raw: PathBuf,
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
    /// Utterances trimmed from each end of an episode.
    #[arg(long)]
    trim: Option<usize>,
    /// Minimum conversation length.
    #[arg(long)]
    len_min: Option<usize>,
    /// Maximum conversation length.
    #[arg(long)]
    len_max: Option<usize>,
    /// Word-count threshold of the short-utterance filter.
    #[arg(long)]
    word_filter: Option<usize>,
    /// Minimum token frequency for the vocabulary.
    #[arg(long)]
    min_count: Option<u64>,
    /// Training fraction of the split.
    #[arg(long)]
    train_ratio: Option<f64>,
    /// Validation fraction of the split.
    #[arg(long)]
    validation_ratio: Option<f64>,
    /// Pre-selected noise utterances per validation/test conversation.
    #[arg(long)]
    noise_count: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Prepared corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Model capacity: small, mid, large, or custom:N.
    #[arg(long)]
    capacity: Option<String>,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Metric log output path (epoch, train loss, validation recall, rate).
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
    /// Word-embedding dimension for fresh models.
    #[arg(long)]
    emb_dim: Option<usize>,
    /// Optional word-vector text file (token v1 .. vD per line).
    #[arg(long)]
    emb_file: Option<PathBuf>,
    /// Resume from an existing checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Make the embedding table trainable (otherwise frozen).
    #[arg(long)]
    unfreeze_embeddings: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Noise utterances sampled per conversation per epoch.
    #[arg(long)]
    noise_count: Option<usize>,
}

#[derive(Args)]
struct EvalPretrainArgs {
    /// Encoder checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Prepared corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Which split to score (it must carry pre-selected noise).
    #[arg(long, default_value = "test")]
    split: String,
    /// Optional report file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Labeled dataset (line-delimited records).
    #[arg(long)]
    data: PathBuf,
    /// Transfer variant: none, full, pre-u, re-w.
    #[arg(long)]
    variant: String,
    /// Pre-trained encoder checkpoint (required unless --variant none).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for per-run reports and the summary.
    #[arg(long)]
    out_dir: PathBuf,
    /// Save the best run's model here.
    #[arg(long)]
    save_model: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
    /// Capacity for freshly initialized encoders (--variant none).
    #[arg(long)]
    capacity: Option<String>,
    /// Embedding dimension for freshly initialized encoders.
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Train only at --lr instead of selecting between it and its half.
    #[arg(long)]
    no_half_rate: bool,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Power of the inverse class-ratio loss weights.
    #[arg(long)]
    weight_power: Option<f64>,
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    validation_ratio: Option<f64>,
    /// Use the gentler plateau schedule for very small datasets.
    #[arg(long)]
    scarce: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fine-tuned classifier checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset to score.
    #[arg(long)]
    data: PathBuf,
    /// Optional report file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SignificanceArgs {
    /// First summary file.
    #[arg(long)]
    a: PathBuf,
    /// Second summary file.
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Fine-tuned classifier checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset.
    #[arg(long)]
    data: PathBuf,
    /// Dump output path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::EvalPretrain(args) => cmd_eval_pretrain(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Significance(args) => cmd_significance(args),
        Command::Predict(args) => cmd_predict(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig { .. }
        | Error::IncompatibleCheckpoint { .. }
        | Error::UnknownLabel { .. }
        | Error::SampleLengthMismatch { .. }
        | Error::TooFewSamples { .. }
        | Error::TooFewConversations { .. }
        | Error::EmptySplit { .. }
        | Error::InvalidDropoutRate { .. }
        | Error::InvalidCutoff { .. } => 2,
        Error::Io { .. }
        | Error::MalformedInput { .. }
        | Error::BadCheckpoint { .. }
        | Error::SchemaViolation { .. } => 3,
        Error::Divergence { .. } | Error::NonFiniteGradient { .. } => 4,
        _ => 1,
    }
}

type CmdResult = Result<(), Error>;

// ---------------------------------------------------------------------------

fn cmd_prepare(args: PrepareArgs) -> CmdResult {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let seed = cfg.resolve(args.common.seed, "seed", 0)?;
    let rules = CorpusRules {
        trim_utterances: cfg.resolve(args.trim, "trim", defaults::TRIM_UTTERANCES)?,
        min_len: cfg.resolve(args.len_min, "len_min", defaults::CONV_MIN_UTTERANCES)?,
        max_len: cfg.resolve(args.len_max, "len_max", defaults::CONV_MAX_UTTERANCES)?,
        short_word_limit: cfg.resolve(args.word_filter, "word_filter", defaults::SHORT_UTTERANCE_WORDS)?,
        vocab_min_count: cfg.resolve(args.min_count, "min_count", defaults::VOCAB_MIN_COUNT)?,
        train_ratio: cfg.resolve(args.train_ratio, "train_ratio", defaults::TRAIN_RATIO)?,
        validation_ratio: cfg.resolve(
            args.validation_ratio,
            "validation_ratio",
            defaults::VALIDATION_RATIO,
        )?,
        noise_per_conversation: cfg.resolve(
            args.noise_count,
            "noise_count",
            defaults::NOISE_PER_CONVERSATION,
        )?,
    };

    let raw_display = args.raw.display().to_string();
    let entries = std::fs::read_dir(&args.raw).map_err(|e| Error::io(&raw_display, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&raw_display, e))?;
        if entry.path().is_file() {
            files.push(entry.path());
        }
    }
    if files.is_empty() {
        return Err(Error::InvalidConfig {
            reason: format!("no raw files under {raw_display}"),
        });
    }

    let corpus = corpus::prepare_corpus(&files, &rules, seed)?;
    corpus.require_non_empty()?;
    corpus::save_corpus(&corpus, &args.out)?;
    for stat in corpus.manifest().stats {
        println!(
            "{}\tconversations={}\tavg_utterances={:.1}\tavg_words={:.1}",
            stat.split, stat.conversations, stat.avg_utterances, stat.avg_words
        );
    }
    println!("vocabulary\ttokens={}", corpus.vocab.token_count());
    println!("written\t{}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------

fn cmd_pretrain(args: PretrainArgs) -> CmdResult {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let seed = cfg.resolve(args.common.seed, "seed", 0)?;
    let capacity =
        Capacity::from_tag(&cfg.resolve_string(args.capacity.as_deref(), "capacity", "mid"))?;
    let emb_dim = cfg.resolve(args.emb_dim, "emb_dim", defaults::EMBEDDING_DIM)?;
    let schedule = PretrainSchedule {
        learning_rate: cfg.resolve(args.lr, "lr", defaults::PRETRAIN_LEARNING_RATE)?,
        decay: cfg.resolve(args.decay, "decay", defaults::LEARNING_RATE_DECAY)?,
        dropout: cfg.resolve(args.dropout, "dropout", defaults::DROPOUT_RATE)?,
        clip_norm: cfg.resolve(args.clip_norm, "clip_norm", defaults::CLIP_NORM)?,
        max_epochs: cfg.resolve(args.max_epochs, "max_epochs", defaults::PRETRAIN_MAX_EPOCHS)?,
        patience: cfg.resolve(args.patience, "patience", defaults::PRETRAIN_PATIENCE)?,
        noise_count: cfg.resolve(args.noise_count, "noise_count", defaults::NOISE_PER_CONVERSATION)?,
    };
    schedule.validate()?;

    let corpus = corpus::load_corpus(&args.corpus)?;
    if schedule.max_epochs > 0 {
        corpus.require_non_empty()?;
    }

    let trainable = args.unfreeze_embeddings;
    let model = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let model = CodeModel::from_checkpoint(&ck, trainable)?;
            if model.vocab != corpus.vocab {
                return Err(Error::IncompatibleCheckpoint {
                    reason: "checkpoint vocabulary differs from the corpus vocabulary".into(),
                });
            }
            model
        }
        None => {
            let model = CodeModel::init(
                capacity,
                corpus.vocab.clone(),
                emb_dim,
                trainable,
                &SeedRng::new(seed).child("init"),
            )?;
            if let Some(file) = &args.emb_file {
                let mut model = model;
                let coverage = model.emb.load_vectors(&mut model.store, &model.vocab, file)?;
                println!(
                    "word_vectors\tmatched={}\tvocab={}\tcoverage={:.3}",
                    coverage.matched,
                    coverage.vocab_tokens,
                    coverage.fraction()
                );
                model
            } else {
                model
            }
        }
    };

    let mut echo = Echo::new();
    echo.put("command", "pretrain")
        .put("seed", seed)
        .put("capacity", model.capacity.tag())
        .put("emb_dim", model.emb.dim)
        .put("emb_trainable", model.emb.trainable)
        .put("lr", schedule.learning_rate)
        .put("decay", schedule.decay)
        .put("dropout", schedule.dropout)
        .put("clip_norm", schedule.clip_norm)
        .put("max_epochs", schedule.max_epochs)
        .put("patience", schedule.patience)
        .put("noise_count", schedule.noise_count)
        .put("noise_sampling", "dynamic-per-epoch")
        .put("corpus_seed", corpus.seed);

    let outcome = pretrain(model, &corpus, &schedule, seed)?;

    let mut log_text = echo.header();
    log_text.push_str("epoch\ttrain_loss\tvalidation_r11_at_1\tlearning_rate\n");
    for record in &outcome.log {
        log_text.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:e}\n",
            record.epoch, record.train_loss, record.validation_recall, record.learning_rate
        ));
    }
    if let Some(log_path) = &args.log {
        write_atomic(log_path, log_text.as_bytes())?;
    }
    print!("{log_text}");

    let ck = outcome.model.checkpoint(echo.meta());
    ck.save(&args.out)?;
    println!(
        "checkpoint\t{}\tbest_epoch={}\tbest_validation_r11_at_1={:.6}",
        args.out.display(),
        outcome.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
        outcome.best_validation.max(0.0)
    );
    Ok(())
}

// ---------------------------------------------------------------------------

fn cmd_eval_pretrain(args: EvalPretrainArgs) -> CmdResult {
    let ck = Checkpoint::load(&args.model)?;
    let model = CodeModel::from_checkpoint(&ck, false)?;
    let corpus = corpus::load_corpus(&args.corpus)?;
    let split = match args.split.as_str() {
        "validation" => &corpus.validation,
        "test" => &corpus.test,
        other => {
            return Err(Error::InvalidConfig {
                reason: format!("unknown split `{other}` (validation|test)"),
            })
        }
    };
    let report = evaluate_pretrain(&model, split)?;
    let mut echo = Echo::new();
    echo.put("command", "eval-pretrain")
        .put("model", args.model.display())
        .put("split", &args.split)
        .put("capacity", &ck.header.capacity);
    let text = format!("{}{}", echo.header(), report.lines());
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn cmd_finetune(args: FinetuneArgs) -> CmdResult {
    let cfg = ConfigFile::load(args.common.config.as_deref())?;
    let seed = cfg.resolve(args.common.seed, "seed", 0)?;
    let variant = TransferVariant::from_tag(&args.variant)?;
    let base = if args.scarce {
        FinetuneSchedule::scarce()
    } else {
        FinetuneSchedule::default()
    };
    let schedule = FinetuneSchedule {
        learning_rate: cfg.resolve(args.lr, "lr", base.learning_rate)?,
        try_half_rate: !args.no_half_rate && cfg.resolve(None, "half_rate", true)?,
        decay: cfg.resolve(args.decay, "decay", base.decay)?,
        patience: cfg.resolve(args.patience, "patience", base.patience)?,
        max_epochs: cfg.resolve(args.max_epochs, "max_epochs", base.max_epochs)?,
        repeats: cfg.resolve(args.repeats, "repeats", base.repeats)?,
        dropout: cfg.resolve(args.dropout, "dropout", base.dropout)?,
        clip_norm: cfg.resolve(args.clip_norm, "clip_norm", base.clip_norm)?,
        class_weight_power: cfg.resolve(args.weight_power, "weight_power", base.class_weight_power)?,
        train_ratio: cfg.resolve(args.train_ratio, "train_ratio", base.train_ratio)?,
        validation_ratio: cfg.resolve(args.validation_ratio, "validation_ratio", base.validation_ratio)?,
        vocab_min_count: cfg.resolve(None, "min_count", base.vocab_min_count)?,
    };
    schedule.validate()?;
    if variant.needs_checkpoint() && args.model.is_none() {
        return Err(Error::InvalidConfig {
            reason: format!("--variant {} requires --model", variant.tag()),
        });
    }
    let capacity =
        Capacity::from_tag(&cfg.resolve_string(args.capacity.as_deref(), "capacity", "mid"))?;
    let emb_dim = cfg.resolve(args.emb_dim, "emb_dim", defaults::EMBEDDING_DIM)?;

    let dataset = load_dataset(&args.data)?;
    let checkpoint = match &args.model {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };

    let job = FinetuneJob {
        dataset: &dataset,
        variant,
        checkpoint: checkpoint.as_ref(),
        capacity,
        emb_dim,
        schedule: schedule.clone(),
        seed,
    };
    let outcome = finetune(&job)?;

    let out_display = args.out_dir.display().to_string();
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&out_display, e))?;

    let mut echo = Echo::new();
    echo.put("command", "finetune")
        .put("seed", seed)
        .put("variant", variant.tag())
        .put("data", args.data.display())
        .put("repeats", schedule.repeats)
        .put("lr", schedule.learning_rate)
        .put("half_rate", schedule.try_half_rate)
        .put("decay", schedule.decay)
        .put("patience", schedule.patience)
        .put("max_epochs", schedule.max_epochs)
        .put("dropout", schedule.dropout)
        .put("clip_norm", schedule.clip_norm)
        .put("weight_power", schedule.class_weight_power)
        .put("train_ratio", schedule.train_ratio)
        .put("validation_ratio", schedule.validation_ratio)
        .put("labels", outcome.labels.join(","));

    for run in &outcome.runs {
        let mut text = echo.header();
        text.push_str(&format!("repeat\t{}\n", run.repeat));
        text.push_str(&format!("chosen_lr\t{:e}\n", run.chosen_learning_rate));
        text.push_str(&format!("best_epoch\t{}\n", run.best_epoch));
        text.push_str(&format!("validation_macro_f1\t{}\n", run.validation_f1));
        text.push_str(&format!("macro_f1\t{}\n", run.macro_f1));
        text.push_str(&format!("weighted_accuracy\t{}\n", run.weighted_accuracy));
        for (label, f1) in outcome.labels.iter().zip(&run.per_class_f1) {
            text.push_str(&format!("class_f1\t{label}\t{f1}\n"));
        }
        for truth in 0..outcome.labels.len() {
            for pred in 0..outcome.labels.len() {
                let count = run.confusion.count(truth, pred);
                if count > 0 {
                    text.push_str(&format!(
                        "cm\t{}\t{}\t{count}\n",
                        outcome.labels[truth], outcome.labels[pred]
                    ));
                }
            }
        }
        for record in &run.log {
            text.push_str(&format!(
                "epoch\t{}\t{:.6}\t{:.6}\t{:e}\n",
                record.epoch, record.train_loss, record.validation_f1, record.learning_rate
            ));
        }
        write_atomic(
            &args.out_dir.join(format!("run{}.tsv", run.repeat)),
            text.as_bytes(),
        )?;
    }

    let summary_body = erc::summarize(&[(variant.tag().to_string(), outcome.runs.clone())])?;
    let summary = format!("{}{}", echo.header(), summary_body);
    write_atomic(&args.out_dir.join("summary.tsv"), summary.as_bytes())?;
    print!("{summary}");

    if let Some(path) = &args.save_model {
        let ck = outcome.best_model.checkpoint(echo.meta());
        ck.save(path)?;
        println!("model\t{}\tfrom_run={}", path.display(), outcome.best_run);
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let ck = Checkpoint::load(&args.model)?;
    let model = ErcModel::from_checkpoint(&ck)?;
    let dataset = load_dataset(&args.data)?;
    let remapped = dataset.remap_labels(&model.labels)?;
    let tokenized: Vec<_> = remapped
        .conversations
        .iter()
        .map(|c| {
            let mut c = c.clone();
            for u in &mut c.utterances {
                u.tokens = model.tokenize(&u.text);
            }
            c
        })
        .collect();
    let confusion = erc::evaluate_model(&model, &tokenized)?;
    let (macro_avg, per_class) = macro_f1(&confusion)?;
    let wa = weighted_accuracy(&confusion)?;

    let mut echo = Echo::new();
    echo.put("command", "evaluate")
        .put("model", args.model.display())
        .put("data", args.data.display())
        .put("labels", model.labels.join(","));
    let mut text = echo.header();
    text.push_str(&format!("macro_f1\t{macro_avg}\n"));
    text.push_str(&format!("weighted_accuracy\t{wa}\n"));
    for (label, f1) in model.labels.iter().zip(&per_class) {
        text.push_str(&format!("class_f1\t{label}\t{f1}\n"));
    }
    for truth in 0..model.labels.len() {
        for pred in 0..model.labels.len() {
            let count = confusion.count(truth, pred);
            if count > 0 {
                text.push_str(&format!(
                    "cm\t{}\t{}\t{count}\n",
                    model.labels[truth], model.labels[pred]
                ));
            }
        }
    }
    if let Some(out) = &args.out {
        write_atomic(out, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn cmd_significance(args: SignificanceArgs) -> CmdResult {
    let read = |path: &Path| -> Result<Vec<f64>, Error> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let runs = erc::parse_summary_runs(&text);
        if runs.is_empty() {
            return Err(Error::MalformedInput {
                path: display,
                line: 0,
                reason: "no run lines found".into(),
            });
        }
        Ok(runs)
    };
    let a = read(&args.a)?;
    let b = read(&args.b)?;
    let (t, p) = paired_t_test(&a, &b)?;
    println!("runs\t{}", a.len());
    println!("t\t{t}");
    println!("p\t{p}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn cmd_predict(args: PredictArgs) -> CmdResult {
    let ck = Checkpoint::load(&args.model)?;
    let model = ErcModel::from_checkpoint(&ck)?;
    let dataset = load_dataset(&args.data)?;
    let rows = predict_dataset(&model, &dataset)?;

    let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
    let mut echo = Echo::new();
    echo.put("command", "predict")
        .put("model", args.model.display())
        .put("data", args.data.display());
    let mut text = echo.header();
    text.push_str("conversation\tspeaker\ttext\ttruth\tpredicted\n");
    for row in &rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            row.conversation,
            clean(row.speaker.as_deref().unwrap_or("-")),
            clean(&row.text),
            clean(row.truth.as_deref().unwrap_or("-")),
            row.predicted
        ));
    }
    write_atomic(&args.out, text.as_bytes())?;
    println!("predictions\t{}\trows={}", args.out.display(), rows.len());
    Ok(())
}
