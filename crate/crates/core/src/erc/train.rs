//! Fine-tuning loop, repeated-run suite, evaluation and reports.

use rayon::prelude::*;

use crate::corpus::{build_vocab, Conversation, Vocabulary};
use crate::defaults;
use crate::encoder::{BoundEncoder, Capacity, EncodeConfig};
use crate::erc::data::ErcDataset;
use crate::erc::metrics::{macro_f1, paired_t_test, weighted_accuracy, ConfusionMatrix};
use crate::erc::{
    class_weights, erc_forward, init_variant_model, weighted_ce, ErcModel, HeadVars,
    TransferVariant,
};
use crate::error::{Error, Result};
use crate::kernel::{adam_step, clip_global_norm, AdamState, Checkpoint, SeedRng, Tape};

/// Fine-tuning schedule. Defaults: rate 2e-4 with a half-rate partner
/// selected by validation, decay 0.75 on validation plateau, early-stop
/// patience 6, dropout 0.5, clip norm 5, class-weight power 0.5, five
/// repeats. Scarce datasets prefer decay 0.95 / patience 10 via
/// [`FinetuneSchedule::scarce`].
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSchedule {
    pub learning_rate: f64,
    /// Also train at half the rate and keep the better validation run.
    pub try_half_rate: bool,
    pub decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub repeats: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    pub class_weight_power: f64,
    /// How the single input file is split into train/validation/test.
    pub train_ratio: f64,
    pub validation_ratio: f64,
    pub vocab_min_count: u64,
}

impl Default for FinetuneSchedule {
    fn default() -> Self {
        FinetuneSchedule {
            learning_rate: defaults::FINETUNE_LEARNING_RATE,
            try_half_rate: true,
            decay: defaults::FINETUNE_DECAY,
            patience: defaults::FINETUNE_PATIENCE,
            max_epochs: defaults::FINETUNE_MAX_EPOCHS,
            repeats: defaults::FINETUNE_REPEATS,
            dropout: defaults::DROPOUT_RATE,
            clip_norm: defaults::CLIP_NORM,
            class_weight_power: defaults::CLASS_WEIGHT_POWER,
            train_ratio: 0.8,
            validation_ratio: 0.1,
            vocab_min_count: defaults::ERC_VOCAB_MIN_COUNT,
        }
    }
}

impl FinetuneSchedule {
    /// Gentler plateau handling for datasets with very few conversations.
    pub fn scarce() -> Self {
        FinetuneSchedule {
            decay: defaults::FINETUNE_DECAY_SCARCE,
            patience: defaults::FINETUNE_PATIENCE_SCARCE,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidConfig { reason });
        if self.learning_rate <= 0.0 {
            return bad(format!("learning rate must be positive: {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.decay) || self.decay == 0.0 {
            return bad(format!("decay must lie in (0, 1]: {}", self.decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1): {}", self.dropout));
        }
        if self.clip_norm <= 0.0 {
            return bad(format!("clip norm must be positive: {}", self.clip_norm));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.repeats < 2 {
            return bad(format!(
                "repeat count must be at least 2 for significance testing: {}",
                self.repeats
            ));
        }
        if self.train_ratio <= 0.0
            || self.validation_ratio <= 0.0
            || self.train_ratio + self.validation_ratio >= 1.0
        {
            return bad(format!(
                "split ratios invalid: train {} validation {}",
                self.train_ratio, self.validation_ratio
            ));
        }
        Ok(())
    }

    fn rate_candidates(&self) -> Vec<f64> {
        if self.try_half_rate {
            vec![self.learning_rate, self.learning_rate / 2.0]
        } else {
            vec![self.learning_rate]
        }
    }
}

/// One fine-tuning invocation.
pub struct FinetuneJob<'a> {
    pub dataset: &'a ErcDataset,
    pub variant: TransferVariant,
    pub checkpoint: Option<&'a Checkpoint>,
    /// Capacity/embedding dimension for freshly initialized encoders
    /// (checkpoint variants take theirs from the checkpoint).
    pub capacity: Capacity,
    pub emb_dim: usize,
    pub schedule: FinetuneSchedule,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_f1: f64,
    pub learning_rate: f64,
}

/// Outcome of one repeat.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub repeat: usize,
    pub chosen_learning_rate: f64,
    pub best_epoch: usize,
    pub validation_f1: f64,
    pub macro_f1: f64,
    pub weighted_accuracy: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub log: Vec<EpochRecord>,
    pub clamped_probabilities: usize,
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub labels: Vec<String>,
    pub runs: Vec<RunMetrics>,
    /// Model of the repeat with the best validation score.
    pub best_model: ErcModel,
    pub best_run: usize,
}

impl FinetuneOutcome {
    pub fn mean_macro_f1(&self) -> f64 {
        self.runs.iter().map(|r| r.macro_f1).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_weighted_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.weighted_accuracy).sum::<f64>() / self.runs.len() as f64
    }

    pub fn macro_f1_samples(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.macro_f1).collect()
    }

    /// Mean per-class F1 across repeats.
    pub fn mean_per_class_f1(&self) -> Vec<f64> {
        let classes = self.labels.len();
        let mut out = vec![0.0; classes];
        for run in &self.runs {
            for (acc, v) in out.iter_mut().zip(&run.per_class_f1) {
                *acc += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.runs.len() as f64);
        out
    }
}

/// Deterministic split of the dataset's conversations.
pub fn split_dataset(
    dataset: &ErcDataset,
    schedule: &FinetuneSchedule,
    seed: u64,
) -> Result<(Vec<Conversation>, Vec<Conversation>, Vec<Conversation>)> {
    let mut conversations = dataset.conversations.clone();
    if conversations.len() < 3 {
        return Err(Error::TooFewConversations {
            count: conversations.len(),
        });
    }
    let mut rng = SeedRng::new(seed).child("data-split");
    rng.shuffle(&mut conversations);
    let n = conversations.len();
    let train_end = (schedule.train_ratio * n as f64).floor() as usize;
    let val_end = ((schedule.train_ratio + schedule.validation_ratio) * n as f64).floor() as usize;
    let test = conversations.split_off(val_end.min(n));
    let validation = conversations.split_off(train_end.min(val_end));
    if conversations.is_empty() || validation.is_empty() || test.is_empty() {
        return Err(Error::TooFewConversations { count: n });
    }
    Ok((conversations, validation, test))
}

fn tokenize_with(model: &ErcModel, conversations: &[Conversation]) -> Vec<Conversation> {
    conversations
        .iter()
        .map(|conv| Conversation {
            id: conv.id,
            utterances: conv
                .utterances
                .iter()
                .map(|u| {
                    let mut u = u.clone();
                    u.tokens = model.tokenize(&u.text);
                    u
                })
                .collect(),
        })
        .collect()
}

/// Gradient step over one conversation; returns (loss, clamp count).
fn conversation_step(
    model: &mut ErcModel,
    conversation: &Conversation,
    weights: &[f64],
    dropout: f64,
    rng: &mut SeedRng,
) -> Result<(f64, usize)> {
    let cfg = EncodeConfig::training(dropout);
    let mut tape = Tape::new();
    let enc = BoundEncoder::bind(&mut tape, &model.base)?;
    let head = HeadVars::bind(&mut tape, &model.base.store)?;
    let token_ids: Vec<Vec<u32>> = conversation
        .utterances
        .iter()
        .map(|u| u.tokens.clone())
        .collect();
    let labels: Vec<u32> = conversation
        .utterances
        .iter()
        .map(|u| u.label.expect("training utterances are labeled"))
        .collect();
    let dists = erc_forward(&mut tape, &enc, head, &token_ids, cfg, rng)?;
    let (loss, clamped) = weighted_ce(&mut tape, &dists, &labels, weights, labels.len())?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    tape.accumulate_param_grads(&grads, &mut model.base.store);
    Ok((value, clamped))
}

/// Predictions for one tokenized conversation (argmax per utterance, ties
/// toward the lower class index).
pub fn predict_conversation(model: &ErcModel, conversation: &Conversation) -> Result<Vec<usize>> {
    let cfg = EncodeConfig::inference();
    let mut rng = SeedRng::new(0);
    let mut tape = Tape::new();
    let enc = BoundEncoder::bind(&mut tape, &model.base)?;
    let head = HeadVars::bind(&mut tape, &model.base.store)?;
    let token_ids: Vec<Vec<u32>> = conversation
        .utterances
        .iter()
        .map(|u| u.tokens.clone())
        .collect();
    let dists = erc_forward(&mut tape, &enc, head, &token_ids, cfg, &mut rng)?;
    Ok(dists
        .iter()
        .map(|&d| {
            let data = tape.value(d).data();
            let mut best = 0usize;
            for (i, &v) in data.iter().enumerate() {
                if v > data[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Confusion matrix over tokenized, labeled conversations. Conversations
/// are scored in parallel and merged in order.
pub fn evaluate_model(
    model: &ErcModel,
    conversations: &[Conversation],
) -> Result<ConfusionMatrix> {
    let per_conv: Vec<Result<Vec<(usize, usize)>>> = conversations
        .par_iter()
        .map(|conv| {
            let preds = predict_conversation(model, conv)?;
            Ok(conv
                .utterances
                .iter()
                .zip(preds)
                .map(|(u, p)| (u.label.expect("labeled") as usize, p))
                .collect())
        })
        .collect();
    let mut matrix = ConfusionMatrix::new(model.class_count());
    for entry in per_conv {
        for (truth, pred) in entry? {
            matrix.record(truth, pred);
        }
    }
    Ok(matrix)
}

struct SingleRun {
    model: ErcModel,
    validation_f1: f64,
    best_epoch: usize,
    log: Vec<EpochRecord>,
    clamped: usize,
}

/// Train once at a fixed learning rate; returns the best-validation model.
fn train_single(
    job: &FinetuneJob,
    vocab: &Vocabulary,
    train: &[Conversation],
    validation: &[Conversation],
    learning_rate: f64,
    run_rng: &SeedRng,
) -> Result<SingleRun> {
    let schedule = &job.schedule;
    let mut model = init_variant_model(
        job.variant,
        job.checkpoint,
        vocab,
        job.dataset.labels.clone(),
        job.capacity,
        job.emb_dim,
        &run_rng.child("model"),
    )?;
    let train_tok = tokenize_with(&model, train);
    let validation_tok = tokenize_with(&model, validation);
    let counts = job.dataset.label_counts(&train_tok);
    let weights = class_weights(&job.dataset.labels, &counts, schedule.class_weight_power)?;

    let mut adam = AdamState::new(&model.base.store, learning_rate);
    let mut best_store = model.base.store.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut non_improving = 0usize;
    let mut log = Vec::new();
    let mut clamped_total = 0usize;

    for epoch in 1..=schedule.max_epochs {
        let mut dropout_rng = run_rng.child_indexed("dropout", epoch);
        let mut loss_sum = 0.0;
        for conversation in &train_tok {
            let (loss, clamped) = conversation_step(
                &mut model,
                conversation,
                &weights,
                schedule.dropout,
                &mut dropout_rng,
            )?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    conversation: conversation.id,
                });
            }
            loss_sum += loss;
            clamped_total += clamped;
            clip_global_norm(&mut model.base.store, schedule.clip_norm);
            adam_step(&mut model.base.store, &mut adam)?;
            model.base.store.zero_grads();
        }

        let matrix = evaluate_model(&model, &validation_tok)?;
        let (val_f1, _) = macro_f1(&matrix)?;
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_tok.len().max(1) as f64,
            validation_f1: val_f1,
            learning_rate: adam.learning_rate,
        });
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best_epoch = epoch;
            best_store = model.base.store.clone();
            non_improving = 0;
        } else {
            non_improving += 1;
            adam.decay_learning_rate(schedule.decay);
            if non_improving >= schedule.patience {
                break;
            }
        }
    }

    model.base.store = best_store;
    Ok(SingleRun {
        model,
        validation_f1: best_f1,
        best_epoch,
        log,
        clamped: clamped_total,
    })
}

/// Run the repeated fine-tuning suite: `repeats` independent runs with
/// distinct seeds (concurrently), each selecting the better of the
/// learning-rate candidates by validation macro-F1 and then scored on the
/// held-out test conversations.
pub fn finetune(job: &FinetuneJob) -> Result<FinetuneOutcome> {
    job.schedule.validate()?;
    if job.variant.needs_checkpoint() && job.checkpoint.is_none() {
        return Err(Error::InvalidConfig {
            reason: format!("variant `{}` requires a checkpoint", job.variant.tag()),
        });
    }
    let (train, validation, test) = split_dataset(job.dataset, &job.schedule, job.seed)?;

    // Vocabulary for fresh embeddings comes from the training portion only.
    let dataset_vocab = build_vocab(&train, job.schedule.vocab_min_count);
    let root = SeedRng::new(job.seed);

    let runs: Vec<Result<(RunMetrics, ErcModel)>> = (0..job.schedule.repeats)
        .into_par_iter()
        .map(|repeat| {
            let run_rng = root.child_indexed("repeat", repeat);
            let mut best: Option<(SingleRun, f64)> = None;
            for rate in job.schedule.rate_candidates() {
                let run = train_single(job, &dataset_vocab, &train, &validation, rate, &run_rng)?;
                let replace = match &best {
                    Some((incumbent, _)) => run.validation_f1 > incumbent.validation_f1,
                    None => true,
                };
                if replace {
                    best = Some((run, rate));
                }
            }
            let (run, rate) = best.expect("at least one rate candidate");
            let test_tok = tokenize_with(&run.model, &test);
            let confusion = evaluate_model(&run.model, &test_tok)?;
            let (macro_avg, per_class) = macro_f1(&confusion)?;
            let wa = weighted_accuracy(&confusion)?;
            Ok((
                RunMetrics {
                    repeat,
                    chosen_learning_rate: rate,
                    best_epoch: run.best_epoch,
                    validation_f1: run.validation_f1,
                    macro_f1: macro_avg,
                    weighted_accuracy: wa,
                    per_class_f1: per_class,
                    confusion,
                    log: run.log,
                    clamped_probabilities: run.clamped,
                },
                run.model,
            ))
        })
        .collect();

    let mut metrics = Vec::with_capacity(runs.len());
    let mut models = Vec::with_capacity(runs.len());
    for entry in runs {
        let (m, model) = entry?;
        metrics.push(m);
        models.push(model);
    }
    let best_run = metrics
        .iter()
        .enumerate()
        .max_by(|a, b| {
            a.1.validation_f1
                .partial_cmp(&b.1.validation_f1)
                .expect("finite f1")
                .then(b.0.cmp(&a.0))
        })
        .map(|(i, _)| i)
        .expect("at least one run");
    Ok(FinetuneOutcome {
        labels: job.dataset.labels.clone(),
        runs: metrics,
        best_model: models.swap_remove(best_run),
        best_run,
    })
}

/// One line of a prediction dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub conversation: u64,
    pub speaker: Option<String>,
    pub text: String,
    pub truth: Option<String>,
    pub predicted: String,
}

/// Per-utterance predictions over a dataset, in file order.
pub fn predict_dataset(model: &ErcModel, dataset: &ErcDataset) -> Result<Vec<PredictionRow>> {
    let mut rows = Vec::new();
    for conv in &dataset.conversations {
        let tokenized = tokenize_with(model, std::slice::from_ref(conv));
        let preds = predict_conversation(model, &tokenized[0])?;
        for (utt, pred) in conv.utterances.iter().zip(preds) {
            rows.push(PredictionRow {
                conversation: conv.id,
                speaker: utt.speaker.clone(),
                text: utt.text.clone(),
                truth: utt
                    .label
                    .map(|l| dataset.labels[l as usize].clone()),
                predicted: model.labels[pred].clone(),
            });
        }
    }
    Ok(rows)
}

/// Cross-run summary: per-run metrics, mean/stddev, and (for more than one
/// named set) pairwise two-tailed paired t-tests over macro-F1.
pub fn summarize(sets: &[(String, Vec<RunMetrics>)]) -> Result<String> {
    let mut out = String::new();
    // `{}` on f64 prints the shortest string that parses back to the same
    // bits, so summaries round-trip exactly.
    for (name, runs) in sets {
        for run in runs {
            out.push_str(&format!(
                "run\t{name}\t{}\t{}\t{}\t{:e}\t{}\n",
                run.repeat,
                run.macro_f1,
                run.weighted_accuracy,
                run.chosen_learning_rate,
                run.best_epoch
            ));
        }
        let n = runs.len() as f64;
        let mean_f1 = runs.iter().map(|r| r.macro_f1).sum::<f64>() / n;
        let mean_wa = runs.iter().map(|r| r.weighted_accuracy).sum::<f64>() / n;
        let std_of = |mean: f64, values: Vec<f64>| {
            if values.len() < 2 {
                0.0
            } else {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
        };
        let std_f1 = std_of(mean_f1, runs.iter().map(|r| r.macro_f1).collect());
        let std_wa = std_of(mean_wa, runs.iter().map(|r| r.weighted_accuracy).collect());
        out.push_str(&format!("mean\t{name}\tmacro_f1\t{mean_f1}\n"));
        out.push_str(&format!("std\t{name}\tmacro_f1\t{std_f1}\n"));
        out.push_str(&format!("mean\t{name}\twa\t{mean_wa}\n"));
        out.push_str(&format!("std\t{name}\twa\t{std_wa}\n"));
    }
    for i in 0..sets.len() {
        for j in (i + 1)..sets.len() {
            let (name_a, runs_a) = &sets[i];
            let (name_b, runs_b) = &sets[j];
            let a: Vec<f64> = runs_a.iter().map(|r| r.macro_f1).collect();
            let b: Vec<f64> = runs_b.iter().map(|r| r.macro_f1).collect();
            let (t, p) = paired_t_test(&a, &b)?;
            out.push_str(&format!("ttest\t{name_a}\t{name_b}\t{t}\t{p}\n"));
        }
    }
    Ok(out)
}

/// Parse the per-run macro-F1 samples of a summary produced by
/// [`summarize`], keyed by run index order.
pub fn parse_summary_runs(text: &str) -> Vec<f64> {
    text.lines()
        .filter(|l| l.starts_with("run\t"))
        .filter_map(|l| l.split('\t').nth(3))
        .filter_map(|v| v.parse::<f64>().ok())
        .collect()
}
