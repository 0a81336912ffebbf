//! Pre-training loop and recall evaluation.

use rayon::prelude::*;

use crate::convcom::{convcom_loss, match_score, recall_at_k, PretrainSchedule, RankingResult};
use crate::corpus::{Conversation, NoiseRef, PreparedCorpus, PreparedSplit};
use crate::encoder::{
    contextual_embedding, encode_full_conversation, encode_utterance, BoundEncoder, CodeModel,
    EncodeConfig,
};
use crate::error::{Error, Result};
use crate::kernel::{adam_step, clip_global_norm, AdamState, SeedRng, Tape};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_recall: f64,
    pub learning_rate: f64,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    /// Model state at the best validation epoch (initial state if no epoch
    /// ran or none improved over the initialization).
    pub model: CodeModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_validation: f64,
}

/// Averaged recall metrics over every target position of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub r5_at_1: f64,
    pub r5_at_2: f64,
    pub r11_at_1: f64,
    pub r11_at_2: f64,
    pub positions: usize,
}

impl RecallReport {
    pub fn lines(&self) -> String {
        format!(
            "r5_at_1\t{:.6}\nr5_at_2\t{:.6}\nr11_at_1\t{:.6}\nr11_at_2\t{:.6}\npositions\t{}\n",
            self.r5_at_1, self.r5_at_2, self.r11_at_1, self.r11_at_2, self.positions
        )
    }
}

/// Gradient step over one conversation: encode every utterance and the
/// conversation's shared noise utterances once, accumulate the completion
/// loss over all target positions, and backpropagate. Returns the summed
/// loss and the number of positions.
fn conversation_step(
    model: &mut CodeModel,
    conversation: &Conversation,
    noise_tokens: &[Vec<u32>],
    dropout: f64,
    rng: &mut SeedRng,
) -> Result<(f64, usize)> {
    let cfg = EncodeConfig::training(dropout);
    let mut tape = Tape::new();
    let enc = BoundEncoder::bind(&mut tape, model)?;
    let token_ids: Vec<Vec<u32>> = conversation
        .utterances
        .iter()
        .map(|u| u.tokens.clone())
        .collect();
    let full = encode_full_conversation(&mut tape, &enc, &token_ids, cfg, rng)?;
    let noise: Vec<_> = noise_tokens
        .iter()
        .map(|ids| encode_utterance(&mut tape, &enc, ids, cfg, rng))
        .collect::<Result<_>>()?;

    let mut terms = Vec::with_capacity(conversation.len());
    for l in 1..=conversation.len() {
        let ctx = contextual_embedding(&mut tape, &enc, &full.states, l)?;
        let mut candidates = Vec::with_capacity(1 + noise.len());
        candidates.push(full.utterances[l - 1]);
        candidates.extend_from_slice(&noise);
        terms.push(convcom_loss(&mut tape, ctx, &candidates)?);
    }
    let total = tape.sum(&terms)?;
    let loss = tape.value(total).item();

    let grads = tape.backward(total)?;
    tape.accumulate_param_grads(&grads, &mut model.store);
    Ok((loss, conversation.len()))
}

/// Resolve noise references into token-id sequences.
fn noise_tokens_for(
    split: &PreparedSplit,
    index_by_id: &std::collections::HashMap<u64, usize>,
    refs: &[NoiseRef],
) -> Vec<Vec<u32>> {
    refs.iter()
        .map(|&(conv_id, utt_idx)| {
            let conv = &split.conversations[index_by_id[&conv_id]];
            conv.utterances[utt_idx as usize].tokens.clone()
        })
        .collect()
}

/// Pre-train on the completion task.
///
/// Each training conversation is one batch: every utterance serves as the
/// target once against the conversation's shared noise set, which is
/// resampled each epoch. After an epoch the validation split is scored
/// with its fixed pre-selected noise; the learning rate decays on every
/// epoch that fails to improve recall@1 over 11 candidates, and training
/// stops after `patience` consecutive non-improving epochs. The returned
/// model is the best-validation snapshot.
pub fn pretrain(
    mut model: CodeModel,
    corpus: &PreparedCorpus,
    schedule: &PretrainSchedule,
    seed: u64,
) -> Result<PretrainOutcome> {
    schedule.validate()?;
    let root = SeedRng::new(seed);
    let mut adam = AdamState::new(&model.store, schedule.learning_rate);
    let mut log = Vec::new();
    let mut best_store = model.store.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut non_improving = 0usize;

    if schedule.max_epochs > 0 {
        if corpus.train.conversations.len() < 2 {
            return Err(Error::NoiseSourceExhausted {
                available: corpus.train.conversations.len(),
            });
        }
        if corpus.validation.conversations.is_empty() {
            return Err(Error::EmptySplit {
                split: "validation",
            });
        }
    }

    let train_index = corpus.train.index_by_id();
    for epoch in 1..=schedule.max_epochs {
        let mut noise_rng = root.child_indexed("noise", epoch);
        let mut dropout_rng = root.child_indexed("dropout", epoch);
        let mut loss_sum = 0.0;
        let mut position_count = 0usize;
        for conversation in &corpus.train.conversations {
            let refs = super::sample_negatives(
                &corpus.train.conversations,
                conversation.id,
                schedule.noise_count,
                &mut noise_rng,
            )?;
            let noise = noise_tokens_for(&corpus.train, &train_index, &refs);
            let (loss, positions) = conversation_step(
                &mut model,
                conversation,
                &noise,
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
            position_count += positions;
            clip_global_norm(&mut model.store, schedule.clip_norm);
            adam_step(&mut model.store, &mut adam)?;
            model.store.zero_grads();
        }

        let validation = evaluate_pretrain(&model, &corpus.validation)?;
        let metric = validation.r11_at_1;
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / position_count.max(1) as f64,
            validation_recall: metric,
            learning_rate: adam.learning_rate,
        });

        if metric > best_metric {
            best_metric = metric;
            best_epoch = Some(epoch);
            best_store = model.store.clone();
            non_improving = 0;
        } else {
            non_improving += 1;
            adam.decay_learning_rate(schedule.decay);
            if non_improving >= schedule.patience {
                break;
            }
        }
    }

    model.store = best_store;
    Ok(PretrainOutcome {
        model,
        log,
        best_epoch,
        best_validation: best_metric,
    })
}

/// Score every target position of a split against its pre-selected noise:
/// recall@1 and @2 over 5 candidates (target plus the first four noise
/// utterances) and over 11 (target plus all ten). Dropout disabled.
/// Conversations are scored in parallel and reduced in order.
pub fn evaluate_pretrain(model: &CodeModel, split: &PreparedSplit) -> Result<RecallReport> {
    if split.conversations.is_empty() {
        return Err(Error::EmptySplit { split: "evaluation" });
    }
    if split.noise.len() != split.conversations.len() {
        return Err(Error::InsufficientNoise {
            requested: split.conversations.len(),
            available: split.noise.len(),
        });
    }
    let index = split.index_by_id();
    let per_conversation: Vec<Result<RecallSums>> = split
        .conversations
        .par_iter()
        .zip(&split.noise)
        .map(|(conversation, refs)| {
            if refs.len() < 10 {
                return Err(Error::InsufficientNoise {
                    requested: 10,
                    available: refs.len(),
                });
            }
            let noise = noise_tokens_for(split, &index, refs);
            score_conversation(model, conversation, &noise)
        })
        .collect();

    let mut sums = (0.0, 0.0, 0.0, 0.0);
    let mut positions = 0usize;
    for entry in per_conversation {
        let (r51, r52, r111, r112, n) = entry?;
        sums.0 += r51;
        sums.1 += r52;
        sums.2 += r111;
        sums.3 += r112;
        positions += n;
    }
    let denom = positions.max(1) as f64;
    Ok(RecallReport {
        r5_at_1: sums.0 / denom,
        r5_at_2: sums.1 / denom,
        r11_at_1: sums.2 / denom,
        r11_at_2: sums.3 / denom,
        positions,
    })
}

/// Per-conversation recall sums: (r5@1, r5@2, r11@1, r11@2, positions).
type RecallSums = (f64, f64, f64, f64, usize);

/// Sum of per-position recalls for one conversation (values, no gradients).
fn score_conversation(
    model: &CodeModel,
    conversation: &Conversation,
    noise_tokens: &[Vec<u32>],
) -> Result<RecallSums> {
    let cfg = EncodeConfig::inference();
    let mut rng = SeedRng::new(0); // unused in inference mode
    let mut tape = Tape::new();
    let enc = BoundEncoder::bind(&mut tape, model)?;
    let token_ids: Vec<Vec<u32>> = conversation
        .utterances
        .iter()
        .map(|u| u.tokens.clone())
        .collect();
    let full = encode_full_conversation(&mut tape, &enc, &token_ids, cfg, &mut rng)?;
    let noise: Vec<_> = noise_tokens
        .iter()
        .map(|ids| encode_utterance(&mut tape, &enc, ids, cfg, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    let mut sums = (0.0, 0.0, 0.0, 0.0);
    for l in 1..=conversation.len() {
        let ctx = contextual_embedding(&mut tape, &enc, &full.states, l)?;
        let ctx_val = tape.value(ctx).clone();
        let target_score = match_score(&ctx_val, tape.value(full.utterances[l - 1]))?;
        let noise_scores: Vec<f64> = noise
            .iter()
            .map(|&n| match_score(&ctx_val, tape.value(n)))
            .collect::<Result<_>>()?;

        let five = RankingResult {
            scores: std::iter::once(target_score)
                .chain(noise_scores[..4].iter().copied())
                .collect(),
            labels: (0..5).map(|i| i == 0).collect(),
        };
        let eleven = RankingResult {
            scores: std::iter::once(target_score)
                .chain(noise_scores.iter().copied())
                .collect(),
            labels: (0..=noise_scores.len()).map(|i| i == 0).collect(),
        };
        sums.0 += recall_at_k(&five, 1)?;
        sums.1 += recall_at_k(&five, 2)?;
        sums.2 += recall_at_k(&eleven, 1)?;
        sums.3 += recall_at_k(&eleven, 2)?;
    }
    Ok((sums.0, sums.1, sums.2, sums.3, conversation.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preselect_noise, tokenize_conversations, Utterance};
    use crate::encoder::Capacity;

    /// Small deterministic corpus of token soup. Three conversations each go
    /// to validation and test so ten noise utterances are always available.
    fn toy_corpus(seed: u64, conversations: usize) -> PreparedCorpus {
        assert!(conversations >= 8);
        let mut rng = SeedRng::new(seed);
        let words = ["red", "blue", "green", "gold", "gray", "pink", "teal", "plum"];
        let mk_text = |rng: &mut SeedRng| {
            let len = rng.range_inclusive(2, 4);
            (0..len)
                .map(|_| words[rng.below(words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut convs = Vec::new();
        for id in 0..conversations as u64 {
            let len = rng.range_inclusive(5, 8);
            convs.push(Conversation {
                id,
                utterances: (0..len)
                    .map(|_| Utterance::from_text(mk_text(&mut rng)))
                    .collect(),
            });
        }
        let vocab = crate::corpus::build_vocab(&convs, 1);
        tokenize_conversations(&mut convs, &vocab);
        let n = convs.len();
        let test = convs.split_off(n - 3);
        let validation = convs.split_off(convs.len() - 3);
        let mut noise_rng = SeedRng::new(seed ^ 0x9e37);
        let validation_noise = preselect_noise(&validation, 10, &mut noise_rng).unwrap();
        let test_noise = preselect_noise(&test, 10, &mut noise_rng).unwrap();
        PreparedCorpus {
            train: PreparedSplit::from_conversations(convs),
            validation: PreparedSplit {
                conversations: validation,
                noise: validation_noise,
            },
            test: PreparedSplit {
                conversations: test,
                noise: test_noise,
            },
            vocab,
            seed,
            rules: Default::default(),
        }
    }

    fn toy_model(corpus: &PreparedCorpus, seed: u64) -> CodeModel {
        CodeModel::init(
            Capacity::Custom(4),
            corpus.vocab.clone(),
            5,
            false,
            &SeedRng::new(seed),
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_model_and_empty_log() {
        let corpus = toy_corpus(1, 10);
        let model = toy_model(&corpus, 2);
        let before: Vec<_> = model.store.iter().map(|p| p.value.clone()).collect();
        let schedule = PretrainSchedule {
            max_epochs: 0,
            patience: 1,
            ..Default::default()
        };
        let out = pretrain(model, &corpus, &schedule, 3).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.best_epoch, None);
        for (p, b) in out.model.store.iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn patience_halts_after_three_flat_validations() {
        // A vanishing learning rate freezes the model, so the validation
        // metric repeats exactly: epoch 1 improves over -inf, epochs 2-4 do
        // not, and training stops right there.
        let corpus = toy_corpus(4, 12);
        let model = toy_model(&corpus, 5);
        let schedule = PretrainSchedule {
            learning_rate: 1e-300,
            max_epochs: 20,
            patience: 3,
            dropout: 0.0,
            ..Default::default()
        };
        let out = pretrain(model, &corpus, &schedule, 6).unwrap();
        assert_eq!(out.log.len(), 4, "stopped exactly after 3 non-improving epochs");
        assert_eq!(out.best_epoch, Some(1));
        // Decay applied on each non-improving epoch.
        let lrs: Vec<f64> = out.log.iter().map(|r| r.learning_rate).collect();
        assert!(lrs[1] < lrs[0] || (lrs[1] - lrs[0]).abs() < f64::EPSILON);
    }

    #[test]
    fn pretraining_is_bit_reproducible() {
        let corpus = toy_corpus(7, 10);
        let schedule = PretrainSchedule {
            max_epochs: 2,
            patience: 2,
            ..Default::default()
        };
        let run = || {
            let model = toy_model(&corpus, 8);
            pretrain(model, &corpus, &schedule, 9).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.log, b.log);
        for (pa, pb) in a.model.store.iter().zip(b.model.store.iter()) {
            assert_eq!(pa.value, pb.value, "{}", pa.name);
        }
    }

    #[test]
    fn one_step_descends_on_a_single_instance() {
        let corpus = toy_corpus(10, 8);
        let mut model = toy_model(&corpus, 11);
        let conversation = corpus.train.conversations[0].clone();
        let noise: Vec<Vec<u32>> = corpus.train.conversations[1]
            .utterances
            .iter()
            .map(|u| u.tokens.clone())
            .collect();

        let loss_of = |model: &mut CodeModel| {
            let mut rng = SeedRng::new(0);
            conversation_step(model, &conversation, &noise, 0.0, &mut rng)
                .unwrap()
                .0
        };
        let before = loss_of(&mut model);
        // Gradients from that evaluation are still accumulated; step once.
        let mut adam = AdamState::new(&model.store, 1e-4);
        adam_step(&mut model.store, &mut adam).unwrap();
        model.store.zero_grads();
        let after = loss_of(&mut model);
        assert!(
            after < before,
            "loss did not descend: {before} -> {after}"
        );
    }

    #[test]
    fn evaluation_requires_ten_noise_utterances() {
        let corpus = toy_corpus(12, 8);
        let model = toy_model(&corpus, 13);
        let mut crippled = corpus.validation.clone();
        crippled.noise[0].truncate(3);
        let err = evaluate_pretrain(&model, &crippled).unwrap_err();
        assert!(err.to_string().contains("noise"));
    }
}
