//! Emotion classification over encoded conversations: class-weighted
//! base-2 cross-entropy on [utterance embedding ; contextual embedding],
//! transfer variants, fine-tuning, metrics and significance testing.

pub mod data;
pub mod metrics;
pub mod train;

pub use data::{dataset_from_records, load_dataset, resolve_labels, ErcDataset, ResolvedLabel,
    OTHER_LABEL};
pub use metrics::{macro_f1, paired_t_test, weighted_accuracy, ConfusionMatrix};
pub use train::{
    evaluate_model, finetune, parse_summary_runs, predict_dataset, summarize, EpochRecord,
    FinetuneJob, FinetuneOutcome, FinetuneSchedule, PredictionRow, RunMetrics,
};

use crate::corpus::Vocabulary;
use crate::encoder::{
    contextual_embedding, encode_full_conversation, BoundEncoder, Capacity, CodeModel,
    EncodeConfig,
};
use crate::error::{Error, Result};
use crate::kernel::{Checkpoint, ParamStore, SeedRng, Tape, Var};

pub const HEAD_W: &str = "erc_head.w";
pub const HEAD_B: &str = "erc_head.b";

/// Probability floor inside the loss; true-class probabilities below it are
/// clamped and counted.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which pre-trained pieces initialize a fine-tuning run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferVariant {
    /// Everything freshly initialized (no checkpoint needed).
    None,
    /// Embedding table, utterance encoder and conversation encoder all come
    /// from the checkpoint.
    Full,
    /// Only the utterance encoder comes from the checkpoint.
    UtteranceOnly,
    /// Like `Full`, from a checkpoint whose embedding table was unfrozen
    /// during extra pre-training epochs.
    FullRetrainWords,
}

impl TransferVariant {
    pub fn tag(self) -> &'static str {
        match self {
            TransferVariant::None => "none",
            TransferVariant::Full => "full",
            TransferVariant::UtteranceOnly => "pre-u",
            TransferVariant::FullRetrainWords => "re-w",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "none" => Ok(TransferVariant::None),
            "full" => Ok(TransferVariant::Full),
            "pre-u" => Ok(TransferVariant::UtteranceOnly),
            "re-w" => Ok(TransferVariant::FullRetrainWords),
            other => Err(Error::InvalidConfig {
                reason: format!("unknown variant `{other}` (none|full|pre-u|re-w)"),
            }),
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        !matches!(self, TransferVariant::None)
    }
}

/// Per-class loss weights: (class share of the training set) to the power
/// -`power`, unnormalized. Rarer classes get strictly larger weights.
pub fn class_weights(labels: &[String], counts: &[u64], power: f64) -> Result<Vec<f64>> {
    assert_eq!(labels.len(), counts.len());
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(labels)
        .map(|(&count, label)| {
            if count == 0 {
                return Err(Error::ZeroCountClass {
                    class: label.clone(),
                });
            }
            let ratio_inverse = total as f64 / count as f64;
            // power 0.5 via sqrt keeps the common case exact.
            Ok(if (power - 0.5).abs() < f64::EPSILON {
                ratio_inverse.sqrt()
            } else {
                ratio_inverse.powf(power)
            })
        })
        .collect()
}

/// Encoder plus classification head plus the label names the head's
/// outputs index into.
#[derive(Debug, Clone)]
pub struct ErcModel {
    pub base: CodeModel,
    pub labels: Vec<String>,
}

impl ErcModel {
    pub fn class_count(&self) -> usize {
        self.labels.len()
    }

    /// Attach a freshly initialized head to an encoder.
    pub fn with_new_head(mut base: CodeModel, labels: Vec<String>, rng: &SeedRng) -> Result<Self> {
        let input = 2 * base.embedding_size();
        let mut head_rng = rng.child("head");
        base.store
            .insert_uniform(HEAD_W, vec![labels.len(), input], input, &mut head_rng)?;
        base.store.insert_zeros(HEAD_B, vec![labels.len()])?;
        Ok(ErcModel { base, labels })
    }

    pub fn checkpoint(&self, mut meta: Vec<(String, String)>) -> Checkpoint {
        meta.push((
            "labels_json".to_string(),
            serde_json::to_string(&self.labels).expect("labels serialize"),
        ));
        self.base.checkpoint(meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let labels_json = ck
            .header
            .meta_value("labels_json")
            .ok_or_else(|| Error::IncompatibleCheckpoint {
                reason: "checkpoint has no label list; not a classification model".into(),
            })?;
        let labels: Vec<String> =
            serde_json::from_str(labels_json).map_err(|e| Error::IncompatibleCheckpoint {
                reason: format!("bad label list: {e}"),
            })?;
        let base = CodeModel::from_checkpoint(ck, true)?;
        if !base.store.contains(HEAD_W) {
            return Err(Error::IncompatibleCheckpoint {
                reason: "checkpoint has no classification head".into(),
            });
        }
        Ok(ErcModel { base, labels })
    }

    /// Tokenize text against this model's vocabulary.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        crate::corpus::tokenize(text)
            .iter()
            .map(|t| self.base.vocab.id_or_unk(t))
            .collect()
    }
}

/// Build the starting model for a fine-tuning run.
///
/// Initialization per variant (name-level):
/// - `None`: everything fresh; vocabulary from the training conversations.
/// - `Full` / `FullRetrainWords`: `emb.*`, `utt_enc.*`, `conv_enc.*` from
///   the checkpoint; head fresh.
/// - `UtteranceOnly`: `utt_enc.*` from the checkpoint; embedding (with a
///   dataset vocabulary), conversation encoder and head fresh.
///
/// Word embeddings are trainable in every variant during fine-tuning.
/// Component initializations draw from labelled child streams, so two
/// variants built from the same seed share every fresh component's values
/// (the head in particular).
pub fn init_variant_model(
    variant: TransferVariant,
    checkpoint: Option<&Checkpoint>,
    dataset_vocab: &Vocabulary,
    labels: Vec<String>,
    capacity: Capacity,
    emb_dim: usize,
    rng: &SeedRng,
) -> Result<ErcModel> {
    if variant.needs_checkpoint() && checkpoint.is_none() {
        return Err(Error::InvalidConfig {
            reason: format!("variant `{}` requires a checkpoint", variant.tag()),
        });
    }
    let base = match variant {
        TransferVariant::None => {
            CodeModel::init(capacity, dataset_vocab.clone(), emb_dim, true, rng)?
        }
        TransferVariant::Full | TransferVariant::FullRetrainWords => {
            CodeModel::from_checkpoint(checkpoint.expect("checked"), true)?
        }
        TransferVariant::UtteranceOnly => {
            let ck = checkpoint.expect("checked");
            let ck_capacity = Capacity::from_tag(&ck.header.capacity)?;
            let mut fresh = CodeModel::init(
                ck_capacity,
                dataset_vocab.clone(),
                ck.header.embedding_dim,
                true,
                rng,
            )?;
            for name in crate::encoder::utterance_encoder_names() {
                let stored = ck.param(&name).ok_or_else(|| Error::IncompatibleCheckpoint {
                    reason: format!("checkpoint lacks `{name}`"),
                })?;
                let slot = fresh.store.get_mut(&name)?;
                if slot.value.shape() != stored.shape() {
                    return Err(Error::IncompatibleCheckpoint {
                        reason: format!(
                            "`{name}` shape {:?} vs fresh {:?}",
                            stored.shape(),
                            slot.value.shape()
                        ),
                    });
                }
                slot.value = stored.clone();
            }
            fresh
        }
    };
    ErcModel::with_new_head(base, labels, rng)
}

/// Tape handles for the classification head.
#[derive(Clone, Copy)]
pub struct HeadVars {
    pub w: Var,
    pub b: Var,
}

impl HeadVars {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(HeadVars {
            w: tape.param(store, HEAD_W)?,
            b: tape.param(store, HEAD_B)?,
        })
    }
}

/// Per-utterance class distributions for one conversation: concatenate each
/// utterance's embedding with its contextual embedding, apply the head and
/// a softmax. Dropout (when training) regularizes the concatenated input.
pub fn erc_forward(
    tape: &mut Tape,
    enc: &BoundEncoder,
    head: HeadVars,
    token_ids: &[Vec<u32>],
    cfg: EncodeConfig,
    rng: &mut SeedRng,
) -> Result<Vec<Var>> {
    let full = encode_full_conversation(tape, enc, token_ids, cfg, rng)?;
    let mut distributions = Vec::with_capacity(token_ids.len());
    for l in 1..=token_ids.len() {
        let ctx = contextual_embedding(tape, enc, &full.states, l)?;
        let cat = tape.concat(full.utterances[l - 1], ctx)?;
        let cat = tape.dropout(cat, cfg.dropout, cfg.training, rng)?;
        let logits = tape.affine(cat, head.w, head.b)?;
        distributions.push(tape.softmax(logits)?);
    }
    Ok(distributions)
}

/// Class-weighted categorical cross-entropy in bits:
/// -(1/total_utterances) * sum over utterances of w(c_j) * log2 p_j(c_j).
/// True-class probabilities below [`PROB_FLOOR`] are clamped; the clamp
/// count is returned alongside the loss node.
pub fn weighted_ce(
    tape: &mut Tape,
    distributions: &[Var],
    labels: &[u32],
    weights: &[f64],
    total_utterances: usize,
) -> Result<(Var, usize)> {
    if distributions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "weighted_ce",
            left: format!("[{}]", distributions.len()),
            right: format!("[{}]", labels.len()),
        });
    }
    if distributions.is_empty() || total_utterances == 0 {
        return Err(Error::EmptySequence { op: "weighted_ce" });
    }
    let mut clamped = 0usize;
    let mut terms = Vec::with_capacity(distributions.len());
    for (&dist, &label) in distributions.iter().zip(labels) {
        let p = tape.pick(dist, label as usize)?;
        if tape.value(p).item() < PROB_FLOOR {
            clamped += 1;
        }
        let lp = tape.ln_clamped(p, PROB_FLOOR);
        terms.push(tape.scale(lp, weights[label as usize] / std::f64::consts::LN_2));
    }
    let sum = tape.sum(&terms)?;
    let loss = tape.scale(sum, -1.0 / total_utterances as f64);
    Ok((loss, clamped))
}
