//! Forward passes over the tape: utterance encoding, conversation-level
//! recurrences, and contextual embeddings.
//!
//! Encoding is a pure function of (inputs, parameters, rng); callers that
//! only need values skip `backward` and pay no gradient cost.

use crate::encoder::gru::{gru_step, GruVars};
use crate::encoder::model::{
    CodeModel, CONV_BWD, CONV_COMB_B, CONV_COMB_W, CONV_FWD, UTT_BWD, UTT_FWD, UTT_PROJ_B,
    UTT_PROJ_W,
};
use crate::error::{Error, Result};
use crate::kernel::{SeedRng, Tape, Tensor, Var};

/// Dropout configuration for one encoding pass.
#[derive(Debug, Clone, Copy)]
pub struct EncodeConfig {
    pub dropout: f64,
    pub training: bool,
}

impl EncodeConfig {
    pub fn inference() -> Self {
        EncodeConfig {
            dropout: 0.0,
            training: false,
        }
    }

    pub fn training(dropout: f64) -> Self {
        EncodeConfig {
            dropout,
            training: true,
        }
    }
}

/// Tape handles for every encoder parameter, bound once per tape.
pub struct BoundEncoder<'m> {
    pub model: &'m CodeModel,
    utt_fwd: GruVars,
    utt_bwd: GruVars,
    proj_w: Var,
    proj_b: Var,
    conv_fwd: GruVars,
    conv_bwd: GruVars,
    comb_w: Var,
    comb_b: Var,
}

impl<'m> BoundEncoder<'m> {
    pub fn bind(tape: &mut Tape, model: &'m CodeModel) -> Result<Self> {
        let store = &model.store;
        Ok(BoundEncoder {
            model,
            utt_fwd: GruVars::bind(tape, store, UTT_FWD)?,
            utt_bwd: GruVars::bind(tape, store, UTT_BWD)?,
            proj_w: tape.param(store, UTT_PROJ_W)?,
            proj_b: tape.param(store, UTT_PROJ_B)?,
            conv_fwd: GruVars::bind(tape, store, CONV_FWD)?,
            conv_bwd: GruVars::bind(tape, store, CONV_BWD)?,
            comb_w: tape.param(store, CONV_COMB_W)?,
            comb_b: tape.param(store, CONV_COMB_B)?,
        })
    }
}

/// Run both word-level recurrences, pool, and project:
/// sum of max- and mean-pooled bidirectional states through a tanh layer.
/// Dropout (when training) applies to the word vectors feeding the
/// recurrences.
pub fn encode_utterance(
    tape: &mut Tape,
    enc: &BoundEncoder,
    token_ids: &[u32],
    cfg: EncodeConfig,
    rng: &mut SeedRng,
) -> Result<Var> {
    let (pooled, _) = encode_utterance_pooled(tape, enc, token_ids, cfg, rng)?;
    let pre = tape.affine(pooled, enc.proj_w, enc.proj_b)?;
    Ok(tape.tanh(pre))
}

/// As [`encode_utterance`] but also exposes the pooled hidden state
/// (before the projection) and the per-step states for tests.
pub(crate) fn encode_utterance_pooled(
    tape: &mut Tape,
    enc: &BoundEncoder,
    token_ids: &[u32],
    cfg: EncodeConfig,
    rng: &mut SeedRng,
) -> Result<(Var, Vec<Var>)> {
    if token_ids.is_empty() {
        return Err(Error::EmptySequence {
            op: "encode_utterance",
        });
    }
    let hidden = enc.model.hidden_dim();
    let words = enc.model.emb.lookup(tape, &enc.model.store, token_ids)?;
    let words: Vec<Var> = words
        .into_iter()
        .map(|w| tape.dropout(w, cfg.dropout, cfg.training, rng))
        .collect::<Result<_>>()?;

    let mut fwd = Vec::with_capacity(words.len());
    let mut state = tape.leaf(Tensor::zeros(vec![hidden]));
    for &w in &words {
        state = gru_step(tape, w, state, &enc.utt_fwd)?;
        fwd.push(state);
    }
    let mut bwd = Vec::with_capacity(words.len());
    state = tape.leaf(Tensor::zeros(vec![hidden]));
    for &w in words.iter().rev() {
        state = gru_step(tape, w, state, &enc.utt_bwd)?;
        bwd.push(state);
    }
    bwd.reverse();

    let both: Vec<Var> = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(f, b))
        .collect::<Result<_>>()?;
    let stacked = tape.stack_rows(&both)?;
    let max = tape.pool_max(stacked)?;
    let mean = tape.pool_mean(stacked)?;
    let pooled = tape.add(max, mean)?;
    Ok((pooled, both))
}

/// Directional conversation-level states. `fwd[l]` depends only on
/// utterances 0..=l, `bwd[l]` only on utterances l.. (causality).
pub struct ConversationStates {
    pub fwd: Vec<Var>,
    pub bwd: Vec<Var>,
}

/// Run the utterance-level recurrences over a sequence of utterance
/// embeddings. Dropout (when training) applies to the embeddings entering
/// the recurrences; the caller's original embedding nodes are untouched.
pub fn encode_conversation(
    tape: &mut Tape,
    enc: &BoundEncoder,
    utterance_embeddings: &[Var],
    cfg: EncodeConfig,
    rng: &mut SeedRng,
) -> Result<ConversationStates> {
    if utterance_embeddings.is_empty() {
        return Err(Error::EmptySequence {
            op: "encode_conversation",
        });
    }
    let hidden = enc.model.hidden_dim();
    let inputs: Vec<Var> = utterance_embeddings
        .iter()
        .map(|&u| tape.dropout(u, cfg.dropout, cfg.training, rng))
        .collect::<Result<_>>()?;

    let mut fwd = Vec::with_capacity(inputs.len());
    let mut state = tape.leaf(Tensor::zeros(vec![hidden]));
    for &u in &inputs {
        state = gru_step(tape, u, state, &enc.conv_fwd)?;
        fwd.push(state);
    }
    let mut bwd = Vec::with_capacity(inputs.len());
    state = tape.leaf(Tensor::zeros(vec![hidden]));
    for &u in inputs.iter().rev() {
        state = gru_step(tape, u, state, &enc.conv_bwd)?;
        bwd.push(state);
    }
    bwd.reverse();
    Ok(ConversationStates { fwd, bwd })
}

/// Contextual embedding for 1-based position `l`: tanh projection of the
/// concatenated history state (position l-1) and future state (position
/// l+1). Boundary states beyond either end are zero vectors, matching the
/// recurrences' own initial state. By construction the result never
/// depends on the content of utterance `l` itself.
pub fn contextual_embedding(
    tape: &mut Tape,
    enc: &BoundEncoder,
    states: &ConversationStates,
    l: usize,
) -> Result<Var> {
    let len = states.fwd.len();
    if l < 1 || l > len {
        return Err(Error::PositionOutOfRange {
            position: l,
            len,
        });
    }
    let hidden = enc.model.hidden_dim();
    let history = if l >= 2 {
        states.fwd[l - 2]
    } else {
        tape.leaf(Tensor::zeros(vec![hidden]))
    };
    let future = if l < len {
        states.bwd[l]
    } else {
        tape.leaf(Tensor::zeros(vec![hidden]))
    };
    let cat = tape.concat(history, future)?;
    let pre = tape.affine(cat, enc.comb_w, enc.comb_b)?;
    Ok(tape.tanh(pre))
}

/// Full pass over one conversation: every utterance embedding plus the
/// directional state sequences.
pub struct ConversationEncoding {
    pub utterances: Vec<Var>,
    pub states: ConversationStates,
}

pub fn encode_full_conversation(
    tape: &mut Tape,
    enc: &BoundEncoder,
    token_ids: &[Vec<u32>],
    cfg: EncodeConfig,
    rng: &mut SeedRng,
) -> Result<ConversationEncoding> {
    if token_ids.is_empty() {
        return Err(Error::EmptySequence {
            op: "encode_full_conversation",
        });
    }
    let utterances: Vec<Var> = token_ids
        .iter()
        .map(|ids| encode_utterance(tape, enc, ids, cfg, rng))
        .collect::<Result<_>>()?;
    let states = encode_conversation(tape, enc, &utterances, cfg, rng)?;
    Ok(ConversationEncoding { utterances, states })
}
