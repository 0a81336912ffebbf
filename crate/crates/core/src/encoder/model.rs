//! The two-level conversation encoder: parameter layout, initialization,
//! and checkpoint conversion.

use crate::corpus::Vocabulary;
use crate::encoder::embedding::{EmbeddingTable, EMB_PARAM};
use crate::encoder::gru::init_gru;
use crate::error::{Error, Result};
use crate::kernel::{Checkpoint, CheckpointHeader, ParamStore, SeedRng};

/// Model capacity; fixes the hidden size of both recurrent levels. The
/// named capacities pin 150/300/450; `Custom` exists for tiny diagnostic
/// models (gradient checks would be intractable at the named sizes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Small,
    Mid,
    Large,
    Custom(usize),
}

impl Capacity {
    pub fn hidden_dim(self) -> usize {
        match self {
            Capacity::Small => 150,
            Capacity::Mid => 300,
            Capacity::Large => 450,
            Capacity::Custom(d) => d,
        }
    }

    pub fn tag(self) -> String {
        match self {
            Capacity::Small => "small".into(),
            Capacity::Mid => "mid".into(),
            Capacity::Large => "large".into(),
            Capacity::Custom(d) => format!("custom:{d}"),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "small" => Ok(Capacity::Small),
            "mid" => Ok(Capacity::Mid),
            "large" => Ok(Capacity::Large),
            other => {
                if let Some(dim) = other.strip_prefix("custom:") {
                    let d: usize = dim.parse().map_err(|_| Error::InvalidConfig {
                        reason: format!("bad custom capacity `{other}`"),
                    })?;
                    if d == 0 {
                        return Err(Error::InvalidConfig {
                            reason: "custom capacity must be positive".into(),
                        });
                    }
                    return Ok(Capacity::Custom(d));
                }
                Err(Error::InvalidConfig {
                    reason: format!("unknown capacity `{other}` (small|mid|large|custom:<d>)"),
                })
            }
        }
    }
}

pub const UTT_FWD: &str = "utt_enc.gru_fwd";
pub const UTT_BWD: &str = "utt_enc.gru_bwd";
pub const UTT_PROJ_W: &str = "utt_enc.proj.w";
pub const UTT_PROJ_B: &str = "utt_enc.proj.b";
pub const CONV_FWD: &str = "conv_enc.gru_fwd";
pub const CONV_BWD: &str = "conv_enc.gru_bwd";
pub const CONV_COMB_W: &str = "conv_enc.comb.w";
pub const CONV_COMB_B: &str = "conv_enc.comb.b";

/// Complete encoder state: vocabulary, embedding table and all recurrent /
/// projection parameters in one store.
#[derive(Debug, Clone)]
pub struct CodeModel {
    pub capacity: Capacity,
    pub vocab: Vocabulary,
    pub emb: EmbeddingTable,
    pub store: ParamStore,
}

impl CodeModel {
    /// Fresh model. Component initializations draw from independent child
    /// streams of `rng`, so e.g. loading one component from a checkpoint
    /// leaves every other component's initialization unchanged.
    pub fn init(
        capacity: Capacity,
        vocab: Vocabulary,
        emb_dim: usize,
        emb_trainable: bool,
        rng: &SeedRng,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let emb = EmbeddingTable::init_random(
            &mut store,
            vocab.size(),
            emb_dim,
            emb_trainable,
            &mut rng.child("emb"),
        )?;
        init_encoder_params(&mut store, capacity, emb_dim, rng)?;
        Ok(CodeModel {
            capacity,
            vocab,
            emb,
            store,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.capacity.hidden_dim()
    }

    /// Width of utterance and contextual embeddings: twice the utterance
    /// hidden size (the concatenated bidirectional state stays square
    /// through the projection).
    pub fn embedding_size(&self) -> usize {
        2 * self.capacity.hidden_dim()
    }

    pub fn checkpoint(&self, meta: Vec<(String, String)>) -> Checkpoint {
        let header = CheckpointHeader {
            capacity: self.capacity.tag(),
            utterance_hidden: self.hidden_dim(),
            conversation_hidden: self.hidden_dim(),
            vocab_size: self.vocab.size(),
            embedding_dim: self.emb.dim,
            meta,
        };
        let tokens = self
            .vocab
            .iter()
            .map(|(t, c)| (t.to_string(), c))
            .collect();
        Checkpoint::from_store(header, tokens, &self.store)
    }

    /// Rebuild a model from a checkpoint. `emb_trainable` is a run-time
    /// property, not a stored one.
    pub fn from_checkpoint(ck: &Checkpoint, emb_trainable: bool) -> Result<Self> {
        let capacity = Capacity::from_tag(&ck.header.capacity)?;
        let mut vocab = Vocabulary::new();
        for (token, count) in &ck.tokens {
            vocab.push(token, *count);
        }
        if vocab.size() != ck.header.vocab_size {
            return Err(Error::IncompatibleCheckpoint {
                reason: format!(
                    "header vocab size {} vs {} stored tokens + reserved rows",
                    ck.header.vocab_size,
                    ck.tokens.len()
                ),
            });
        }
        let store = ck.to_store()?;
        let table = &store.get(EMB_PARAM)?.value;
        if table.shape() != [ck.header.vocab_size, ck.header.embedding_dim] {
            return Err(Error::IncompatibleCheckpoint {
                reason: format!(
                    "embedding table shape {:?} does not match header ({}, {})",
                    table.shape(),
                    ck.header.vocab_size,
                    ck.header.embedding_dim
                ),
            });
        }
        Ok(CodeModel {
            capacity,
            vocab,
            emb: EmbeddingTable {
                vocab_size: ck.header.vocab_size,
                dim: ck.header.embedding_dim,
                trainable: emb_trainable,
            },
            store,
        })
    }
}

/// Insert all recurrent and projection parameters (everything except the
/// embedding table) for the given capacity.
pub fn init_encoder_params(
    store: &mut ParamStore,
    capacity: Capacity,
    emb_dim: usize,
    rng: &SeedRng,
) -> Result<()> {
    let hidden = capacity.hidden_dim();
    let emb_size = 2 * hidden;
    let mut utt_rng = rng.child("utt_enc");
    init_gru(store, UTT_FWD, emb_dim, hidden, &mut utt_rng)?;
    init_gru(store, UTT_BWD, emb_dim, hidden, &mut utt_rng)?;
    store.insert_uniform(UTT_PROJ_W, vec![emb_size, 2 * hidden], hidden, &mut utt_rng)?;
    store.insert_zeros(UTT_PROJ_B, vec![emb_size])?;
    let mut conv_rng = rng.child("conv_enc");
    init_gru(store, CONV_FWD, emb_size, hidden, &mut conv_rng)?;
    init_gru(store, CONV_BWD, emb_size, hidden, &mut conv_rng)?;
    store.insert_uniform(CONV_COMB_W, vec![emb_size, 2 * hidden], hidden, &mut conv_rng)?;
    store.insert_zeros(CONV_COMB_B, vec![emb_size])?;
    Ok(())
}

/// Parameter names belonging to the utterance encoder.
pub fn utterance_encoder_names() -> Vec<String> {
    let mut names = crate::encoder::gru::gru_param_names(UTT_FWD);
    names.extend(crate::encoder::gru::gru_param_names(UTT_BWD));
    names.push(UTT_PROJ_W.to_string());
    names.push(UTT_PROJ_B.to_string());
    names
}

/// Parameter names belonging to the conversation encoder.
pub fn conversation_encoder_names() -> Vec<String> {
    let mut names = crate::encoder::gru::gru_param_names(CONV_FWD);
    names.extend(crate::encoder::gru::gru_param_names(CONV_BWD));
    names.push(CONV_COMB_W.to_string());
    names.push(CONV_COMB_B.to_string());
    names
}
