//! The context-dependent conversation encoder: embedding lookup, a
//! bidirectional word-level recurrence with max+mean pooling, a
//! bidirectional utterance-level recurrence, and contextual embeddings
//! that see only a position's history and future.

pub mod embedding;
pub mod forward;
pub mod gru;
pub mod model;

pub use embedding::{EmbeddingTable, VectorCoverage, EMB_PARAM};
pub use forward::{
    contextual_embedding, encode_conversation, encode_full_conversation, encode_utterance,
    BoundEncoder, ConversationEncoding, ConversationStates, EncodeConfig,
};
pub use gru::{gru_step, GruVars};
pub use model::{
    conversation_encoder_names, utterance_encoder_names, Capacity, CodeModel, CONV_BWD,
    CONV_COMB_B, CONV_COMB_W, CONV_FWD, UTT_BWD, UTT_FWD, UTT_PROJ_B, UTT_PROJ_W,
};
