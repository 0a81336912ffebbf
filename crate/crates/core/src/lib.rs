//! Hierarchical conversation encoding at desk scale.
//!
//! The crate pre-trains a two-level recurrent conversation encoder on a
//! self-supervised completion task (mask an utterance, pick it back out of
//! noise candidates by its bidirectional context) and transfers the encoder
//! to per-utterance emotion classification. Everything runs on a small
//! built-in f64 kernel with exact reverse-mode gradients, so results are
//! deterministic given a seed and every gradient path is checkable against
//! finite differences.
//!
//! Modules follow the pipeline:
//!
//! - [`kernel`]: tensors, the differentiation tape, Adam, clipping,
//!   gradient checks, checkpoint files.
//! - [`encoder`]: embedding table, bidirectional GRUs, utterance and
//!   conversation encoders, contextual embeddings.
//! - [`corpus`]: subtitle-style ingestion, conversation construction rules,
//!   splits, vocabulary, noise pre-selection, on-disk formats.
//! - [`convcom`]: the completion task, its loss and recall metrics, and the
//!   pre-training loop.
//! - [`erc`]: classification head, weighted cross-entropy, transfer
//!   variants, fine-tuning, evaluation metrics and significance tests.
//! - [`synth`]: synthetic topical corpora for end-to-end experiments.

pub mod convcom;
pub mod defaults;
pub mod corpus;
pub mod encoder;
pub mod erc;
pub mod error;
pub mod kernel;
pub mod synth;

pub use error::{Error, Result};
