//! Compiled-in default hyperparameters and corpus rules. Commands reference
//! these constants instead of re-typing literals, so one definition governs
//! every surface (library, CLI flags, config files).

pub const PRETRAIN_LEARNING_RATE: f64 = 2e-4;
pub const LEARNING_RATE_DECAY: f64 = 0.75;
pub const DROPOUT_RATE: f64 = 0.5;
pub const CLIP_NORM: f64 = 5.0;
pub const PRETRAIN_MAX_EPOCHS: usize = 20;
pub const PRETRAIN_PATIENCE: usize = 3;
pub const NOISE_PER_CONVERSATION: usize = 10;

pub const TRAIN_RATIO: f64 = 0.90;
pub const VALIDATION_RATIO: f64 = 0.05;
pub const CONV_MIN_UTTERANCES: usize = 5;
pub const CONV_MAX_UTTERANCES: usize = 100;
pub const TRIM_UTTERANCES: usize = 10;
pub const SHORT_UTTERANCE_WORDS: usize = 8;
pub const VOCAB_MIN_COUNT: u64 = 2;
pub const EMBEDDING_DIM: usize = 300;

pub const CLASS_WEIGHT_POWER: f64 = 0.5;
pub const FINETUNE_LEARNING_RATE: f64 = 2e-4;
/// Better-performing rate for large multi-label-resolved corpora.
pub const FINETUNE_LEARNING_RATE_LOW: f64 = 5e-5;
pub const FINETUNE_DECAY: f64 = 0.75;
pub const FINETUNE_PATIENCE: usize = 6;
/// Gentler schedule for datasets with very few conversations.
pub const FINETUNE_DECAY_SCARCE: f64 = 0.95;
pub const FINETUNE_PATIENCE_SCARCE: usize = 10;
pub const FINETUNE_REPEATS: usize = 5;
pub const FINETUNE_MAX_EPOCHS: usize = 40;
pub const ERC_VOCAB_MIN_COUNT: u64 = 1;
