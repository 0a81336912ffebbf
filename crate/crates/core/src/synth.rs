//! Synthetic topical conversations for desk-scale experiments.
//!
//! A fixed world of topic word clusters plus a shared common pool drives
//! both generators: unlabeled conversations for pre-training (utterances of
//! one conversation share a topic, so a masked utterance is recoverable
//! from its neighbours) and labeled conversations for classification
//! (classes own topic clusters in a controllable imbalance; an utterance's
//! label comes from the dominant topic of its surrounding window). Both
//! datasets draw words from the same vocabulary, which is what makes
//! encoder transfer between them meaningful.

use crate::corpus::{
    build_vocab, preselect_noise, split_corpus, tokenize_conversations, Conversation, CorpusRules,
    ErcRecord, ErcUtteranceRecord, PreparedCorpus, PreparedSplit, Utterance,
};
use crate::error::Result;
use crate::kernel::SeedRng;

/// Shared vocabulary structure for both generators.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicalWorld {
    pub topics: usize,
    pub words_per_topic: usize,
    pub common_words: usize,
    /// Probability that a token comes from the utterance's topic cluster
    /// rather than the common pool.
    pub topic_word_prob: f64,
}

impl Default for TopicalWorld {
    fn default() -> Self {
        TopicalWorld {
            topics: 15,
            words_per_topic: 60,
            common_words: 100,
            topic_word_prob: 0.9,
        }
    }
}

impl TopicalWorld {
    fn topic_word(&self, topic: usize, index: usize) -> String {
        format!("t{topic}w{index}")
    }

    fn common_word(&self, index: usize) -> String {
        format!("c{index}")
    }

    /// One utterance's text for a topic.
    fn utterance(&self, topic: usize, tokens: usize, rng: &mut SeedRng) -> String {
        let mut words = Vec::with_capacity(tokens);
        for _ in 0..tokens {
            if rng.bool_with(self.topic_word_prob) {
                words.push(self.topic_word(topic, rng.below(self.words_per_topic)));
            } else {
                words.push(self.common_word(rng.below(self.common_words)));
            }
        }
        words.join(" ")
    }
}

/// Configuration for the unlabeled pre-training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicalCorpusConfig {
    pub world: TopicalWorld,
    pub conversations: usize,
    pub utterances_low: usize,
    pub utterances_high: usize,
    pub tokens_low: usize,
    pub tokens_high: usize,
    pub rules: CorpusRules,
}

impl Default for TopicalCorpusConfig {
    fn default() -> Self {
        TopicalCorpusConfig {
            world: TopicalWorld::default(),
            conversations: 500,
            utterances_low: 16,
            utterances_high: 24,
            tokens_low: 4,
            tokens_high: 8,
            rules: CorpusRules {
                vocab_min_count: 1,
                // A larger validation share than the ingestion default:
                // the plateau detector reads this split every epoch, and
                // 25 conversations make it too noisy to steer the decay.
                train_ratio: 0.85,
                validation_ratio: 0.10,
                ..CorpusRules::default()
            },
        }
    }
}

/// Generate a prepared corpus directly (the subtitle construction rules do
/// not apply to generated text; splitting, vocabulary building and noise
/// pre-selection run through the standard pipeline pieces).
pub fn topical_corpus(cfg: &TopicalCorpusConfig, seed: u64) -> Result<PreparedCorpus> {
    let root = SeedRng::new(seed);
    let mut gen_rng = root.child("generate");
    let mut conversations = Vec::with_capacity(cfg.conversations);
    for id in 0..cfg.conversations as u64 {
        let topic = gen_rng.below(cfg.world.topics);
        let len = gen_rng.range_inclusive(cfg.utterances_low, cfg.utterances_high);
        let utterances = (0..len)
            .map(|_| {
                let tokens = gen_rng.range_inclusive(cfg.tokens_low, cfg.tokens_high);
                Utterance::from_text(cfg.world.utterance(topic, tokens, &mut gen_rng))
            })
            .collect();
        conversations.push(Conversation { id, utterances });
    }

    let mut split_rng = root.child("split");
    let (mut train, mut validation, mut test) =
        split_corpus(conversations, &cfg.rules, &mut split_rng)?;
    let vocab = build_vocab(&train, cfg.rules.vocab_min_count);
    tokenize_conversations(&mut train, &vocab);
    tokenize_conversations(&mut validation, &vocab);
    tokenize_conversations(&mut test, &vocab);

    let mut noise_rng = root.child("noise");
    let validation_noise =
        preselect_noise(&validation, cfg.rules.noise_per_conversation, &mut noise_rng)?;
    let test_noise = preselect_noise(&test, cfg.rules.noise_per_conversation, &mut noise_rng)?;

    Ok(PreparedCorpus {
        train: PreparedSplit::from_conversations(train),
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
        rules: cfg.rules.clone(),
    })
}

/// Configuration for the labeled classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticErcConfig {
    pub world: TopicalWorld,
    pub conversations: usize,
    pub utterances_low: usize,
    pub utterances_high: usize,
    pub tokens_low: usize,
    pub tokens_high: usize,
    /// Class names, majority first.
    pub class_names: Vec<String>,
    /// How many topic clusters each class owns; the sum must not exceed
    /// `world.topics`. Uneven counts create class imbalance.
    pub class_topic_counts: Vec<usize>,
    /// Probability that an utterance switches away from the previous
    /// utterance's topic.
    pub switch_prob: f64,
}

impl Default for SyntheticErcConfig {
    fn default() -> Self {
        SyntheticErcConfig {
            world: TopicalWorld::default(),
            conversations: 200,
            utterances_low: 8,
            utterances_high: 12,
            tokens_low: 3,
            tokens_high: 6,
            class_names: vec![
                "neutral".into(),
                "joy".into(),
                "sadness".into(),
                "anger".into(),
            ],
            class_topic_counts: vec![8, 4, 2, 1],
            switch_prob: 0.15,
        }
    }
}

impl SyntheticErcConfig {
    /// Class owning a topic (topics are assigned to classes in order).
    pub fn class_of_topic(&self, topic: usize) -> usize {
        let mut cursor = 0usize;
        for (class, &count) in self.class_topic_counts.iter().enumerate() {
            cursor += count;
            if topic < cursor {
                return class;
            }
        }
        self.class_topic_counts.len() - 1
    }

    fn usable_topics(&self) -> usize {
        self.class_topic_counts.iter().sum()
    }
}

/// Generate labeled conversations. Every utterance's label is the class of
/// the dominant topic over the window [l-1, l, l+1] (ties resolved toward
/// the utterance's own topic); speakers alternate.
pub fn synthetic_erc_records(cfg: &SyntheticErcConfig, seed: u64) -> Vec<ErcRecord> {
    assert_eq!(cfg.class_names.len(), cfg.class_topic_counts.len());
    assert!(cfg.usable_topics() <= cfg.world.topics);
    let mut rng = SeedRng::new(seed).child("erc");
    let mut records = Vec::with_capacity(cfg.conversations);
    for id in 0..cfg.conversations as u64 {
        let len = rng.range_inclusive(cfg.utterances_low, cfg.utterances_high);
        let mut topics = Vec::with_capacity(len);
        let mut topic = rng.below(cfg.usable_topics());
        for _ in 0..len {
            if !topics.is_empty() && rng.bool_with(cfg.switch_prob) {
                topic = rng.below(cfg.usable_topics());
            }
            topics.push(topic);
        }
        let utterances = (0..len)
            .map(|l| {
                let tokens = rng.range_inclusive(cfg.tokens_low, cfg.tokens_high);
                let text = cfg.world.utterance(topics[l], tokens, &mut rng);
                let label = cfg.class_names[cfg.class_of_topic(window_topic(&topics, l))].clone();
                ErcUtteranceRecord {
                    speaker: Some(if l % 2 == 0 { "sp1".into() } else { "sp2".into() }),
                    text,
                    label: Some(label),
                    labels: None,
                    intensities: None,
                }
            })
            .collect();
        records.push(ErcRecord {
            id: Some(id),
            utterances,
        });
    }
    records
}

/// Dominant topic over positions l-1..=l+1; the utterance's own topic wins
/// unless a neighbour topic strictly outnumbers it.
fn window_topic(topics: &[usize], l: usize) -> usize {
    let lo = l.saturating_sub(1);
    let hi = (l + 1).min(topics.len() - 1);
    let own = topics[l];
    let mut counts: std::collections::HashMap<usize, usize> = Default::default();
    for &t in &topics[lo..=hi] {
        *counts.entry(t).or_insert(0) += 1;
    }
    let own_count = counts[&own];
    counts
        .into_iter()
        .filter(|&(t, c)| t != own && c > own_count)
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(t, _)| t)
        .unwrap_or(own)
}
