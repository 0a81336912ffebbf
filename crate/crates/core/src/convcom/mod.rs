//! The conversation-completion task: candidate construction with negative
//! sampling, the matching score and its contrastive loss, recall@k, and the
//! pre-training loop.

pub mod train;

pub use train::{evaluate_pretrain, pretrain, EpochRecord, PretrainOutcome, RecallReport};

use crate::corpus::{sample_noise_refs, Conversation, NoiseRef};
use crate::defaults;
use crate::error::{Error, Result};
use crate::kernel::{sigmoid, SeedRng, Tape, Tensor, Var};

/// One completion question: a conversation with a masked position and an
/// ordered candidate set whose first entry is the true utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvComInstance {
    pub conversation_id: u64,
    /// 1-based masked position.
    pub position: usize,
    /// Token-id sequences; index 0 is the target, the rest are noise.
    pub candidates: Vec<Vec<u32>>,
}

/// Scored candidate list with binary relevance labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Pre-training schedule; defaults carry the standard values used
/// throughout (initial rate 2e-4, decay 0.75 on validation plateau,
/// dropout 0.5, clip norm 5, at most 20 epochs, patience 3, 10 noise
/// utterances per conversation). Validation is monitored on recall@1 over
/// 11 candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSchedule {
    pub learning_rate: f64,
    pub decay: f64,
    pub dropout: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub noise_count: usize,
}

impl Default for PretrainSchedule {
    fn default() -> Self {
        PretrainSchedule {
            learning_rate: defaults::PRETRAIN_LEARNING_RATE,
            decay: defaults::LEARNING_RATE_DECAY,
            dropout: defaults::DROPOUT_RATE,
            clip_norm: defaults::CLIP_NORM,
            max_epochs: defaults::PRETRAIN_MAX_EPOCHS,
            patience: defaults::PRETRAIN_PATIENCE,
            noise_count: defaults::NOISE_PER_CONVERSATION,
        }
    }
}

impl PretrainSchedule {
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
        if self.patience == 0 || self.patience > self.max_epochs.max(1) {
            return bad(format!(
                "patience {} must be in 1..=max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if self.noise_count == 0 {
            return bad("noise count must be at least 1".into());
        }
        Ok(())
    }
}

/// Noise utterances for one conversation: uniform draw from the other
/// conversations of the split. One shared set serves every target position
/// of the conversation.
pub fn sample_negatives(
    split: &[Conversation],
    conversation_id: u64,
    count: usize,
    rng: &mut SeedRng,
) -> Result<Vec<NoiseRef>> {
    sample_noise_refs(split, conversation_id, count, rng)
}

/// Matching score between a contextual embedding and a candidate
/// embedding: logistic of their inner product, in (0, 1).
pub fn match_score(context: &Tensor, candidate: &Tensor) -> Result<f64> {
    if context.shape() != candidate.shape() || !context.is_vector() {
        return Err(Error::ShapeMismatch {
            op: "match_score",
            left: format!("{:?}", context.shape()),
            right: format!("{:?}", candidate.shape()),
        });
    }
    let dot: f64 = context
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(a, b)| a * b)
        .sum();
    Ok(sigmoid(dot))
}

/// Contrastive completion loss for one masked position over the tape:
/// -[log s(ctx, target) + sum over noise of log s(ctx, -noise)], natural
/// logarithm. `candidates[0]` is the target. Strictly positive for finite
/// inputs.
pub fn convcom_loss(tape: &mut Tape, context: Var, candidates: &[Var]) -> Result<Var> {
    if candidates.len() < 2 {
        return Err(Error::InvalidConfig {
            reason: format!(
                "completion loss needs a target plus at least one noise candidate, got {}",
                candidates.len()
            ),
        });
    }
    let mut terms = Vec::with_capacity(candidates.len());
    let target_dot = tape.dot(context, candidates[0])?;
    terms.push(tape.log_sigmoid(target_dot));
    for &noise in &candidates[1..] {
        let d = tape.dot(context, noise)?;
        let neg = tape.neg(d);
        terms.push(tape.log_sigmoid(neg));
    }
    let total = tape.sum(&terms)?;
    Ok(tape.neg(total))
}

/// Fraction of the positives that land in the top `k` by score, ties broken
/// toward the lower candidate index.
pub fn recall_at_k(result: &RankingResult, k: usize) -> Result<f64> {
    let n = result.scores.len();
    if n != result.labels.len() {
        return Err(Error::ShapeMismatch {
            op: "recall_at_k",
            left: format!("[{}]", result.scores.len()),
            right: format!("[{}]", result.labels.len()),
        });
    }
    if k == 0 || k > n {
        return Err(Error::InvalidCutoff { k, n });
    }
    let positives = result.labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositiveLabels);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        result.scores[b]
            .partial_cmp(&result.scores[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    let hits = order[..k].iter().filter(|&&i| result.labels[i]).count();
    Ok(hits as f64 / positives as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use proptest::prelude::*;

    fn conv(id: u64, texts: &[&str]) -> Conversation {
        Conversation {
            id,
            utterances: texts.iter().map(|t| Utterance::from_text(*t)).collect(),
        }
    }

    #[test]
    fn negatives_never_come_from_the_excluded_conversation() {
        let split = vec![conv(0, &["a", "b", "c"]), conv(1, &["d", "e"])];
        let mut rng = SeedRng::new(3);
        for _ in 0..50 {
            let picks = sample_negatives(&split, 0, 2, &mut rng).unwrap();
            assert!(picks.iter().all(|&(id, _)| id == 1));
        }
    }

    #[test]
    fn sampling_is_reproducible_and_distinct() {
        let split = vec![
            conv(0, &["a", "b", "c", "d", "e", "f"]),
            conv(1, &["g", "h", "i", "j", "k", "l"]),
            conv(2, &["m", "n", "o", "p", "q", "r"]),
        ];
        let mut r1 = SeedRng::new(11);
        let mut r2 = SeedRng::new(11);
        let a = sample_negatives(&split, 1, 10, &mut r1).unwrap();
        let b = sample_negatives(&split, 1, 10, &mut r2).unwrap();
        assert_eq!(a, b);
        let mut dedup = a.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 10, "draws are distinct");
    }

    #[test]
    fn single_conversation_split_cannot_be_sampled() {
        let split = vec![conv(0, &["a"])];
        let mut rng = SeedRng::new(1);
        assert!(sample_negatives(&split, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_uniform_over_the_pool() {
        // Chi-square style bound: every pool utterance within 3 standard
        // deviations of its expected draw count.
        let split = vec![
            conv(0, &["a", "b"]),
            conv(1, &["c", "d", "e"]),
            conv(2, &["f", "g"]),
        ];
        let mut rng = SeedRng::new(40);
        let draws = 10_000usize;
        let mut counts: std::collections::HashMap<NoiseRef, usize> = Default::default();
        for _ in 0..draws {
            let picks = sample_negatives(&split, 0, 1, &mut rng).unwrap();
            *counts.entry(picks[0]).or_insert(0) += 1;
        }
        let pool = 5.0; // utterances outside conversation 0
        let expected = draws as f64 / pool;
        let sd = (draws as f64 * (1.0 / pool) * (1.0 - 1.0 / pool)).sqrt();
        assert_eq!(counts.len(), 5);
        for (&key, &count) in &counts {
            assert!(
                (count as f64 - expected).abs() <= 3.0 * sd,
                "{key:?}: {count} vs {expected}"
            );
        }
    }

    #[test]
    fn match_score_trivials() {
        let a = Tensor::vector(vec![1.0, 0.0]);
        let b = Tensor::vector(vec![0.0, 1.0]);
        assert_eq!(match_score(&a, &b).unwrap(), 0.5);
        let c = Tensor::vector(vec![1.0, 1.0]);
        let d = Tensor::vector(vec![0.5, 0.5]);
        assert!((match_score(&c, &d).unwrap() - 0.7310585786300049).abs() < 1e-15);
        let bad = Tensor::vector(vec![1.0]);
        assert!(match_score(&a, &bad).is_err());
    }

    #[test]
    fn opposite_candidates_score_to_one() {
        let mut rng = SeedRng::new(5);
        for _ in 0..20 {
            let u: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let v: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let pos = match_score(&Tensor::vector(u.clone()), &Tensor::vector(v.clone())).unwrap();
            let neg = match_score(
                &Tensor::vector(u),
                &Tensor::vector(v.iter().map(|x| -x).collect()),
            )
            .unwrap();
            assert!((pos + neg - 1.0).abs() < 1e-12);
        }
    }

    fn loss_value(context: Vec<f64>, candidates: Vec<Vec<f64>>) -> f64 {
        let mut tape = Tape::new();
        let ctx = tape.leaf(Tensor::vector(context));
        let cands: Vec<Var> = candidates
            .into_iter()
            .map(|c| tape.leaf(Tensor::vector(c)))
            .collect();
        let loss = convcom_loss(&mut tape, ctx, &cands).unwrap();
        tape.value(loss).item()
    }

    #[test]
    fn all_zero_dots_cost_eleven_log_two() {
        let context = vec![0.0, 0.0];
        let candidates = vec![vec![1.0, 0.0]; 11];
        let loss = loss_value(context, candidates);
        assert!((loss - 11.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn perfectly_separated_candidates_cost_nothing() {
        // Huge aligned target dot, huge anti-aligned noise dots.
        let context = vec![10.0, 0.0];
        let mut candidates = vec![vec![10.0, 0.0]];
        candidates.extend(vec![vec![-10.0, 0.0]; 10]);
        let loss = loss_value(context, candidates);
        assert!(loss > 0.0, "loss stays strictly positive for finite inputs");
        assert!(loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn loss_matches_per_term_oracle() {
        let mut rng = SeedRng::new(23);
        let dim = 5;
        let context: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let candidates: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut expected = -sigmoid(dot(&context, &candidates[0])).ln();
        for noise in &candidates[1..] {
            expected -= sigmoid(-dot(&context, noise)).ln();
        }
        let got = loss_value(context, candidates);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn loss_is_monotone_in_the_dots() {
        let base = loss_value(vec![1.0, 0.0], vec![vec![0.3, 0.0], vec![0.2, 0.0]]);
        let better_target = loss_value(vec![1.0, 0.0], vec![vec![0.4, 0.0], vec![0.2, 0.0]]);
        let worse_noise = loss_value(vec![1.0, 0.0], vec![vec![0.3, 0.0], vec![0.1, 0.0]]);
        assert!(better_target < base);
        assert!(worse_noise < base);
    }

    #[test]
    fn recall_trivial_cases() {
        let top = RankingResult {
            scores: vec![0.9, 0.5, 0.4, 0.3, 0.2],
            labels: vec![true, false, false, false, false],
        };
        assert_eq!(recall_at_k(&top, 1).unwrap(), 1.0);

        let third = RankingResult {
            scores: vec![0.5, 0.8, 0.9, 0.2, 0.1, 0.05, 0.04, 0.03, 0.02, 0.01, 0.0],
            labels: vec![true, false, false, false, false, false, false, false, false, false, false],
        };
        assert_eq!(recall_at_k(&third, 2).unwrap(), 0.0);
        assert_eq!(recall_at_k(&third, 3).unwrap(), 1.0);
    }

    #[test]
    fn recall_requires_a_positive() {
        let r = RankingResult {
            scores: vec![0.1, 0.2],
            labels: vec![false, false],
        };
        assert!(matches!(recall_at_k(&r, 1), Err(Error::NoPositiveLabels)));
    }

    #[test]
    fn recall_ties_break_by_candidate_index() {
        let r = RankingResult {
            scores: vec![0.5, 0.5, 0.5],
            labels: vec![false, true, false],
        };
        // Order under ties: 0, 1, 2. The positive sits second.
        assert_eq!(recall_at_k(&r, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&r, 2).unwrap(), 1.0);
    }

    #[test]
    fn mean_recall_under_random_scores_matches_rank_expectation() {
        // Single positive at uniform-random rank: E[recall@k] = k / n.
        let mut rng = SeedRng::new(77);
        let n = 5;
        let k = 1;
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let pos = rng.below(n);
            let labels: Vec<bool> = (0..n).map(|i| i == pos).collect();
            total += recall_at_k(&RankingResult { scores, labels }, k).unwrap();
        }
        let mean = total / trials as f64;
        let want = k as f64 / n as f64;
        assert!((mean - want).abs() < 0.02 * 1.0, "mean {mean} vs {want}");
    }

    proptest! {
        #[test]
        fn recall_is_scale_invariant(
            scores in proptest::collection::vec(0.01f64..10.0, 4..12),
            pos in 0usize..4,
            scale in 0.01f64..100.0,
            k in 1usize..4,
        ) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| i == pos).collect();
            let base = RankingResult { scores: scores.clone(), labels: labels.clone() };
            let scaled = RankingResult {
                scores: scores.iter().map(|s| s * scale).collect(),
                labels,
            };
            prop_assert_eq!(recall_at_k(&base, k).unwrap(), recall_at_k(&scaled, k).unwrap());
        }

        #[test]
        fn recall_is_monotone_in_k_and_total_at_full_depth(
            scores in proptest::collection::vec(0.0f64..1.0, 3..10),
            pos in 0usize..3,
        ) {
            let labels: Vec<bool> = (0..scores.len()).map(|i| i == pos).collect();
            let r = RankingResult { scores, labels };
            let n = r.scores.len();
            let mut prev = 0.0;
            for k in 1..=n {
                let v = recall_at_k(&r, k).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
            prop_assert_eq!(recall_at_k(&r, n).unwrap(), 1.0);
        }
    }
}
