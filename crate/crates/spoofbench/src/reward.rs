//! Surrogate distributions, capacity-aware token rewards, and the
//! sigmoid-scaled semantic reward with group normalization.
//!
//! The token reward for a sampled token is `r_t = c_t * (log p_wm - log p_h)`
//! where both surrogate probabilities come from the same reference model
//! conditioned on the original text and on its watermarked rewrite, and
//! `c_t` is the off-mode mass of the human-conditioned distribution.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::capacity::capacity_mass;
use crate::error::{Error, Result};
use crate::hashing::HashChain;
use crate::toylm::{make_rewrite_prompt, Token, TokenSeq, ToyLM};

// ---------------------------------------------------------------------------
// Surrogate pair
// ---------------------------------------------------------------------------

/// The two conditioning contexts that approximate the human-like and
/// watermarked next-token laws for one training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurrogatePair {
    /// Prompt digest of the original text.
    pub human_ctx: u64,
    /// Prompt digest of the watermarked rewrite.
    pub wm_ctx: u64,
}

impl SurrogatePair {
    pub fn from_pair(human: &TokenSeq, watermarked: &TokenSeq) -> Result<Self> {
        Ok(SurrogatePair {
            human_ctx: make_rewrite_prompt(&human.tokens)?,
            wm_ctx: make_rewrite_prompt(&watermarked.tokens)?,
        })
    }
}

/// Which per-position weight multiplies the log-likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CapacityWeight {
    /// Off-mode mass `1 - p_max` of the human-conditioned distribution.
    #[default]
    OneMinusPmax,
    /// Constant 1.
    Uniform,
    /// Reverse weight `p_max`.
    Pmax,
}

impl CapacityWeight {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one-minus-pmax" | "1-pmax" => Ok(CapacityWeight::OneMinusPmax),
            "uniform" => Ok(CapacityWeight::Uniform),
            "pmax" => Ok(CapacityWeight::Pmax),
            other => Err(Error::Config(format!("unknown capacity weight {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CapacityWeight::OneMinusPmax => "one-minus-pmax",
            CapacityWeight::Uniform => "uniform",
            CapacityWeight::Pmax => "pmax",
        }
    }
}

// ---------------------------------------------------------------------------
// Reward breakdown
// ---------------------------------------------------------------------------

/// Per-token and per-rollout reward components for one rollout.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RewardBreakdown {
    /// Per-position weight (capacity mass under the default variant).
    pub c: Vec<f64>,
    /// Per-position log-likelihood ratio `log p_wm - log p_h`, nats.
    pub llr: Vec<f64>,
    /// Per-position reward `c_t * llr_t`.
    pub r: Vec<f64>,
    /// Similarity of the rollout to the human reference.
    pub sem_human: f64,
    /// Similarity of the rollout to the watermarked reference.
    pub sem_wm: f64,
    /// Sigmoid-scaled semantic reward in (-1, 1).
    pub a: f64,
    /// Group-normalized advantage.
    pub a_hat: f64,
}

/// Per-token reward `c * (logp_wm - logp_h)`.
pub fn token_reward(c: f64, logp_wm: f64, logp_h: f64) -> f64 {
    c * (logp_wm - logp_h)
}

/// Token-level reward components for a rollout under a surrogate pair.
///
/// For each position the reference model is queried under both conditioning
/// contexts with the rollout's own prefix; the weight comes from the
/// human-conditioned distribution.
pub fn rollout_token_rewards(
    ref_lm: &ToyLM,
    pair: &SurrogatePair,
    rollout: &[Token],
    weight: CapacityWeight,
) -> RewardBreakdown {
    let mut out = RewardBreakdown {
        c: Vec::with_capacity(rollout.len()),
        llr: Vec::with_capacity(rollout.len()),
        r: Vec::with_capacity(rollout.len()),
        ..RewardBreakdown::default()
    };
    for t in 0..rollout.len() {
        let ctx_h = ref_lm.ctx_at(pair.human_ctx, rollout, t);
        let ctx_wm = ref_lm.ctx_at(pair.wm_ctx, rollout, t);
        let p_h = ref_lm.next_dist(&ctx_h);
        let p_wm = ref_lm.next_dist(&ctx_wm);
        let cap = capacity_mass(&p_h);
        let c = match weight {
            CapacityWeight::OneMinusPmax => cap,
            CapacityWeight::Uniform => 1.0,
            CapacityWeight::Pmax => 1.0 - cap,
        };
        let x = rollout[t] as usize;
        let llr = p_wm.get(x).ln() - p_h.get(x).ln();
        out.c.push(c);
        out.llr.push(llr);
        out.r.push(token_reward(c, p_wm.get(x).ln(), p_h.get(x).ln()));
    }
    out
}

// ---------------------------------------------------------------------------
// Semantic scoring
// ---------------------------------------------------------------------------

/// Similarity scorer over token sequences, in [0, 1], symmetric, and equal
/// to 1 on identical inputs.
pub trait SemanticScorer {
    fn score(&self, a: &[Token], b: &[Token]) -> Result<f64>;
}

/// Cosine similarity of hashed-bigram count vectors.
///
/// The bigram stream is prefixed with a start marker so length-1 sequences
/// still produce one bigram. Bigrams are hashed to 64-bit keys; counts live
/// in a sparse map, so collisions are negligible.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedBigramCosine;

const BIGRAM_START: u64 = u64::MAX;

fn bigram_counts(tokens: &[Token]) -> HashMap<u64, f64> {
    let mut counts: HashMap<u64, f64> = HashMap::new();
    let mut prev = BIGRAM_START;
    for &t in tokens {
        let key = HashChain::new(0xb16_9a4).push(prev).push(t as u64).finish();
        *counts.entry(key).or_insert(0.0) += 1.0;
        prev = t as u64;
    }
    counts
}

impl SemanticScorer for HashedBigramCosine {
    fn score(&self, a: &[Token], b: &[Token]) -> Result<f64> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptySequence);
        }
        let ca = bigram_counts(a);
        let cb = bigram_counts(b);
        let dot: f64 = ca
            .iter()
            .filter_map(|(k, va)| cb.get(k).map(|vb| va * vb))
            .sum();
        let na: f64 = ca.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = cb.values().map(|v| v * v).sum::<f64>().sqrt();
        Ok((dot / (na * nb)).clamp(0.0, 1.0))
    }
}

/// Jaccard overlap of token sets; drop-in alternative scorer.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenJaccard;

impl SemanticScorer for TokenJaccard {
    fn score(&self, a: &[Token], b: &[Token]) -> Result<f64> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptySequence);
        }
        let sa: std::collections::HashSet<Token> = a.iter().copied().collect();
        let sb: std::collections::HashSet<Token> = b.iter().copied().collect();
        let inter = sa.intersection(&sb).count() as f64;
        let union = sa.union(&sb).count() as f64;
        Ok(inter / union)
    }
}

/// Convenience wrapper matching the operation signature.
pub fn semantic_score<S: SemanticScorer>(scorer: &S, a: &[Token], b: &[Token]) -> Result<f64> {
    scorer.score(a, b)
}

// ---------------------------------------------------------------------------
// Sigmoid scaling, combination, group normalization
// ---------------------------------------------------------------------------

/// Sigmoid-scaled semantic reward.
///
/// `x = log(0.975/0.025) * (s - 0.85) / 0.15`, `A = 2 / (1 + e^{-x}) - 1`.
/// Strictly increasing, zero at 0.85, and maps [0.7, 1.0] onto
/// [-0.95, 0.95].
pub fn sigmoid_reward(s: f64) -> f64 {
    let x = (0.975f64 / 0.025).ln() * (s - 0.85) / 0.15;
    2.0 / (1.0 + (-x).exp()) - 1.0
}

/// How the two per-reference similarities combine into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SemanticVariant {
    #[default]
    Min,
    Avg,
    Hum,
    Wm,
}

impl SemanticVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(SemanticVariant::Min),
            "avg" => Ok(SemanticVariant::Avg),
            "hum" => Ok(SemanticVariant::Hum),
            "wm" => Ok(SemanticVariant::Wm),
            other => Err(Error::Config(format!("unknown semantic variant {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SemanticVariant::Min => "min",
            SemanticVariant::Avg => "avg",
            SemanticVariant::Hum => "hum",
            SemanticVariant::Wm => "wm",
        }
    }
}

/// Combine similarities to the human text and the watermarked rewrite.
pub fn combine_semantic(s_human: f64, s_wm: f64, variant: SemanticVariant) -> f64 {
    match variant {
        SemanticVariant::Min => s_human.min(s_wm),
        SemanticVariant::Avg => 0.5 * (s_human + s_wm),
        SemanticVariant::Hum => s_human,
        SemanticVariant::Wm => s_wm,
    }
}

/// Group-normalized advantages `(A_i - mean) / (std + 1e-6)` using the
/// population standard deviation.
pub fn normalize_group(a: &[f64]) -> Result<Vec<f64>> {
    if a.len() < 2 {
        return Err(Error::GroupTooSmall(a.len()));
    }
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-6;
    Ok(a.iter().map(|x| (x - mean) / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::Sampler;
    use proptest::prelude::*;

    #[test]
    fn token_reward_examples() {
        assert_eq!(token_reward(0.5, 0.1f64.ln(), 0.1f64.ln()), 0.0);
        assert_eq!(token_reward(0.0, 0.3f64.ln(), 0.1f64.ln()), 0.0);
        let r = token_reward(0.5, 0.2f64.ln(), 0.1f64.ln());
        assert!((r - 0.5 * 2f64.ln()).abs() < 1e-12, "r = {r}");
        assert!((r - 0.346574).abs() < 1e-6);
    }

    #[test]
    fn identical_contexts_zero_reward() {
        let lm = ToyLM::default();
        let pair = SurrogatePair { human_ctx: 77, wm_ctx: 77 };
        let rollout = lm.sample_sequence(5, 30, 1, Sampler::Categorical).unwrap().seq;
        let b = rollout_token_rewards(&lm, &pair, &rollout.tokens, CapacityWeight::OneMinusPmax);
        assert!(b.r.iter().all(|&r| r == 0.0));
        assert!(b.llr.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn rollout_rewards_replay_bit_exact() {
        let lm = ToyLM::default();
        let pair = SurrogatePair { human_ctx: 1, wm_ctx: 2 };
        let rollout = lm.sample_sequence(3, 25, 9, Sampler::Categorical).unwrap().seq;
        let a = rollout_token_rewards(&lm, &pair, &rollout.tokens, CapacityWeight::OneMinusPmax);
        let b = rollout_token_rewards(&lm, &pair, &rollout.tokens, CapacityWeight::OneMinusPmax);
        assert_eq!(a.r, b.r);
        assert_eq!(a.c, b.c);
    }

    #[test]
    fn capacity_weight_variants() {
        let lm = ToyLM::default();
        let pair = SurrogatePair { human_ctx: 1, wm_ctx: 2 };
        let rollout = lm.sample_sequence(3, 10, 9, Sampler::Categorical).unwrap().seq;
        let base = rollout_token_rewards(&lm, &pair, &rollout.tokens, CapacityWeight::OneMinusPmax);
        let unif = rollout_token_rewards(&lm, &pair, &rollout.tokens, CapacityWeight::Uniform);
        let pmax = rollout_token_rewards(&lm, &pair, &rollout.tokens, CapacityWeight::Pmax);
        for t in 0..10 {
            assert_eq!(unif.c[t], 1.0);
            assert!((pmax.c[t] - (1.0 - base.c[t])).abs() < 1e-15);
            assert_eq!(unif.r[t], unif.llr[t]);
        }
    }

    #[test]
    fn semantic_score_examples() {
        let s = HashedBigramCosine;
        let a = vec![1u32, 2, 3, 4];
        assert_eq!(s.score(&a, &a).unwrap(), 1.0);

        // Disjoint-token sequences share no bigrams.
        let b = vec![10u32, 11, 12, 13];
        assert_eq!(s.score(&a, &b).unwrap(), 0.0);

        assert!(s.score(&a, &[]).is_err());
    }

    #[test]
    fn semantic_score_shared_bigram_arithmetic() {
        // a = [1,2,5], b = [7,1,2]: the only shared bigram is (1,2).
        // a's bigrams: (start,1),(1,2),(2,5); b's: (start,7),(7,1),(1,2).
        // cosine = 1 / (sqrt(3) * sqrt(3)) = 1/3.
        let s = HashedBigramCosine;
        let got = s.score(&[1, 2, 5], &[7, 1, 2]).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12, "cosine {got}");
    }

    proptest! {
        #[test]
        fn semantic_score_symmetric(a in proptest::collection::vec(0u32..64, 1..30),
                                    b in proptest::collection::vec(0u32..64, 1..30)) {
            let s = HashedBigramCosine;
            let ab = s.score(&a, &b).unwrap();
            let ba = s.score(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((s.score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn min_variant_is_lower_bound(s1 in 0.0f64..1.0, s2 in 0.0f64..1.0) {
            let min = combine_semantic(s1, s2, SemanticVariant::Min);
            for v in [SemanticVariant::Avg, SemanticVariant::Hum, SemanticVariant::Wm] {
                prop_assert!(min <= combine_semantic(s1, s2, v) + 1e-15);
            }
        }

        #[test]
        fn normalize_group_shift_invariant(shift in -5.0f64..5.0) {
            let a = [0.1, -0.4, 0.9, 0.3];
            let shifted: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let na = normalize_group(&a).unwrap();
            let ns = normalize_group(&shifted).unwrap();
            for (x, y) in na.iter().zip(&ns) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let mean: f64 = na.iter().sum::<f64>() / na.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_reward_pinned_values() {
        assert!(sigmoid_reward(0.85).abs() < 1e-12);
        assert!((sigmoid_reward(1.0) - 0.95).abs() < 1e-12);
        assert!((sigmoid_reward(0.7) + 0.95).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_reward_strictly_increasing() {
        let mut prev = sigmoid_reward(0.0);
        for i in 1..=100 {
            let cur = sigmoid_reward(i as f64 / 100.0);
            assert!(cur > prev);
            prev = cur;
        }
        assert!(prev < 1.0 && sigmoid_reward(0.0) > -1.0);
    }

    #[test]
    fn combine_semantic_examples() {
        assert_eq!(combine_semantic(0.9, 0.6, SemanticVariant::Min), 0.6);
        assert_eq!(combine_semantic(0.9, 0.6, SemanticVariant::Avg), 0.75);
        assert_eq!(combine_semantic(0.9, 0.6, SemanticVariant::Hum), 0.9);
        assert_eq!(combine_semantic(0.9, 0.6, SemanticVariant::Wm), 0.6);
    }

    #[test]
    fn normalize_group_examples() {
        let two = normalize_group(&[1.0, -1.0]).unwrap();
        assert!((two[0] - 1.0 / (1.0 + 1e-6)).abs() < 1e-12);
        assert!((two[1] + 1.0 / (1.0 + 1e-6)).abs() < 1e-12);

        let flat = normalize_group(&[0.4, 0.4, 0.4]).unwrap();
        assert!(flat.iter().all(|&x| x.abs() < 1e-9), "flat {flat:?}");

        // std of [2, 0, -2] is sqrt(8/3).
        let three = normalize_group(&[2.0, 0.0, -2.0]).unwrap();
        let expect = 2.0 / ((8f64 / 3.0).sqrt() + 1e-6);
        assert!((three[0] - expect).abs() < 1e-9);
        assert!((three[0] - 1.224744).abs() < 1e-5);
        assert_eq!(three[1], 0.0);
        assert!((three[2] + expect).abs() < 1e-9);

        assert!(matches!(normalize_group(&[1.0]), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn jaccard_scorer_drop_in() {
        let s = TokenJaccard;
        assert_eq!(s.score(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(s.score(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert!((s.score(&[1, 2], &[2, 3]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }
}
