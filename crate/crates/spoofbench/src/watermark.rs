//! Keyed watermark generation transforms and detectors.
//!
//! Two families are implemented over the toy LM:
//!
//! - **Logit-based** (KGW, Unigram, SWEET, EWD): a keyed pseudorandom green
//!   subset of the vocabulary is upweighted by `delta` before sampling, and
//!   detection runs a one-sided z-test for green-token overrepresentation.
//!   SWEET gates the bias and the detector on high-entropy positions; EWD
//!   weights the detector by the detector-side entropy of each position.
//! - **Sampling-based** (keyed Gumbel-max): generation consumes keyed
//!   per-token uniforms and picks `argmax log p - log(-log u)`, which leaves
//!   the expected output distribution over keys unchanged. Detection scores
//!   `sum -log(1 - u)` against its exact Gamma null.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::hashing::{unit_open, HashChain};
use crate::toylm::{ProbVec, Token, TokenSeq, ToyLM};

/// Detection significance for the sampling family, chosen to roughly match
/// the stringency of the z > 4 rule (one-sided normal tail ~ 3.2e-5).
pub const SAMPLING_ALPHA: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Keys and configs
// ---------------------------------------------------------------------------

/// Secret key and green-list geometry for the logit family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenKey {
    pub hash_key: u64,
    /// Expected green fraction of the vocabulary.
    pub gamma: f64,
    /// Number of preceding tokens hashed into the green set.
    pub prefix_length: usize,
    /// Ignore the prefix entirely (Unigram-style fixed green set).
    pub global: bool,
}

impl Default for GreenKey {
    fn default() -> Self {
        GreenKey { hash_key: 15485863, gamma: 0.5, prefix_length: 1, global: false }
    }
}

/// Logit bias strength plus the optional entropy gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub delta: f64,
    /// Bias (and detector scoring) applies only above this entropy, in nats.
    pub entropy_threshold: Option<f64>,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig { delta: 2.0, entropy_threshold: None }
    }
}

/// Key for the sampling-based scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingKey {
    pub salt_key: u64,
    /// Context width hashed into the per-token uniforms, clipped to the
    /// available history.
    pub ngram: usize,
}

impl Default for SamplingKey {
    fn default() -> Self {
        SamplingKey { salt_key: 35317, ngram: 8 }
    }
}

/// A watermarking scheme: generation transform plus detection statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WatermarkScheme {
    Kgw { key: GreenKey, bias: BiasConfig },
    Unigram { key: GreenKey, bias: BiasConfig },
    Sweet { key: GreenKey, bias: BiasConfig, z_threshold: f64 },
    Ewd { key: GreenKey, bias: BiasConfig },
    Sampling { key: SamplingKey },
}

impl WatermarkScheme {
    /// KGW at the reference configuration (gamma 0.5, delta 3, z > 4).
    pub fn kgw_default() -> Self {
        WatermarkScheme::Kgw {
            key: GreenKey::default(),
            bias: BiasConfig { delta: 3.0, entropy_threshold: None },
        }
    }

    pub fn unigram_default() -> Self {
        WatermarkScheme::Unigram {
            key: GreenKey { global: true, ..GreenKey::default() },
            bias: BiasConfig { delta: 2.0, entropy_threshold: None },
        }
    }

    pub fn sweet_default() -> Self {
        WatermarkScheme::Sweet {
            key: GreenKey::default(),
            bias: BiasConfig { delta: 2.0, entropy_threshold: Some(0.9) },
            z_threshold: 4.0,
        }
    }

    pub fn ewd_default() -> Self {
        WatermarkScheme::Ewd {
            key: GreenKey::default(),
            bias: BiasConfig { delta: 2.0, entropy_threshold: None },
        }
    }

    pub fn sampling_default() -> Self {
        WatermarkScheme::Sampling { key: SamplingKey::default() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WatermarkScheme::Kgw { .. } => "KGW",
            WatermarkScheme::Unigram { .. } => "Unigram",
            WatermarkScheme::Sweet { .. } => "SWEET",
            WatermarkScheme::Ewd { .. } => "EWD",
            WatermarkScheme::Sampling { .. } => "Sampling",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "KGW" => Ok(Self::kgw_default()),
            "Unigram" => Ok(Self::unigram_default()),
            "SWEET" => Ok(Self::sweet_default()),
            "EWD" => Ok(Self::ewd_default()),
            "Sampling" | "PF" => Ok(Self::sampling_default()),
            other => Err(Error::UnknownScheme(other.into())),
        }
    }
}

// ---------------------------------------------------------------------------
// Detection result
// ---------------------------------------------------------------------------

/// Outcome of running a detector on one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scheme: String,
    /// z-score for the logit family, raw score for the sampling family.
    pub statistic: f64,
    pub pvalue: Option<f64>,
    /// z threshold or significance level, depending on family.
    pub threshold: f64,
    pub flagged: bool,
    /// Scored token count (or total weight mass for weighted tests).
    pub n_effective: f64,
}

// ---------------------------------------------------------------------------
// Green sets and the logit family
// ---------------------------------------------------------------------------

/// Keyed pseudorandom green subset for one generation position.
///
/// Membership of token `x` is decided by hashing (key, window, x) into (0,1)
/// and comparing against `gamma`. Positions whose available prefix is
/// shorter than `prefix_length` are salted with the prompt digest instead of
/// being skipped, so every position of a sequence is scorable.
pub fn green_set(key: &GreenKey, prompt_id: u64, prefix: &[Token], vocab_size: usize) -> Vec<bool> {
    let chain = green_chain(key, prompt_id, prefix);
    (0..vocab_size as Token)
        .map(|x| unit_open(chain.push(x as u64).finish()) < key.gamma)
        .collect()
}

fn green_chain(key: &GreenKey, prompt_id: u64, prefix: &[Token]) -> HashChain {
    let mut chain = HashChain::new(key.hash_key);
    if !key.global {
        if prefix.len() >= key.prefix_length {
            for &t in &prefix[prefix.len() - key.prefix_length..] {
                chain = chain.push(t as u64);
            }
        } else {
            chain = chain.push(prompt_id);
            for &t in prefix {
                chain = chain.push(t as u64);
            }
        }
    }
    chain
}

/// Membership of a single token in the green set; agrees with [`green_set`].
pub fn green_member(key: &GreenKey, prompt_id: u64, prefix: &[Token], token: Token) -> bool {
    unit_open(green_chain(key, prompt_id, prefix).push(token as u64).finish()) < key.gamma
}

/// Reweight a distribution by `exp(delta)` on the green subset.
pub fn apply_logit_bias(dist: &ProbVec, green: &[bool], delta: f64) -> ProbVec {
    let boost = delta.exp();
    let weights: Vec<f64> = dist
        .as_slice()
        .iter()
        .zip(green)
        .map(|(&p, &g)| if g { p * boost } else { p })
        .collect();
    ProbVec::normalized(weights).expect("biased distribution stays valid")
}

/// Shannon entropy of a distribution in nats.
pub fn shannon_entropy(dist: &ProbVec) -> f64 {
    dist.entropy()
}

/// The distribution actually sampled from at one watermarked generation
/// step, given the base model distribution.
pub fn watermarked_dist(
    scheme: &WatermarkScheme,
    base: &ProbVec,
    prompt_id: u64,
    prefix: &[Token],
) -> ProbVec {
    match scheme {
        WatermarkScheme::Kgw { key, bias }
        | WatermarkScheme::Unigram { key, bias }
        | WatermarkScheme::Ewd { key, bias } => {
            let green = green_set(key, prompt_id, prefix, base.len());
            apply_logit_bias(base, &green, bias.delta)
        }
        WatermarkScheme::Sweet { key, bias, .. } => {
            let gate = bias.entropy_threshold.unwrap_or(0.0);
            if shannon_entropy(base) > gate {
                let green = green_set(key, prompt_id, prefix, base.len());
                apply_logit_bias(base, &green, bias.delta)
            } else {
                base.clone()
            }
        }
        WatermarkScheme::Sampling { .. } => base.clone(),
    }
}

/// Draw one watermarked token.
///
/// Logit-family schemes sample from the biased distribution; the sampling
/// scheme is deterministic given the key and context and ignores `rng`.
pub fn watermarked_step<R: Rng>(
    scheme: &WatermarkScheme,
    lm: &ToyLM,
    prompt_id: u64,
    prefix: &[Token],
    rng: &mut R,
) -> Token {
    let ctx = lm.ctx_at(prompt_id, prefix, prefix.len());
    let base = lm.next_dist(&ctx);
    match scheme {
        WatermarkScheme::Sampling { key } => pf_sample(&base, key, prefix),
        _ => watermarked_dist(scheme, &base, prompt_id, prefix).sample(rng),
    }
}

/// Sample a full watermarked sequence.
pub fn sample_watermarked_sequence(
    lm: &ToyLM,
    scheme: &WatermarkScheme,
    prompt_id: u64,
    length: usize,
    rng_seed: u64,
) -> Result<TokenSeq> {
    if length == 0 {
        return Err(Error::EmptyGeneration);
    }
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(rng_seed);
    let mut tokens = Vec::with_capacity(length);
    for _ in 0..length {
        let tok = watermarked_step(scheme, lm, prompt_id, &tokens, &mut rng);
        tokens.push(tok);
    }
    Ok(TokenSeq::new(prompt_id, tokens))
}

/// One-sided z-test for green-token overrepresentation.
///
/// Unweighted: `z = (k - gamma n) / sqrt(n gamma (1-gamma))`. With weights:
/// `z = (sum_green w - gamma sum w) / sqrt(gamma (1-gamma) sum w^2)`, which
/// reduces to the unweighted statistic for any constant weight vector.
pub fn detect_z(
    seq: &TokenSeq,
    key: &GreenKey,
    z_threshold: f64,
    weights: Option<&[f64]>,
) -> Detection {
    let n = seq.len();
    let gamma = key.gamma;
    let (mut green_w, mut sum_w, mut sum_w2) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..n {
        let w = weights.map_or(1.0, |ws| ws[t]);
        if w == 0.0 {
            continue;
        }
        if green_member(key, seq.prompt_id, &seq.tokens[..t], seq.tokens[t]) {
            green_w += w;
        }
        sum_w += w;
        sum_w2 += w * w;
    }
    if sum_w == 0.0 {
        return Detection {
            scheme: String::new(),
            statistic: 0.0,
            pvalue: None,
            threshold: z_threshold,
            flagged: false,
            n_effective: 0.0,
        };
    }
    let z = (green_w - gamma * sum_w) / (gamma * (1.0 - gamma) * sum_w2).sqrt();
    Detection {
        scheme: String::new(),
        statistic: z,
        pvalue: None,
        threshold: z_threshold,
        flagged: z > z_threshold,
        n_effective: sum_w,
    }
}

/// Per-position detector weights for EWD: normalized Shannon entropy of the
/// detector-LM next-token distribution, in [0, 1].
pub fn ewd_weights(detector_lm: &ToyLM, seq: &TokenSeq) -> Vec<f64> {
    let log_v = (detector_lm.vocab_size() as f64).ln();
    (0..seq.len())
        .map(|t| {
            let ctx = detector_lm.ctx_at(seq.prompt_id, &seq.tokens, t);
            detector_lm.next_dist(&ctx).entropy() / log_v
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Sampling family
// ---------------------------------------------------------------------------

fn pf_uniform(key: &SamplingKey, window: &[Token], token: Token) -> f64 {
    let mut chain = HashChain::new(key.salt_key);
    for &t in window {
        chain = chain.push(t as u64);
    }
    unit_open(chain.push(token as u64).finish())
}

fn pf_window<'a>(key: &SamplingKey, prefix: &'a [Token]) -> &'a [Token] {
    &prefix[prefix.len().saturating_sub(key.ngram)..]
}

/// Keyed Gumbel-max selection: `argmax_x log p(x) - log(-log u_x)` where
/// `u_x` is the keyed uniform for token `x` under the current window.
/// Deterministic given (key, window); distortion-free in expectation over
/// keys.
pub fn pf_sample(base: &ProbVec, key: &SamplingKey, prefix: &[Token]) -> Token {
    let window = pf_window(key, prefix);
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for x in 0..base.len() {
        let u = pf_uniform(key, window, x as Token);
        let score = base.get(x).ln() - (-u.ln()).ln();
        if score > best_score {
            best_score = score;
            best = x;
        }
    }
    best as Token
}

/// Exponential-score detector for the sampling family.
///
/// Each scored position contributes `-log(1 - u)` for the uniform attached
/// to the emitted token; under the null the total is Gamma(n, 1), giving an
/// exact p-value via the upper regularized incomplete gamma function.
pub fn detect_sampling(seq: &TokenSeq, key: &SamplingKey) -> Detection {
    let n = seq.len();
    let mut score = 0.0;
    for t in 0..n {
        let window = pf_window(key, &seq.tokens[..t]);
        let u = pf_uniform(key, window, seq.tokens[t]);
        score += -(1.0 - u).ln();
    }
    let pvalue = if n == 0 { 1.0 } else { gamma_ur(n as f64, score) };
    Detection {
        scheme: String::new(),
        statistic: score,
        pvalue: Some(pvalue),
        threshold: SAMPLING_ALPHA,
        flagged: pvalue < SAMPLING_ALPHA,
        n_effective: n as f64,
    }
}

// ---------------------------------------------------------------------------
// Unified detector
// ---------------------------------------------------------------------------

/// A scheme bound to the detector-side toy LM (needed by SWEET's entropy
/// gate and EWD's weights).
#[derive(Debug, Clone)]
pub struct Detector {
    pub scheme: WatermarkScheme,
    pub lm: ToyLM,
}

impl Detector {
    pub fn new(scheme: WatermarkScheme, lm: ToyLM) -> Self {
        Detector { scheme, lm }
    }

    pub fn detect(&self, seq: &TokenSeq) -> Detection {
        let mut det = match &self.scheme {
            WatermarkScheme::Kgw { key, .. } | WatermarkScheme::Unigram { key, .. } => {
                detect_z(seq, key, 4.0, None)
            }
            WatermarkScheme::Sweet { key, bias, z_threshold } => {
                let gate = bias.entropy_threshold.unwrap_or(0.0);
                let mask: Vec<f64> = (0..seq.len())
                    .map(|t| {
                        let ctx = self.lm.ctx_at(seq.prompt_id, &seq.tokens, t);
                        if self.lm.next_dist(&ctx).entropy() > gate {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                detect_z(seq, key, *z_threshold, Some(&mask))
            }
            WatermarkScheme::Ewd { key, .. } => {
                let weights = ewd_weights(&self.lm, seq);
                detect_z(seq, key, 4.0, Some(&weights))
            }
            WatermarkScheme::Sampling { key } => detect_sampling(seq, key),
        };
        det.scheme = self.scheme.name().to_string();
        det
    }
}
