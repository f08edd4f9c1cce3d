//! Pair-dataset construction, spoof-rate metrics, score distributions, and
//! the ablation driver.
//!
//! Every evaluation compares a policy's greedy rewrite of a held-out text
//! against (a) the scheme's detector and (b) a semantic reference. The
//! semantic reference is the *reference model's own greedy rewrite* of the
//! same prompt: toy sequences are hash-random, so the base rewrite is the
//! only text that plays the role of "what a faithful paraphrase would say"
//! at this scale. An untrained policy therefore scores similarity 1 by
//! construction, and any detector gain must be paid for in similarity.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::policy::{
    train, EpochEval, GrpoConfig, RewardSettings, RewritePair, TabularPolicy, TrainingLog,
};
use crate::reward::{CapacityWeight, HashedBigramCosine, SemanticScorer, SemanticVariant};
use crate::toylm::{make_rewrite_prompt, stream_seed, Sampler, TokenSeq, ToyLM};
use crate::watermark::{sample_watermarked_sequence, Detector, WatermarkScheme};

/// Semantic-similarity gate used by the spoof success rate.
pub const SEM_THRESHOLD: f64 = 0.7;

/// Minimum fraction of watermarked rewrites the detector must flag for a
/// pair dataset to be considered usable.
pub const PAIR_GATE: f64 = 0.9;

// ---------------------------------------------------------------------------
// Pair dataset
// ---------------------------------------------------------------------------

/// Human/watermarked rewrite pairs of equal length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairDataset {
    pub pairs: Vec<RewritePair>,
    pub length: usize,
}

impl PairDataset {
    /// Serialize as one pair per line: human tokens, a tab, rewrite tokens.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&p.human.to_text());
            out.push('\t');
            out.push_str(&p.wm.to_text());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (h, w) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("line {}: expected two tab-separated fields", ln + 1)))?;
            let human = TokenSeq::from_text(0, h)?;
            let human = TokenSeq::new(make_rewrite_prompt(&human.tokens)?, human.tokens);
            let wm_tokens = TokenSeq::from_text(0, w)?.tokens;
            let wm = TokenSeq::new(make_rewrite_prompt(&human.tokens)?, wm_tokens);
            pairs.push(RewritePair { human, wm });
        }
        let length = pairs.first().map_or(0, |p| p.human.len());
        if pairs.iter().any(|p| p.human.len() != length || p.wm.len() != length) {
            return Err(Error::LengthMismatch("pair lengths differ".into()));
        }
        Ok(PairDataset { pairs, length })
    }
}

/// Build `n` pairs: an unwatermarked sample and its watermarked "rewrite"
/// generated under the rewrite-prompt digest of the original.
///
/// Fails when the detector flags at most [`PAIR_GATE`] of the rewrites,
/// which catches configurations too weak to carry a watermark signal.
pub fn build_pairs(
    lm: &ToyLM,
    scheme: &WatermarkScheme,
    n: usize,
    length: usize,
    seed: u64,
) -> Result<PairDataset> {
    if n == 0 {
        return Err(Error::NotEnoughSamples { need: 1, got: 0 });
    }
    let detector = Detector::new(scheme.clone(), lm.clone());
    let mut pairs = Vec::with_capacity(n);
    let mut flagged = 0usize;
    for i in 0..n {
        let human_prompt = stream_seed(seed, &[i as u64, 0]);
        let human = lm
            .sample_sequence(human_prompt, length, stream_seed(seed, &[i as u64, 1]), Sampler::Categorical)?
            .seq;
        let wm_prompt = make_rewrite_prompt(&human.tokens)?;
        let wm = sample_watermarked_sequence(lm, scheme, wm_prompt, length, stream_seed(seed, &[i as u64, 2]))?;
        if detector.detect(&wm).flagged {
            flagged += 1;
        }
        pairs.push(RewritePair { human, wm });
    }
    let rate = flagged as f64 / n as f64;
    if rate <= PAIR_GATE {
        return Err(Error::SchemeTooWeak { rate });
    }
    Ok(PairDataset { pairs, length })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// One evaluated sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    /// Detector statistic: z for the logit family, p-value for sampling.
    pub z_or_pvalue: f64,
    pub flagged: bool,
    pub sem: f64,
    pub ssr_pass: bool,
}

/// Aggregate evaluation of a set of rewrites.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub ssr: f64,
    pub sr: f64,
    pub mean_sem: f64,
    /// Mean detector statistic (z-family) over samples.
    pub mean_stat: f64,
    /// Perplexity of the outputs under the reference model.
    pub perplexity: f64,
    pub per_sample: Vec<SampleRecord>,
}

impl EvalResult {
    pub fn per_sample_csv(&self) -> String {
        let mut out = String::from("id,z_or_pvalue,flagged,sem,ssr_pass\n");
        for r in &self.per_sample {
            out.push_str(&format!(
                "{},{:.6},{},{:.6},{}\n",
                r.id, r.z_or_pvalue, r.flagged, r.sem, r.ssr_pass
            ));
        }
        out
    }
}

fn score_one(
    id: usize,
    output: &TokenSeq,
    reference: &TokenSeq,
    detector: &Detector,
    scorer: &dyn SemanticScorer,
    threshold: f64,
) -> Result<SampleRecord> {
    let det = detector.detect(output);
    let sem = scorer.score(&output.tokens, &reference.tokens)?;
    Ok(SampleRecord {
        id,
        z_or_pvalue: det.pvalue.unwrap_or(det.statistic),
        flagged: det.flagged,
        sem,
        ssr_pass: det.flagged && sem >= threshold,
    })
}

/// Spoof success rate: fraction of outputs both flagged by the detector and
/// semantically within `threshold` of the paired reference.
pub fn ssr(
    outputs: &[TokenSeq],
    references: &[TokenSeq],
    detector: &Detector,
    scorer: &dyn SemanticScorer,
    threshold: f64,
) -> Result<f64> {
    if outputs.len() != references.len() {
        return Err(Error::LengthMismatch(format!(
            "{} outputs vs {} references",
            outputs.len(),
            references.len()
        )));
    }
    if outputs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (i, (o, r)) in outputs.iter().zip(references).enumerate() {
        if score_one(i, o, r, detector, scorer, threshold)?.ssr_pass {
            hits += 1;
        }
    }
    Ok(hits as f64 / outputs.len() as f64)
}

/// Spoof rate: flagged fraction, no semantic gate.
pub fn sr(outputs: &[TokenSeq], detector: &Detector) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let hits = outputs.iter().filter(|o| detector.detect(o).flagged).count();
    hits as f64 / outputs.len() as f64
}

/// Greedy-rewrite evaluation of a policy on held-out originals.
///
/// `references` are the semantic anchors (the reference model's greedy
/// rewrites of the same prompts). Asserts `ssr <= sr`.
pub fn evaluate_policy(
    policy: &TabularPolicy,
    originals: &[TokenSeq],
    references: &[TokenSeq],
    detector: &Detector,
    scorer: &dyn SemanticScorer,
) -> Result<EvalResult> {
    if originals.len() != references.len() {
        return Err(Error::LengthMismatch(format!(
            "{} originals vs {} references",
            originals.len(),
            references.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(originals.len());
    let mut nll_sum = 0.0;
    for (i, (orig, reference)) in originals.iter().zip(references).enumerate() {
        let prompt = make_rewrite_prompt(&orig.tokens)?;
        let output = policy.greedy_rollout(prompt, orig.len());
        per_sample.push(score_one(i, &output, reference, detector, scorer, SEM_THRESHOLD)?);
        nll_sum += policy.base().sequence_nll(&output)?;
    }
    let n = per_sample.len() as f64;
    let ssr = per_sample.iter().filter(|r| r.ssr_pass).count() as f64 / n;
    let sr = per_sample.iter().filter(|r| r.flagged).count() as f64 / n;
    assert!(ssr <= sr, "ssr {ssr} cannot exceed sr {sr}");
    Ok(EvalResult {
        ssr,
        sr,
        mean_sem: per_sample.iter().map(|r| r.sem).sum::<f64>() / n,
        mean_stat: per_sample.iter().map(|r| r.z_or_pvalue).sum::<f64>() / n,
        perplexity: (nll_sum / n).exp(),
        per_sample,
    })
}

/// Base-model greedy rewrites for a set of originals; the semantic
/// references of every evaluation.
pub fn reference_rewrites(ref_lm: &ToyLM, originals: &[TokenSeq]) -> Result<Vec<TokenSeq>> {
    originals
        .iter()
        .map(|orig| {
            let prompt = make_rewrite_prompt(&orig.tokens)?;
            Ok(ref_lm.sample_sequence(prompt, orig.len(), 0, Sampler::Greedy)?.seq)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Score distributions
// ---------------------------------------------------------------------------

/// Summary statistics of detector scores over a set of sequences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub std: f64,
    /// 5th, 25th, 50th, 75th, 95th percentiles.
    pub quantiles: [f64; 5],
    /// Half-unit histogram bins as (lower edge, count).
    pub histogram: Vec<(f64, usize)>,
}

/// Detector-score distribution over at least 10 sequences.
pub fn zscore_distribution(seqs: &[TokenSeq], detector: &Detector) -> Result<ScoreSummary> {
    if seqs.len() < 10 {
        return Err(Error::NotEnoughSamples { need: 10, got: seqs.len() });
    }
    let mut scores: Vec<f64> = seqs.iter().map(|s| detector.detect(s).statistic).collect();
    scores.sort_by(f64::total_cmp);
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let quantile = |q: f64| -> f64 {
        let idx = (q * (scores.len() - 1) as f64).round() as usize;
        scores[idx]
    };
    let lo = (scores[0] / 0.5).floor() * 0.5;
    let hi = scores[scores.len() - 1];
    let nbins = (((hi - lo) / 0.5).floor() as usize + 1).max(1);
    let mut histogram: Vec<(f64, usize)> = (0..nbins).map(|b| (lo + 0.5 * b as f64, 0)).collect();
    for &s in &scores {
        let b = (((s - lo) / 0.5).floor() as usize).min(nbins - 1);
        histogram[b].1 += 1;
    }
    Ok(ScoreSummary {
        mean,
        std: var.sqrt(),
        quantiles: [quantile(0.05), quantile(0.25), quantile(0.5), quantile(0.75), quantile(0.95)],
        histogram,
    })
}

/// One-sided paired test that the per-sample differences have positive mean.
/// Returns the p-value of the Student-t statistic.
pub fn paired_one_sided_pvalue(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    if n < 2 {
        return 1.0;
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return if mean > 0.0 { 0.0 } else { 1.0 };
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n as f64 - 1.0).expect("valid dof");
    1.0 - dist.cdf(t)
}

// ---------------------------------------------------------------------------
// Capacity/reward profile
// ---------------------------------------------------------------------------

/// A single token-level reward observation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TokenRecord {
    pub c: f64,
    pub llr: f64,
    pub r: f64,
}

/// Mean reward and log-likelihood-ratio magnitude per capacity decile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecileRow {
    pub decile: usize,
    pub mean_c: f64,
    pub mean_r: f64,
    pub mean_abs_llr: f64,
    pub count: usize,
}

/// Rank-decile profile over at least 1000 token records.
pub fn capacity_reward_profile(records: &[TokenRecord]) -> Result<Vec<DecileRow>> {
    if records.len() < 1000 {
        return Err(Error::NotEnoughSamples { need: 1000, got: records.len() });
    }
    let mut sorted: Vec<&TokenRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.c.total_cmp(&b.c));
    let n = sorted.len();
    let mut rows = Vec::with_capacity(10);
    for d in 0..10 {
        let lo = d * n / 10;
        let hi = (d + 1) * n / 10;
        let chunk = &sorted[lo..hi];
        let m = chunk.len() as f64;
        rows.push(DecileRow {
            decile: d,
            mean_c: chunk.iter().map(|r| r.c).sum::<f64>() / m,
            mean_r: chunk.iter().map(|r| r.r).sum::<f64>() / m,
            mean_abs_llr: chunk.iter().map(|r| r.llr.abs()).sum::<f64>() / m,
            count: chunk.len(),
        });
    }
    Ok(rows)
}

pub fn profile_csv(rows: &[DecileRow]) -> String {
    let mut out = String::from("decile,mean_c,mean_r,mean_abs_llr,count\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            r.decile, r.mean_c, r.mean_r, r.mean_abs_llr, r.count
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Benchmark driver and ablations
// ---------------------------------------------------------------------------

/// A full train-and-evaluate configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Benchmark {
    pub lm: ToyLM,
    pub scheme: WatermarkScheme,
    pub train_n: usize,
    pub eval_n: usize,
    pub length: usize,
    pub grpo: GrpoConfig,
    pub weight: CapacityWeight,
    pub semantic: SemanticVariant,
    pub seed: u64,
}

impl Benchmark {
    /// The default toy benchmark: V=64, order 2, KGW delta 3, 100 training
    /// pairs, 400 held-out prompts, length 200.
    pub fn toy_default(seed: u64) -> Self {
        Benchmark {
            lm: ToyLM::default(),
            scheme: WatermarkScheme::kgw_default(),
            train_n: 100,
            eval_n: 400,
            length: 200,
            grpo: GrpoConfig::toy_benchmark(seed),
            weight: CapacityWeight::OneMinusPmax,
            semantic: SemanticVariant::Min,
            seed,
        }
    }
}

/// Everything produced by one benchmark run.
pub struct BenchmarkRun {
    pub policy: TabularPolicy,
    pub log: TrainingLog,
    /// Evaluation of the untrained policy (epoch 0).
    pub initial: EvalResult,
    /// Evaluation of the trained policy.
    pub final_eval: EvalResult,
    pub detector: Detector,
    pub originals: Vec<TokenSeq>,
    pub references: Vec<TokenSeq>,
}

/// Train on freshly built pairs and evaluate on held-out prompts.
pub fn run_benchmark(bench: &Benchmark) -> Result<BenchmarkRun> {
    let scorer = HashedBigramCosine;
    let train_set = build_pairs(&bench.lm, &bench.scheme, bench.train_n, bench.length, stream_seed(bench.seed, &[1]))?;
    let eval_set = build_eval_originals(bench)?;
    let references = reference_rewrites(&bench.lm, &eval_set)?;
    let detector = Detector::new(bench.scheme.clone(), bench.lm.clone());
    let policy = TabularPolicy::new(bench.lm.clone());
    let settings = RewardSettings {
        weight: bench.weight,
        variant: bench.semantic,
        scorer: &scorer,
    };

    let hook_detector = detector.clone();
    let hook_originals = eval_set.clone();
    let hook_refs = references.clone();
    let (trained, log) = train(
        &policy,
        &bench.lm,
        &train_set.pairs,
        &bench.grpo,
        &settings,
        |epoch, pol| {
            evaluate_policy(pol, &hook_originals, &hook_refs, &hook_detector, &HashedBigramCosine)
                .ok()
                .map(|e| EpochEval {
                    epoch,
                    mean_stat: e.mean_stat,
                    sr: e.sr,
                    ssr: e.ssr,
                    mean_sem: e.mean_sem,
                })
        },
    )?;

    let initial = evaluate_policy(&policy, &eval_set, &references, &detector, &scorer)?;
    let final_eval = evaluate_policy(&trained, &eval_set, &references, &detector, &scorer)?;
    Ok(BenchmarkRun {
        policy: trained,
        log,
        initial,
        final_eval,
        detector,
        originals: eval_set,
        references,
    })
}

/// Held-out unwatermarked originals for evaluation.
pub fn build_eval_originals(bench: &Benchmark) -> Result<Vec<TokenSeq>> {
    (0..bench.eval_n)
        .map(|i| {
            let prompt = stream_seed(bench.seed, &[2, i as u64, 0]);
            Ok(bench
                .lm
                .sample_sequence(prompt, bench.length, stream_seed(bench.seed, &[2, i as u64, 1]), Sampler::Categorical)?
                .seq)
        })
        .collect()
}

/// One ablation configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AblationVariant {
    pub weight: CapacityWeight,
    pub semantic: SemanticVariant,
    pub anchor: bool,
}

impl AblationVariant {
    pub fn label(&self) -> String {
        format!(
            "weight={};semantic={};anchor={}",
            self.weight.name(),
            self.semantic.name(),
            if self.anchor { "on" } else { "off" }
        )
    }
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: String,
    pub scheme: String,
    pub ssr: f64,
    pub sr: f64,
    pub mean_sem: f64,
    pub mean_stat: f64,
}

/// Train and evaluate once per variant; `anchor = false` zeroes the
/// cross-entropy weight, the weight variant replaces the capacity weight,
/// and the semantic variant replaces the reward combination.
pub fn run_ablation(base: &Benchmark, variants: &[AblationVariant]) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::with_capacity(variants.len());
    for v in variants {
        let mut bench = base.clone();
        bench.weight = v.weight;
        bench.semantic = v.semantic;
        if !v.anchor {
            bench.grpo.w3 = 0.0;
        }
        let run = run_benchmark(&bench)?;
        cells.push(AblationCell {
            variant: v.label(),
            scheme: bench.scheme.name().to_string(),
            ssr: run.final_eval.ssr,
            sr: run.final_eval.sr,
            mean_sem: run.final_eval.mean_sem,
            mean_stat: run.final_eval.mean_stat,
        });
    }
    Ok(cells)
}

pub fn grid_csv(cells: &[AblationCell]) -> String {
    let mut out = String::from("variant,scheme,ssr,sr,mean_sem,mean_stat\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            c.variant, c.scheme, c.ssr, c.sr, c.mean_sem, c.mean_stat
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::mix64;
    use crate::watermark::{BiasConfig, GreenKey};

    fn small_lm() -> ToyLM {
        ToyLM::default()
    }

    #[test]
    fn build_pairs_reproducible_and_gated() {
        let lm = small_lm();
        let scheme = WatermarkScheme::kgw_default();
        let a = build_pairs(&lm, &scheme, 10, 100, 7).unwrap();
        let b = build_pairs(&lm, &scheme, 10, 100, 7).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.length, 100);

        // Zero bias carries no signal: the gate must reject it.
        let weak = WatermarkScheme::Kgw {
            key: GreenKey::default(),
            bias: BiasConfig { delta: 0.0, entropy_threshold: None },
        };
        assert!(matches!(
            build_pairs(&lm, &weak, 10, 100, 7),
            Err(Error::SchemeTooWeak { .. })
        ));
    }

    #[test]
    fn pair_dataset_text_round_trip() {
        let lm = small_lm();
        let ds = build_pairs(&lm, &WatermarkScheme::kgw_default(), 5, 50, 3).unwrap();
        let back = PairDataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(back.pairs.len(), 5);
        for (a, b) in ds.pairs.iter().zip(&back.pairs) {
            assert_eq!(a.human.tokens, b.human.tokens);
            assert_eq!(a.wm.tokens, b.wm.tokens);
        }
    }

    #[test]
    fn ssr_and_sr_shapes() {
        let lm = small_lm();
        let detector = Detector::new(WatermarkScheme::kgw_default(), lm.clone());
        let scorer = HashedBigramCosine;

        // Outputs equal to references and unwatermarked: ssr equals the
        // detector's false-positive rate, which is essentially zero.
        let originals: Vec<TokenSeq> = (0..50)
            .map(|i| {
                lm.sample_sequence(mix64(i), 200, i, Sampler::Categorical).unwrap().seq
            })
            .collect();
        let rate = ssr(&originals, &originals, &detector, &scorer, SEM_THRESHOLD).unwrap();
        assert!(rate < 0.05, "null ssr {rate}");
        assert_eq!(sr(&[], &detector), 0.0);

        // All flagged with sem 1: ssr = 1.
        let wm: Vec<TokenSeq> = (0..20)
            .map(|i| {
                sample_watermarked_sequence(&lm, &WatermarkScheme::kgw_default(), mix64(i), 200, i)
                    .unwrap()
            })
            .collect();
        let s = ssr(&wm, &wm, &detector, &scorer, SEM_THRESHOLD).unwrap();
        let r = sr(&wm, &detector);
        assert!(s <= r);
        assert!(r > 0.9);
        assert!((s - r).abs() < 1e-12, "sem(x,x)=1 so the gate is inert");

        assert!(ssr(&wm, &originals, &detector, &scorer, SEM_THRESHOLD).is_err());
    }

    #[test]
    fn zscore_distribution_separates_families() {
        let lm = small_lm();
        let detector = Detector::new(WatermarkScheme::kgw_default(), lm.clone());
        let null_seqs: Vec<TokenSeq> = (0..200)
            .map(|i| lm.sample_sequence(mix64(i), 200, 900 + i, Sampler::Categorical).unwrap().seq)
            .collect();
        let null = zscore_distribution(&null_seqs, &detector).unwrap();
        assert!(null.mean.abs() < 0.5, "null mean {}", null.mean);

        let wm_seqs: Vec<TokenSeq> = (0..50)
            .map(|i| {
                sample_watermarked_sequence(&lm, &WatermarkScheme::kgw_default(), mix64(i), 200, i)
                    .unwrap()
            })
            .collect();
        let wm = zscore_distribution(&wm_seqs, &detector).unwrap();
        assert!(wm.mean > 4.0, "watermarked mean {}", wm.mean);

        assert!(zscore_distribution(&null_seqs[..5], &detector).is_err());
    }

    #[test]
    fn zscore_distribution_permutation_invariant() {
        let lm = small_lm();
        let detector = Detector::new(WatermarkScheme::kgw_default(), lm.clone());
        let seqs: Vec<TokenSeq> = (0..30)
            .map(|i| lm.sample_sequence(mix64(i), 100, i, Sampler::Categorical).unwrap().seq)
            .collect();
        let mut shuffled = seqs.clone();
        shuffled.reverse();
        shuffled.swap(0, 7);
        let a = zscore_distribution(&seqs, &detector).unwrap();
        let b = zscore_distribution(&shuffled, &detector).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12);
        assert!((a.std - b.std).abs() < 1e-12);
        assert_eq!(a.quantiles, b.quantiles);
        assert_eq!(a.histogram, b.histogram);
    }

    #[test]
    fn degenerate_scores_have_zero_std() {
        // Identical sequences produce identical statistics.
        let lm = small_lm();
        let detector = Detector::new(WatermarkScheme::kgw_default(), lm.clone());
        let seq = lm.sample_sequence(3, 100, 3, Sampler::Categorical).unwrap().seq;
        let seqs: Vec<TokenSeq> = (0..12).map(|_| seq.clone()).collect();
        let s = zscore_distribution(&seqs, &detector).unwrap();
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn capacity_profile_trivial_cases() {
        // All c = 0 gives zero mean reward everywhere.
        let zeros: Vec<TokenRecord> =
            (0..1000).map(|_| TokenRecord { c: 0.0, llr: 1.0, r: 0.0 }).collect();
        let rows = capacity_reward_profile(&zeros).unwrap();
        assert!(rows.iter().all(|r| r.mean_r == 0.0));

        // llr = 1 everywhere: decile mean reward equals decile mean weight.
        let recs: Vec<TokenRecord> = (0..2000)
            .map(|i| {
                let c = i as f64 / 2000.0;
                TokenRecord { c, llr: 1.0, r: c }
            })
            .collect();
        let rows = capacity_reward_profile(&recs).unwrap();
        for row in &rows {
            assert!((row.mean_r - row.mean_c).abs() < 1e-12);
        }
        assert_eq!(rows.len(), 10);

        assert!(capacity_reward_profile(&recs[..500]).is_err());
        let csv = profile_csv(&rows);
        assert!(csv.lines().count() == 11);
    }

    #[test]
    fn paired_test_behaviour() {
        let shifted: Vec<f64> = (0..100).map(|i| 2.0 + ((i * 37) % 7) as f64 * 0.1).collect();
        assert!(paired_one_sided_pvalue(&shifted) < 1e-10);
        let null: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        assert!(paired_one_sided_pvalue(&null) > 0.4);
    }

    #[test]
    fn evaluate_policy_initial_state_is_reference() {
        let lm = small_lm();
        let bench = Benchmark {
            eval_n: 20,
            length: 100,
            ..Benchmark::toy_default(5)
        };
        let originals = build_eval_originals(&bench).unwrap();
        let references = reference_rewrites(&lm, &originals).unwrap();
        let detector = Detector::new(bench.scheme.clone(), lm.clone());
        let policy = TabularPolicy::new(lm.clone());
        let res =
            evaluate_policy(&policy, &originals, &references, &detector, &HashedBigramCosine)
                .unwrap();
        assert_eq!(res.mean_sem, 1.0, "untrained policy rewrites are the references");
        assert!(res.mean_stat.abs() < 1.0, "unwatermarked mean z {}", res.mean_stat);
        assert!(res.ssr <= res.sr);
        let csv = res.per_sample_csv();
        assert_eq!(csv.lines().count(), 21);
    }
}
