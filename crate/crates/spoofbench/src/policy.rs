//! Tabular softmax policy with analytic gradients, trained by a group-wise
//! ratio objective with an exact per-token KL regularizer and a
//! teacher-forced cross-entropy anchor.
//!
//! The policy is an additive logit table over trailing token windows: at
//! context `(prompt, window)` it returns `softmax(base_logits + delta[window])`.
//! Zero rows reproduce the base model bit-for-bit, and because rows are
//! shared across prompts the learned shifts transfer to prompts never seen
//! in training. Full rows are available at every context, so the KL term is
//! computed exactly rather than estimated.

use std::collections::HashMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{
    combine_semantic, normalize_group, rollout_token_rewards, sigmoid_reward, CapacityWeight,
    RewardBreakdown, SemanticScorer, SemanticVariant, SurrogatePair,
};
use crate::toylm::{
    make_rewrite_prompt, stream_seed, ContextKey, ProbVec, Token, TokenSeq, ToyLM, Window,
};

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

/// Gradient (or update) over the policy's touched rows.
pub type GradMap = HashMap<Window, Vec<f64>>;

/// Context-conditioned softmax policy backed by a base toy LM.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    base: ToyLM,
    delta: HashMap<Window, Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(base: ToyLM) -> Self {
        TabularPolicy { base, delta: HashMap::new() }
    }

    pub fn base(&self) -> &ToyLM {
        &self.base
    }

    pub fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    pub fn order(&self) -> usize {
        self.base.order
    }

    pub fn touched_rows(&self) -> usize {
        self.delta.len()
    }

    /// Policy logits at a context: base logits plus the window's delta row.
    pub fn logits(&self, ctx: &ContextKey) -> Vec<f64> {
        let mut l = self.base.logits(ctx);
        if let Some(row) = self.delta.get(&ctx.window) {
            for (li, di) in l.iter_mut().zip(row) {
                *li += di;
            }
        }
        l
    }

    /// Next-token distribution; identical to the base model wherever the
    /// window's delta row is absent or zero.
    pub fn dist(&self, ctx: &ContextKey) -> ProbVec {
        ProbVec::from_logits(&self.logits(ctx), self.base.smoothing)
    }

    pub fn delta_row(&self, window: &Window) -> Option<&[f64]> {
        self.delta.get(window).map(|r| r.as_slice())
    }

    /// Add `eps` to one delta entry, materializing the row if needed.
    pub fn nudge(&mut self, window: Window, token: usize, eps: f64) {
        let v = self.base.vocab_size();
        let row = self.delta.entry(window).or_insert_with(|| vec![0.0; v]);
        row[token] += eps;
    }

    /// Gradient-ascent step: `delta[w] += lr * grad[w]` for every row.
    pub fn apply_gradient(&mut self, grad: &GradMap, lr: f64) {
        let v = self.base.vocab_size();
        for (w, g) in grad {
            let row = self.delta.entry(*w).or_insert_with(|| vec![0.0; v]);
            for (ri, gi) in row.iter_mut().zip(g) {
                *ri += lr * gi;
            }
        }
    }

    /// Greedy rollout of `length` tokens under `prompt_id`.
    pub fn greedy_rollout(&self, prompt_id: u64, length: usize) -> TokenSeq {
        let mut tokens = Vec::with_capacity(length);
        for t in 0..length {
            let ctx = self.base.ctx_at(prompt_id, &tokens, t);
            tokens.push(self.dist(&ctx).argmax() as Token);
        }
        TokenSeq::new(prompt_id, tokens)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut rows: Vec<CheckpointRow> = self
            .delta
            .iter()
            .map(|(w, d)| CheckpointRow { window: w.as_slice().to_vec(), delta: d.clone() })
            .collect();
        rows.sort_by(|a, b| a.window.cmp(&b.window));
        Checkpoint { lm: self.base.clone(), rows }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let mut policy = TabularPolicy::new(ck.lm);
        let v = policy.vocab_size();
        for row in ck.rows {
            if row.delta.len() != v {
                return Err(Error::Config(format!(
                    "checkpoint row width {} does not match vocab {v}",
                    row.delta.len()
                )));
            }
            let w = Window::from_tail(&row.window, row.window.len());
            policy.delta.insert(w, row.delta);
        }
        Ok(policy)
    }
}

/// A serializable policy snapshot: base LM config plus touched rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub lm: ToyLM,
    pub rows: Vec<CheckpointRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub window: Vec<Token>,
    pub delta: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// A sampled rollout along with the sampler's own log-probabilities, which
/// play the role of the old-policy snapshot in the ratio.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub seq: TokenSeq,
    pub old_logps: Vec<f64>,
}

/// Sample `group_size` independent rollouts from the policy.
pub fn rollout_group(
    policy: &TabularPolicy,
    prompt_id: u64,
    group_size: usize,
    length: usize,
    rng_seed: u64,
) -> Result<Vec<Rollout>> {
    if group_size < 2 {
        return Err(Error::GroupTooSmall(group_size));
    }
    if length == 0 {
        return Err(Error::EmptyGeneration);
    }
    let mut out = Vec::with_capacity(group_size);
    for g in 0..group_size {
        let mut rng = ChaCha12Rng::seed_from_u64(stream_seed(rng_seed, &[g as u64]));
        let mut tokens = Vec::with_capacity(length);
        let mut logps = Vec::with_capacity(length);
        for t in 0..length {
            let ctx = policy.base.ctx_at(prompt_id, &tokens, t);
            let dist = policy.dist(&ctx);
            let tok = dist.sample(&mut rng);
            logps.push(dist.get(tok as usize).ln());
            tokens.push(tok);
        }
        out.push(Rollout { seq: TokenSeq::new(prompt_id, tokens), old_logps: logps });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    /// Prompts per update step.
    pub batch: usize,
    /// Weight of the group-normalized semantic advantage.
    pub w1: f64,
    /// Weight of the capacity-aware token reward.
    pub w2: f64,
    /// Weight of the cross-entropy anchor.
    pub w3: f64,
    /// KL regularizer coefficient.
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Optional PPO-style ratio clip; disabled by default.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 12,
            batch: 48,
            w1: 3.0,
            w2: 2.0,
            w3: 1.0,
            beta: 0.04,
            lr: 2e-4,
            epochs: 10,
            clip: None,
            seed: 42,
        }
    }
}

impl GrpoConfig {
    /// Learning rate sized for the tabular policy. The neural-scale default
    /// barely moves a logit table, so benchmark runs use this instead.
    pub fn toy_benchmark(seed: u64) -> Self {
        GrpoConfig { lr: 600.0, seed, ..GrpoConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall(self.group_size));
        }
        if self.w1 < 0.0 || self.w2 < 0.0 || self.w3 < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("weights and beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// One training pair: the original text and its watermarked rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewritePair {
    pub human: TokenSeq,
    pub wm: TokenSeq,
}

impl RewritePair {
    pub fn surrogate(&self) -> Result<SurrogatePair> {
        SurrogatePair::from_pair(&self.human, &self.wm)
    }

    /// Prompt digest the policy conditions on when rewriting `human`.
    pub fn prompt_id(&self) -> Result<u64> {
        make_rewrite_prompt(&self.human.tokens)
    }
}

/// One prompt's group of rollouts with their reward breakdowns.
#[derive(Debug)]
pub struct GroupBatchItem<'a> {
    pub prompt_id: u64,
    pub rollouts: &'a [Rollout],
    pub rewards: &'a [RewardBreakdown],
}

/// Objective value split into its components. `total` is the maximized J.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub total: f64,
    /// Mean ratio-weighted reward term.
    pub ratio_term: f64,
    /// Mean per-token KL to the reference, before the beta weight.
    pub mean_kl: f64,
    /// Teacher-forced cross-entropy loss per token.
    pub ce_loss: f64,
}

/// Group-ratio objective with exact KL regularization and the cross-entropy
/// anchor, together with its analytic gradient over touched rows.
///
/// `J = mean_b (1/G) sum_i (1/|x_i|) sum_t [ ratio * (w1 A_hat_i + w2 r_it)
/// - beta KL(pi_theta || pi_ref) ] - w3 L_CE`.
pub fn grpo_objective(
    policy: &TabularPolicy,
    ref_lm: &ToyLM,
    batch: &[GroupBatchItem],
    ce_pairs: &[RewritePair],
    cfg: &GrpoConfig,
) -> Result<(ObjectiveParts, GradMap)> {
    let v = policy.vocab_size();
    let mut grad: GradMap = HashMap::new();
    let mut parts = ObjectiveParts::default();
    let mut kl_token_count = 0usize;

    for item in batch {
        if item.rollouts.len() != item.rewards.len() {
            return Err(Error::LengthMismatch(format!(
                "{} rollouts vs {} reward records",
                item.rollouts.len(),
                item.rewards.len()
            )));
        }
        let group = item.rollouts.len() as f64;
        for (rollout, breakdown) in item.rollouts.iter().zip(item.rewards) {
            let len = rollout.seq.len();
            if rollout.old_logps.len() != len || breakdown.r.len() != len {
                return Err(Error::LengthMismatch(format!(
                    "rollout length {len} vs {} old logps, {} rewards",
                    rollout.old_logps.len(),
                    breakdown.r.len()
                )));
            }
            let scale = 1.0 / (batch.len() as f64 * group * len as f64);
            for t in 0..len {
                let ctx = policy.base.ctx_at(item.prompt_id, &rollout.seq.tokens, t);
                let pi = policy.dist(&ctx);
                let rho = ref_lm.next_dist(&ctx);
                let a = rollout.seq.tokens[t] as usize;
                let coeff = cfg.w1 * breakdown.a_hat + cfg.w2 * breakdown.r[t];
                let ratio = (pi.get(a).ln() - rollout.old_logps[t]).exp();

                // Ratio-weighted reward, optionally PPO-clipped. The clipped
                // branch contributes no gradient.
                let (term, ratio_grad_active) = match cfg.clip {
                    None => (ratio * coeff, true),
                    Some(eps) => {
                        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * coeff;
                        let raw = ratio * coeff;
                        if raw <= clipped {
                            (raw, true)
                        } else {
                            (clipped, false)
                        }
                    }
                };

                // Exact KL over the full row.
                let mut kl = 0.0;
                for x in 0..v {
                    kl += pi.get(x) * (pi.get(x) / rho.get(x)).ln();
                }

                parts.total += scale * (term - cfg.beta * kl);
                parts.ratio_term += scale * term;
                parts.mean_kl += kl;
                kl_token_count += 1;

                let row = grad.entry(ctx.window).or_insert_with(|| vec![0.0; v]);
                let ratio_coeff = if ratio_grad_active {
                    coeff / rollout.old_logps[t].exp()
                } else {
                    0.0
                };
                for (x, rx) in row.iter_mut().enumerate() {
                    let px = pi.get(x);
                    // d(pi_a)/d l_x = pi_a (1{a=x} - pi_x)
                    let dpi_a = pi.get(a) * (if x == a { 1.0 } else { 0.0 } - px);
                    let dkl = px * ((px / rho.get(x)).ln() - kl);
                    *rx += scale * (ratio_coeff * dpi_a - cfg.beta * dkl);
                }
            }
        }
    }
    if kl_token_count > 0 {
        parts.mean_kl /= kl_token_count as f64;
    }

    if cfg.w3 > 0.0 && !ce_pairs.is_empty() {
        let (ce, ce_grad) = ce_anchor(policy, ce_pairs)?;
        parts.ce_loss = ce;
        parts.total -= cfg.w3 * ce;
        for (w, g) in ce_grad {
            let row = grad.entry(w).or_insert_with(|| vec![0.0; v]);
            for (rx, gx) in row.iter_mut().zip(&g) {
                *rx -= cfg.w3 * gx;
            }
        }
    }

    Ok((parts, grad))
}

/// Teacher-forced cross-entropy toward the watermarked rewrites, averaged
/// per token over the batch, with its analytic gradient (of the loss).
pub fn ce_anchor(policy: &TabularPolicy, pairs: &[RewritePair]) -> Result<(f64, GradMap)> {
    let v = policy.vocab_size();
    let total_tokens: usize = pairs.iter().map(|p| p.wm.len()).sum();
    if total_tokens == 0 {
        return Ok((0.0, HashMap::new()));
    }
    let inv_n = 1.0 / total_tokens as f64;
    let mut loss = 0.0;
    let mut grad: GradMap = HashMap::new();
    for pair in pairs {
        let prompt = pair.prompt_id()?;
        for t in 0..pair.wm.len() {
            let ctx = policy.base.ctx_at(prompt, &pair.wm.tokens, t);
            let pi = policy.dist(&ctx);
            let target = pair.wm.tokens[t] as usize;
            loss -= inv_n * pi.get(target).ln();
            let row = grad.entry(ctx.window).or_insert_with(|| vec![0.0; v]);
            for (x, rx) in row.iter_mut().enumerate() {
                // d(-ln pi_target)/d l_x = pi_x - 1{x = target}
                *rx += inv_n * (pi.get(x) - if x == target { 1.0 } else { 0.0 });
            }
        }
    }
    Ok((loss, grad))
}

/// Max relative error between an analytic gradient and central finite
/// differences of `f` over every coordinate in `analytic`.
pub fn grad_check<F: Fn(&TabularPolicy) -> f64>(
    f: F,
    policy: &TabularPolicy,
    analytic: &GradMap,
    eps: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (w, row) in analytic {
        for (x, &g) in row.iter().enumerate() {
            let mut plus = policy.clone();
            plus.nudge(*w, x, eps);
            let mut minus = policy.clone();
            minus.nudge(*w, x, -eps);
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            let denom = g.abs().max(fd.abs()).max(1e-6);
            worst = worst.max((fd - g).abs() / denom);
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Per-step training diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub mean_a: f64,
    pub mean_r: f64,
    pub kl_to_ref: f64,
    pub ce_loss: f64,
    pub objective: f64,
}

/// Per-epoch evaluation snapshot supplied by the caller's hook.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub mean_stat: f64,
    pub sr: f64,
    pub ssr: f64,
    pub mean_sem: f64,
}

/// Append-only training log; serializes as JSON lines.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochEval>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).unwrap());
            out.push('\n');
        }
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Reward computation settings threaded through training.
pub struct RewardSettings<'a> {
    pub weight: CapacityWeight,
    pub variant: SemanticVariant,
    pub scorer: &'a dyn SemanticScorer,
}

/// Train the policy on rewrite pairs.
///
/// One gradient-ascent step per batch with the old policy refreshed at every
/// step (so the ratio is exactly 1 at computation time), cosine-decayed
/// learning rate, and an optional per-epoch evaluation hook whose results
/// are appended to the log. Epoch 0 is evaluated before any update.
pub fn train<F>(
    policy: &TabularPolicy,
    ref_lm: &ToyLM,
    dataset: &[RewritePair],
    cfg: &GrpoConfig,
    rewards: &RewardSettings,
    mut eval_hook: F,
) -> Result<(TabularPolicy, TrainingLog)>
where
    F: FnMut(usize, &TabularPolicy) -> Option<EpochEval>,
{
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::NotEnoughSamples { need: 1, got: 0 });
    }
    let mut pol = policy.clone();
    let mut log = TrainingLog::default();
    if let Some(e) = eval_hook(0, &pol) {
        log.epochs.push(e);
    }

    let batches_per_epoch = dataset.len().div_ceil(cfg.batch);
    let total_steps = (cfg.epochs * batches_per_epoch).max(1);
    let mut step_idx = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        shuffle(&mut order, stream_seed(cfg.seed, &[0xe90c, epoch as u64]));

        for chunk in order.chunks(cfg.batch) {
            let lr = cfg.lr
                * 0.5
                * (1.0 + (std::f64::consts::PI * step_idx as f64 / total_steps as f64).cos());

            let mut groups: Vec<(u64, Vec<Rollout>, Vec<RewardBreakdown>)> = Vec::new();
            let mut ce_pairs: Vec<RewritePair> = Vec::new();
            for (b, &pi) in chunk.iter().enumerate() {
                let pair = &dataset[pi];
                let prompt = pair.prompt_id()?;
                let surrogate = pair.surrogate()?;
                let seed =
                    stream_seed(cfg.seed, &[epoch as u64, step_idx as u64, b as u64]);
                let rollouts =
                    rollout_group(&pol, prompt, cfg.group_size, pair.human.len(), seed)?;

                let mut sems = Vec::with_capacity(rollouts.len());
                let mut breakdowns = Vec::with_capacity(rollouts.len());
                for r in &rollouts {
                    let mut bd = rollout_token_rewards(
                        ref_lm,
                        &surrogate,
                        &r.seq.tokens,
                        rewards.weight,
                    );
                    bd.sem_human = rewards.scorer.score(&r.seq.tokens, &pair.human.tokens)?;
                    bd.sem_wm = rewards.scorer.score(&r.seq.tokens, &pair.wm.tokens)?;
                    bd.a = sigmoid_reward(combine_semantic(bd.sem_human, bd.sem_wm, rewards.variant));
                    sems.push(bd.a);
                    breakdowns.push(bd);
                }
                for (bd, a_hat) in breakdowns.iter_mut().zip(normalize_group(&sems)?) {
                    bd.a_hat = a_hat;
                }
                groups.push((prompt, rollouts, breakdowns));
                ce_pairs.push(pair.clone());
            }

            let items: Vec<GroupBatchItem> = groups
                .iter()
                .map(|(p, r, b)| GroupBatchItem { prompt_id: *p, rollouts: r, rewards: b })
                .collect();
            let (parts, grad) = grpo_objective(&pol, ref_lm, &items, &ce_pairs, cfg)?;
            pol.apply_gradient(&grad, lr);

            let n_rollouts: usize = groups.iter().map(|g| g.1.len()).sum();
            let mean_a = groups
                .iter()
                .flat_map(|g| g.2.iter().map(|b| b.a))
                .sum::<f64>()
                / n_rollouts as f64;
            let mean_r = {
                let (mut s, mut n) = (0.0, 0usize);
                for g in &groups {
                    for b in &g.2 {
                        s += b.r.iter().sum::<f64>();
                        n += b.r.len();
                    }
                }
                s / n as f64
            };
            log.steps.push(StepRecord {
                epoch,
                step: step_idx,
                lr,
                mean_a,
                mean_r,
                kl_to_ref: parts.mean_kl,
                ce_loss: parts.ce_loss,
                objective: parts.total,
            });
            step_idx += 1;
        }

        if let Some(e) = eval_hook(epoch, &pol) {
            log.epochs.push(e);
        }
    }
    Ok((pol, log))
}

/// Fisher-Yates shuffle driven by a dedicated stream.
fn shuffle(items: &mut [usize], seed: u64) {
    use rand::Rng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
