//! Binary-KL machinery and the local capacity bound.
//!
//! Centers on the bound: for any next-token distribution `pi` and token
//! subset `A`,
//!
//! ```text
//! pi(A) - ph(A)  <=  sup{ lambda in [0,1] : d_kl(lambda || q) <= KL(pi || ph) }
//! ```
//!
//! where `q = 1 - max_x ph(x)` is the off-mode mass of the reference. The
//! supremum has no elementary inverse, so it is computed by bisection on
//! `[q, 1]`, where `lambda -> d_kl(lambda || q)` is monotone increasing.
//!
//! Infinite divergences are first-class values (`f64::INFINITY`), produced
//! exactly by the conventions `0 ln 0 = 0` and `b ln(b/0) = +inf` for `b > 0`.
//! No NaN can escape: every code path below resolves the `0/0` and `b/0`
//! cases explicitly before touching `ln`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toylm::{ProbVec, Token};

/// Absolute tolerance of the bisection in [`capacity_sup`].
pub const BISECTION_TOL: f64 = 1e-10;
const BISECTION_MAX_ITERS: usize = 200;

/// Non-negative KL budget in nats; `f64::INFINITY` means unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityBudget(pub f64);

impl CapacityBudget {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_nan() || c < 0.0 {
            return Err(Error::Config(format!("KL budget must be >= 0, got {c}")));
        }
        Ok(CapacityBudget(c))
    }
}

/// Everything the capacity bound says about one local update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityReport {
    /// Off-mode mass of the reference distribution, `1 - max ph`.
    pub q: f64,
    /// Local capacity mass; equal to `q`.
    pub c_t: f64,
    /// `KL(pi || ph)` actually spent by the update, in nats.
    pub kl_used: f64,
    /// The capacity supremum at (`q`, `kl_used`).
    pub lambda_star: f64,
    /// `pi(A) - ph(A)` for the supplied subset.
    pub lhs: f64,
    /// `lambda_star - lhs`; non-negative up to 1e-9 for every valid input.
    pub slack: f64,
}

/// One term `a ln(a/b)` under the standard conventions.
#[inline]
fn kl_term(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if b == 0.0 {
        f64::INFINITY
    } else {
        a * (a / b).ln()
    }
}

/// Binary relative entropy `d_kl(p || q)` between Bernoulli(p) and
/// Bernoulli(q), in nats.
pub fn binary_kl(p: f64, q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q));
    kl_term(p, q) + kl_term(1.0 - p, 1.0 - q)
}

/// Full KL divergence `KL(p || q)` between distributions of equal dimension.
pub fn kl_divergence(p: &ProbVec, q: &ProbVec) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { left: p.len(), right: q.len() });
    }
    Ok(p.as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(&a, &b)| kl_term(a, b))
        .sum())
}

/// Largest `lambda in [0,1]` with `d_kl(lambda || q) <= budget`.
///
/// This is the capacity supremum rho(q; C): the most off-mode mass any
/// KL-bounded update can reach. Returns 1 when the budget covers
/// `d_kl(1 || q)`, and exactly `q` when the budget is 0.
pub fn capacity_sup(q: f64, budget: CapacityBudget) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q));
    let c = budget.0;
    if c == 0.0 {
        return q;
    }
    if binary_kl(1.0, q) <= c {
        return 1.0;
    }
    // d_kl(. || q) is 0 at q and increases to d_kl(1 || q) > c on [q, 1],
    // so the boundary is bracketed by [lo, hi] throughout.
    let (mut lo, mut hi) = (q, 1.0);
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if binary_kl(mid, q) <= c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BISECTION_TOL {
            break;
        }
    }
    lo
}

/// Off-mode mass `1 - max_x dist(x)` of a distribution.
pub fn capacity_mass(dist: &ProbVec) -> f64 {
    1.0 - dist.max_prob()
}

/// Evaluate the capacity bound for a concrete `(pi, ph, A)` triple.
pub fn theorem1_check(pi: &ProbVec, ph: &ProbVec, subset: &[Token]) -> Result<CapacityReport> {
    if pi.len() != ph.len() {
        return Err(Error::DimensionMismatch { left: pi.len(), right: ph.len() });
    }
    let q = capacity_mass(ph);
    let kl_used = kl_divergence(pi, ph)?;
    let lambda_star = capacity_sup(q, CapacityBudget(kl_used.max(0.0)));
    let lhs = pi.mass(subset.iter().copied()) - ph.mass(subset.iter().copied());
    Ok(CapacityReport {
        q,
        c_t: q,
        kl_used,
        lambda_star,
        lhs,
        slack: lambda_star - lhs,
    })
}

/// KL divergence after coarsening both distributions through the binary map
/// `x -> 1{x != x*}`, where `x*` is the mode of `ph`. By data processing this
/// never exceeds [`kl_divergence`].
pub fn coarsened_kl(pi: &ProbVec, ph: &ProbVec) -> f64 {
    let mode = ph.argmax();
    binary_kl(1.0 - pi.get(mode), 1.0 - ph.get(mode))
}

/// Evaluate the capacity supremum along a sequence of shrinking off-mode
/// masses at a fixed budget. The result is non-increasing and tends to 0.
pub fn vanishing_capacity_probe(budget: CapacityBudget, q_sequence: &[f64]) -> Vec<f64> {
    q_sequence.iter().map(|&q| capacity_sup(q, budget)).collect()
}

/// Both sides of the factorized local gain for a mode-preserving update.
///
/// Requires `pi` to place exactly the reference's mass on the reference mode
/// and a strictly positive off-mode mass; returns `(lhs, rhs)` which agree to
/// within accumulated rounding.
pub fn factorized_gain(pi: &ProbVec, ph: &ProbVec, pwm: &ProbVec) -> Result<(f64, f64)> {
    if pi.len() != ph.len() || pwm.len() != ph.len() {
        return Err(Error::DimensionMismatch { left: pi.len(), right: ph.len() });
    }
    let mode = ph.argmax();
    if pi.get(mode) != ph.get(mode) {
        return Err(Error::ModeMassNotPreserved);
    }
    let c = capacity_mass(ph);
    if c <= 0.0 {
        return Err(Error::DegenerateDistribution(
            "off-mode mass is zero; nothing to redistribute".into(),
        ));
    }
    let llr = |x: usize| (pwm.get(x) / ph.get(x)).ln();
    let lhs: f64 = (0..ph.len()).map(|x| (pi.get(x) - ph.get(x)) * llr(x)).sum();
    let rhs: f64 = c
        * (0..ph.len())
            .filter(|&x| x != mode)
            .map(|x| (pi.get(x) - ph.get(x)) / c * llr(x))
            .sum::<f64>();
    Ok((lhs, rhs))
}
