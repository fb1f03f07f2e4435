//! Generic univariate MCMC updates: bounded slice sampling and
//! random-walk Metropolis with burn-in scale adaptation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::std_normal;

/// Target acceptance rate of adaptive random-walk proposals.
pub const TARGET_ACCEPTANCE: f64 = 0.3;

const MAX_STEP_OUT: usize = 50;
const MAX_SHRINK: usize = 200;

/// One slice-sampling update of `x` for the unnormalized log density
/// `logf` on `[lo, hi]`, stepping out with initial width `w` and then
/// shrinking. Non-finite log densities count as outside the slice.
pub fn slice_sample<R, F>(rng: &mut R, x: f64, mut logf: F, lo: f64, hi: f64, w: f64) -> f64
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let fx = logf(x);
    if !fx.is_finite() {
        return x;
    }
    let level = fx + rng.random::<f64>().ln();
    let inside = |v: f64| v.is_finite() && v > level;

    let u: f64 = rng.random();
    let mut left = (x - u * w).max(lo);
    let mut right = (left + w).min(hi);
    let j = (MAX_STEP_OUT as f64 * rng.random::<f64>()).floor() as usize;
    let mut k = MAX_STEP_OUT - 1 - j;
    let mut jl = j;
    while jl > 0 && left > lo && inside(logf(left)) {
        left = (left - w).max(lo);
        jl -= 1;
    }
    while k > 0 && right < hi && inside(logf(right)) {
        right = (right + w).min(hi);
        k -= 1;
    }

    for _ in 0..MAX_SHRINK {
        let cand = left + rng.random::<f64>() * (right - left);
        if cand > lo && cand < hi && inside(logf(cand)) {
            return cand;
        }
        if cand < x {
            left = cand;
        } else {
            right = cand;
        }
    }
    x
}

/// Proposal scale adapted on the log scale towards
/// [`TARGET_ACCEPTANCE`] during burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveScale {
    pub log_scale: f64,
}

impl AdaptiveScale {
    pub fn new(scale: f64) -> Self {
        AdaptiveScale {
            log_scale: scale.ln(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Robbins–Monro step using the acceptance probability of the last
    /// proposal at (1-based) iteration `iter`.
    pub fn adapt(&mut self, accept_prob: f64, iter: u64) {
        let gain = 0.7 / (iter as f64 + 1.0).powf(0.6);
        self.log_scale = (self.log_scale + gain * (accept_prob - TARGET_ACCEPTANCE)).clamp(-12.0, 3.0);
    }
}

/// Accepted / proposed counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AcceptanceCount {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptanceCount {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
    }

    pub fn rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    pub fn merge(&mut self, other: &AcceptanceCount) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
    }
}

/// Metropolis–Hastings accept/reject given the log ratio of target and
/// proposal densities. Returns `(accepted, acceptance probability)`.
pub fn mh_decide<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> (bool, f64) {
    if !log_ratio.is_finite() {
        // NaN or -inf: reject; +inf cannot arise from finite current states
        return (log_ratio == f64::INFINITY, if log_ratio == f64::INFINITY { 1.0 } else { 0.0 });
    }
    let prob = log_ratio.min(0.0).exp();
    (rng.random::<f64>() < prob, prob)
}

/// Random-walk Metropolis update of a scalar with a symmetric normal
/// proposal. `logpost` returns `-inf` outside the support.
pub fn rw_metropolis<R, F>(
    rng: &mut R,
    x: f64,
    current_logpost: f64,
    scale: f64,
    mut logpost: F,
) -> (f64, f64, bool, f64)
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let cand = x + scale * std_normal(rng);
    let lp = logpost(cand);
    let (acc, prob) = mh_decide(rng, lp - current_logpost);
    if acc {
        (cand, lp, true, prob)
    } else {
        (x, current_logpost, false, prob)
    }
}
