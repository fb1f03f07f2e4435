//! Densities and random variates used by the samplers.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::erfc;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of `N(mean, sd²)` at `x`.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `log(Φ(b) - Φ(a))` for `a < b`, stable in both tails.
pub fn log_normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        // upper tail: use survival functions
        let sa = 0.5 * erfc(a / std::f64::consts::SQRT_2);
        let sb = 0.5 * erfc(b / std::f64::consts::SQRT_2);
        (sa - sb).ln()
    } else {
        (std_normal_cdf(b) - std_normal_cdf(a)).ln()
    }
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw from `Gamma(shape, rate)`.
pub fn gamma_rate<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive")
        .sample(rng)
}

/// Log density of `Gamma(shape, rate)` at `x`.
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Standard normal truncated to `[a, b]`.
fn std_truncated<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if a >= 0.5 {
        upper_tail(rng, a, b)
    } else if b <= -0.5 {
        -upper_tail(rng, -b, -a)
    } else {
        // interval overlaps the bulk: plain rejection is efficient unless the
        // interval is narrow, in which case fall back to a uniform proposal
        if b - a > 0.5 {
            loop {
                let z = std_normal(rng);
                if z >= a && z <= b {
                    return z;
                }
            }
        } else {
            let peak = if a > 0.0 { a } else if b < 0.0 { b } else { 0.0 };
            loop {
                let z = a + (b - a) * rng.random::<f64>();
                let log_acc = -0.5 * (z * z - peak * peak);
                if rng.random::<f64>().ln() < log_acc {
                    return z;
                }
            }
        }
    }
}

/// Exponential-proposal rejection sampler on `[a, b]`, `a > 0`.
fn upper_tail<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    if b - a < 1.0 / lambda {
        // narrow interval: uniform proposal against the density at `a`
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>().ln() < -0.5 * (z * z - a * a) {
                return z;
            }
        }
    }
    loop {
        let u: f64 = rng.random();
        let z = a - (1.0 - u).ln() / lambda;
        if z > b {
            continue;
        }
        let log_acc = -0.5 * (z - lambda) * (z - lambda);
        if rng.random::<f64>().ln() < log_acc {
            return z;
        }
    }
}

/// Draw from `N(mean, sd²)` truncated to `[lo, hi]`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    (mean + sd * std_truncated(rng, a, b)).clamp(lo, hi)
}

/// Log normalizing mass of `N(mean, sd²)` on `[lo, hi]`.
pub fn truncated_log_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    log_normal_mass((lo - mean) / sd, (hi - mean) / sd)
}
