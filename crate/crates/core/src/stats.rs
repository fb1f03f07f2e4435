//! Sample statistics shared by projection summaries and diagnostics.

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with denominator `n - 1`; zero for fewer than two values.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn sd(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics at `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = h - lo as f64;
    if w == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    }
}

pub fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantiles(x: &[f64], levels: &[f64]) -> Vec<f64> {
    let s = sorted(x);
    levels.iter().map(|&p| quantile_sorted(&s, p)).collect()
}

/// Autocovariance at `lag` with denominator `n`.
fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Integrated autocorrelation time from the initial positive sequence of
/// paired autocovariance sums. At least 1 for a non-constant series.
pub fn integrated_autocorrelation_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 1.0;
    }
    let m = mean(x);
    let g0 = autocovariance(x, m, 0);
    if g0 <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = autocovariance(x, m, 2 * k) + autocovariance(x, m, 2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    ((2.0 * sum - g0) / g0).max(1.0 / n as f64)
}

/// Standard error of the mean accounting for autocorrelation.
pub fn time_series_se(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let g0 = variance(x) * (n - 1.0) / n;
    (g0 * integrated_autocorrelation_time(x) / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn interpolated_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        // h = 1.5 → halfway between 2 and 3
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert!((quantile_sorted(&s, 0.1) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn white_noise_has_unit_time() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..20_000).map(|_| crate::dist::std_normal(&mut rng)).collect();
        let t = integrated_autocorrelation_time(&x);
        assert!((t - 1.0).abs() < 0.1, "{t}");
    }

    #[test]
    fn ar1_time_matches_closed_form() {
        // for AR(1) with coefficient r the time is (1 + r) / (1 - r)
        let r: f64 = 0.8;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut x = vec![0.0];
        for _ in 0..200_000 {
            let last = *x.last().unwrap();
            x.push(r * last + crate::dist::std_normal(&mut rng));
        }
        let t = integrated_autocorrelation_time(&x);
        let expected = (1.0 + r) / (1.0 - r);
        assert!((t / expected - 1.0).abs() < 0.1, "{t} vs {expected}");
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(xs in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let q = quantiles(&xs, &[0.0, 0.025, 0.1, 0.5, 0.9, 0.975, 1.0]);
            for w in q.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert_eq!(q[0], sorted(&xs)[0]);
        }
    }
}
