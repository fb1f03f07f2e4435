//! Detection of the start of the fertility transition (`tau`) and of the
//! post-transition phase (`lambda`) from a TFR series.

use crate::types::PhaseMarkers;

/// Phase II can only start at a local maximum above this level.
pub const TAU_MIN_LEVEL: f64 = 5.5;
/// Local maxima within this distance of the global maximum qualify.
pub const TAU_WINDOW: f64 = 0.5;
/// Phase III requires two consecutive increases below this level.
pub const LAMBDA_LEVEL: f64 = 2.0;
/// Block length used to average annual series before detecting `lambda`.
pub const ANNUAL_BLOCK: usize = 5;

/// Indices of local maxima; plateaus count at every index and endpoints
/// only need to match their single neighbour.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] >= values[i - 1];
            let right = i + 1 == n || values[i] >= values[i + 1];
            n > 1 && left && right
        })
        .collect()
}

/// Start period of Phase II, or `None` when the transition began before
/// the first period.
pub fn find_tau(values: &[f64]) -> Option<usize> {
    let global = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    local_maxima(values)
        .into_iter()
        .filter(|&t| values[t] > TAU_MIN_LEVEL && global - values[t] < TAU_WINDOW)
        .max()
}

fn first_double_increase(values: &[f64], after: Option<usize>) -> Option<usize> {
    let n = values.len();
    if n < 3 {
        return None;
    }
    let lo = after.map_or(1, |a| (a + 1).max(1));
    (lo..n - 1).find(|&t| {
        values[t] > values[t - 1]
            && values[t + 1] > values[t]
            && values[t - 1..=t + 1].iter().all(|v| *v < LAMBDA_LEVEL)
    })
}

/// Non-overlapping block means aligned to the first value; a trailing
/// partial block is averaged over what it has.
pub fn block_means(values: &[f64], block: usize) -> Vec<f64> {
    values
        .chunks(block)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

fn find_lambda_after(values: &[f64], annual: bool, after: Option<usize>) -> Option<usize> {
    if annual {
        let means = block_means(values, ANNUAL_BLOCK);
        // a block qualifies only if it starts after `after`
        let after_block = after.map(|a| a / ANNUAL_BLOCK);
        first_double_increase(&means, after_block).map(|k| k * ANNUAL_BLOCK)
    } else {
        first_double_increase(values, after)
    }
}

/// Start period of Phase III, or `None` when not reached. Annual series
/// are averaged over five-year blocks first; the result is the first year
/// of the qualifying block.
pub fn find_lambda(values: &[f64], annual: bool) -> Option<usize> {
    find_lambda_after(values, annual, None)
}

/// Both markers, with `lambda` searched strictly after `tau`.
pub fn find_markers(values: &[f64], annual: bool) -> PhaseMarkers {
    let tau = find_tau(values);
    let lambda = find_lambda_after(values, annual, tau);
    PhaseMarkers { tau, lambda }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Independent scan: enumerate each index, decide whether it
    /// is a local maximum by comparing with neighbours, keep the latest
    /// qualifying one.
    fn tau_oracle(v: &[f64]) -> Option<usize> {
        let m = v.iter().cloned().fold(f64::MIN, f64::max);
        let mut best = None;
        for t in 0..v.len() {
            let is_max = match t {
                0 => v[0] >= v[1],
                _ if t == v.len() - 1 => v[t] >= v[t - 1],
                _ => v[t] >= v[t - 1] && v[t] >= v[t + 1],
            };
            if is_max && v[t] > 5.5 && m - v[t] < 0.5 {
                best = Some(t);
            }
        }
        best
    }

    fn lambda_oracle_5y(v: &[f64]) -> Option<usize> {
        for t in 1..v.len() - 1 {
            if v[t] > v[t - 1] && v[t + 1] > v[t] && v[t - 1] < 2.0 && v[t] < 2.0 && v[t + 1] < 2.0 {
                return Some(t);
            }
        }
        None
    }

    fn lambda_oracle_annual(v: &[f64]) -> Option<usize> {
        let mut means = Vec::new();
        let mut i = 0;
        while i < v.len() {
            let end = (i + 5).min(v.len());
            means.push(v[i..end].iter().sum::<f64>() / (end - i) as f64);
            i = end;
        }
        if means.len() < 3 {
            return None;
        }
        lambda_oracle_5y(&means).map(|k| 5 * k)
    }

    #[test]
    fn tau_examples() {
        assert_eq!(find_tau(&[7.0, 7.0, 6.5, 6.0, 5.5]), Some(1));
        assert_eq!(find_tau(&[4.0, 3.5, 3.0]), None);
        assert_eq!(find_tau(&[6.0, 7.0, 6.8, 6.9, 6.0]), Some(3));
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(find_lambda(&[2.5, 1.9, 1.5, 1.6, 1.7], false), Some(3));
        assert_eq!(find_lambda(&[3.0, 2.5, 2.0, 1.8, 1.6], false), None);
    }

    #[test]
    fn annual_lambda_uses_block_means() {
        // 15 years flat at 1.5, then 10 years rising by 0.01 a year
        let mut v = vec![1.5; 15];
        v.extend((1..=10).map(|k| 1.5 + 0.01 * k as f64));
        // block means: 1.5, 1.5, 1.5, 1.53, 1.58 -> increases at blocks 3 and 4
        assert_eq!(lambda_oracle_annual(&v), Some(15));
        assert_eq!(find_lambda(&v, true), Some(15));
    }

    #[test]
    fn oracle_agreement_on_random_series() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let n = rng.random_range(5..=71);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..9.0)).collect();
            assert_eq!(find_tau(&v), tau_oracle(&v), "{v:?}");
            assert_eq!(find_lambda(&v, false), lambda_oracle_5y(&v), "{v:?}");
            assert_eq!(find_lambda(&v, true), lambda_oracle_annual(&v), "{v:?}");
        }
    }

    proptest! {
        #[test]
        fn lambda_never_at_ends(v in proptest::collection::vec(0.8f64..3.0, 3..71), annual in any::<bool>()) {
            if let Some(l) = find_lambda(&v, annual) {
                prop_assert!(l > 0 && l < v.len() - 1);
            }
        }

        #[test]
        fn markers_are_ordered(v in proptest::collection::vec(0.8f64..9.0, 3..71), annual in any::<bool>()) {
            let m = find_markers(&v, annual);
            if let (Some(t), Some(l)) = (m.tau, m.lambda) {
                prop_assert!(t < l);
            }
        }
    }
}
