//! Error measures used for scoring candidate events and for evaluation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::Timestamp;

/// Denominators of `mede` ratios are floored at this magnitude.
pub const EPS_RATIO: f64 = 1e-9;

/// Above this many pairs `mede` samples pairs uniformly instead of
/// enumerating the full cross product.
pub const MEDE_PAIR_CAP: usize = 1_000_000;

/// Mean absolute error over the window divided by the mean absolute actual
/// value. A single denominator keeps individual zero actuals harmless.
pub fn mape0(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.is_empty() || actual.len() != predicted.len() {
        return Err(Error::EmptyWindow);
    }
    let n = actual.len() as f64;
    let err: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).abs()).sum::<f64>() / n;
    let scale: f64 = actual.iter().map(|a| a.abs()).sum::<f64>() / n;
    if scale == 0.0 {
        return Err(Error::AllZeroActuals);
    }
    Ok(err / scale)
}

/// Median of `numer[i] / denom[j]` over every pair `(i, j)`.
pub fn mede(numer: &[f64], denom: &[f64]) -> Result<f64> {
    mede_with(numer, denom, MEDE_PAIR_CAP, 0)
}

pub fn mede_with(numer: &[f64], denom: &[f64], pair_cap: usize, seed: u64) -> Result<f64> {
    if numer.is_empty() || denom.is_empty() {
        return Err(Error::EmptySeries);
    }
    let floor = |d: f64| {
        if d.abs() < EPS_RATIO {
            EPS_RATIO.copysign(if d == 0.0 { 1.0 } else { d })
        } else {
            d
        }
    };
    let total = numer.len().saturating_mul(denom.len());
    let mut ratios: Vec<f64> = if total <= pair_cap {
        let mut v = Vec::with_capacity(total);
        for &d in denom {
            let d = floor(d);
            v.extend(numer.iter().map(|&n| n / d));
        }
        v
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..pair_cap)
            .map(|_| {
                let n = numer[rng.random_range(0..numer.len())];
                let d = denom[rng.random_range(0..denom.len())];
                n / floor(d)
            })
            .collect()
    };
    Ok(median_in_place(&mut ratios).expect("non-empty"))
}

/// Median with the even-count convention of averaging the two central
/// values. Reorders `values`.
pub fn median_in_place(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((below + upper) / 2.0)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    median_in_place(&mut values.to_vec())
}

/// Root-mean-square difference over the timestamps the two series share.
pub fn rmse(a: &[(Timestamp, f64)], b: &[(Timestamp, f64)]) -> Result<f64> {
    let diffs = aligned_diffs(a, b)?;
    Ok((diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt())
}

pub fn mae(a: &[(Timestamp, f64)], b: &[(Timestamp, f64)]) -> Result<f64> {
    let diffs = aligned_diffs(a, b)?;
    Ok(diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64)
}

fn aligned_diffs(a: &[(Timestamp, f64)], b: &[(Timestamp, f64)]) -> Result<Vec<f64>> {
    let lookup: BTreeMap<Timestamp, f64> = b.iter().copied().collect();
    let mut pairs: Vec<(Timestamp, f64)> = a
        .iter()
        .filter_map(|(t, v)| lookup.get(t).map(|w| (*t, v - w)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    // Summation order fixed by timestamp so the result ignores input order.
    pairs.sort_by_key(|p| p.0);
    Ok(pairs.into_iter().map(|p| p.1).collect())
}

/// Linear-interpolation quantile (Hyndman-Fan type 7).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Span;
    use proptest::prelude::*;

    fn series(vals: &[f64]) -> Vec<(Timestamp, f64)> {
        vals.iter()
            .enumerate()
            .map(|(i, &v)| (Timestamp::from_unix(0) + Span::days(i as i64), v))
            .collect()
    }

    #[test]
    fn mape0_examples() {
        assert_eq!(mape0(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(mape0(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        let m = mape0(&[1.0; 4], &[1.05; 4]).unwrap();
        assert!((m - 0.05).abs() < 1e-12);
        assert!(matches!(mape0(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::AllZeroActuals)));
        assert!(matches!(mape0(&[], &[]), Err(Error::EmptyWindow)));
    }

    #[test]
    fn mede_examples() {
        assert_eq!(mede(&[3.0; 4], &[3.0; 7]).unwrap(), 1.0);
        assert_eq!(mede(&[2.0], &[1.0, 4.0]).unwrap(), 1.25);
        assert_eq!(mede(&[7.5], &[2.5]).unwrap(), 3.0);
        assert!(matches!(mede(&[], &[1.0]), Err(Error::EmptySeries)));
        assert!(mede(&[1.0], &[0.0]).unwrap().is_finite());
    }

    #[test]
    fn mede_subsampling_is_seeded() {
        let a: Vec<f64> = (1..=300).map(|i| i as f64).collect();
        let b: Vec<f64> = (1..=200).map(|i| 1.0 + i as f64 / 100.0).collect();
        let exact = mede(&a, &b).unwrap();
        let s1 = mede_with(&a, &b, 20_000, 5).unwrap();
        let s2 = mede_with(&a, &b, 20_000, 5).unwrap();
        assert_eq!(s1, s2);
        assert!((s1 - exact).abs() / exact < 0.05);
    }

    #[test]
    fn rmse_examples() {
        let a = series(&[0.2, 0.5, 0.9]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let shifted: Vec<_> = a.iter().map(|(t, v)| (*t, v - 0.006)).collect();
        assert!((rmse(&a, &shifted).unwrap() - 0.006).abs() < 1e-12);
        assert_eq!(rmse(&series(&[0.0, 1.0]), &series(&[1.0, 0.0])).unwrap(), 1.0);
        let far = vec![(Timestamp::from_unix(1), 1.0)];
        assert!(matches!(rmse(&a, &far), Err(Error::NoOverlap)));
    }

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile(&v, 0.9).unwrap() - 9.1).abs() < 1e-12);
        for q in [0.01, 0.5, 0.99] {
            assert_eq!(quantile(&[4.2], q).unwrap(), 4.2);
            assert_eq!(quantile(&[3.0; 6], q).unwrap(), 3.0);
        }
        assert!(matches!(quantile(&[], 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn mape0_scale_invariant(
            pairs in proptest::collection::vec((0.1f64..100.0, 0.0f64..100.0), 1..30),
            c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        ) {
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = mape0(&a, &p).unwrap();
            let ca: Vec<f64> = a.iter().map(|x| c * x).collect();
            let cp: Vec<f64> = p.iter().map(|x| c * x).collect();
            prop_assert!((mape0(&ca, &cp).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn mede_scales_with_numerator(
            a in proptest::collection::vec(0.1f64..10.0, 1..15),
            b in proptest::collection::vec(0.1f64..10.0, 1..15),
            c in 0.01f64..100.0,
        ) {
            let base = mede(&a, &b).unwrap();
            let ca: Vec<f64> = a.iter().map(|x| c * x).collect();
            prop_assert!((mede(&ca, &b).unwrap() - c * base).abs() <= 1e-9 * c * base);
        }

        #[test]
        fn mede_reciprocity_for_odd_products(
            a in proptest::collection::vec(0.1f64..10.0, 1..8),
            b in proptest::collection::vec(0.1f64..10.0, 1..8),
        ) {
            let a = if a.len() % 2 == 0 { a[1..].to_vec() } else { a };
            let b = if b.len() % 2 == 0 { b[1..].to_vec() } else { b };
            let prod = mede(&a, &b).unwrap() * mede(&b, &a).unwrap();
            prop_assert!((prod - 1.0).abs() < 1e-12);
        }

        #[test]
        fn quantile_monotone(v in proptest::collection::vec(-1e3f64..1e3, 1..40), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(quantile(&v, lo).unwrap() <= quantile(&v, hi).unwrap());
        }

        #[test]
        fn metrics_ignore_order(v in proptest::collection::vec(0.1f64..10.0, 2..20), q in 0.01f64..0.99) {
            let mut rev = v.clone();
            rev.reverse();
            prop_assert_eq!(quantile(&v, q).unwrap(), quantile(&rev, q).unwrap());
            prop_assert_eq!(mede(&v, &v[..1]).unwrap(), mede(&rev, &v[..1]).unwrap());
            let s = series(&v);
            let mut s_rev = s.clone();
            s_rev.reverse();
            let ones = series(&vec![1.0; v.len()]);
            prop_assert_eq!(rmse(&s, &ones).unwrap(), rmse(&s_rev, &ones).unwrap());
        }
    }
}
