//! Cluster-blind two-sample statistics: pooled t, Wilcoxon rank-sum count and
//! the difference of empirical quantiles.
//!
//! These statistics deliberately ignore the cluster structure; their
//! validity under clustering comes from the permutation scheme in
//! [`crate::permute`], not from their reference distributions.

use crate::panel::{ClusterId, RotatingPanelSample};
use crate::{Error, Real, Result};

/// Flat values of two occasions, each value tagged with its cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleView<T> {
    pub sample0: Vec<T>,
    pub labels0: Vec<ClusterId>,
    pub sample1: Vec<T>,
    pub labels1: Vec<ClusterId>,
}

impl<T: Real> TwoSampleView<T> {
    /// Occasions `first` and `second` of `sample`, in that role order.
    pub fn from_sample(sample: &RotatingPanelSample<T>, first: usize, second: usize) -> Result<Self> {
        sample.check_occasion(first)?;
        sample.check_occasion(second)?;
        let flatten = |k| {
            let mut values = Vec::new();
            let mut labels = Vec::new();
            for obs in sample.clusters(k) {
                values.extend_from_slice(&obs.values);
                labels.extend(std::iter::repeat_n(obs.cluster_id, obs.values.len()));
            }
            (values, labels)
        };
        let (sample0, labels0) = flatten(first);
        let (sample1, labels1) = flatten(second);
        Ok(TwoSampleView { sample0, labels0, sample1, labels1 })
    }

    /// A view without cluster labels (every value its own cluster).
    pub fn unclustered(sample0: Vec<T>, sample1: Vec<T>) -> Self {
        let labels0 = (0..sample0.len() as ClusterId).collect();
        let labels1 = (0..sample1.len() as ClusterId).collect();
        TwoSampleView { sample0, labels0, sample1, labels1 }
    }

    pub fn n0(&self) -> usize {
        self.sample0.len()
    }

    pub fn n1(&self) -> usize {
        self.sample1.len()
    }

    pub fn swapped(&self) -> Self {
        TwoSampleView {
            sample0: self.sample1.clone(),
            labels0: self.labels1.clone(),
            sample1: self.sample0.clone(),
            labels1: self.labels0.clone(),
        }
    }
}

fn mean_and_ss<T: Real>(values: &[T]) -> (T, T) {
    let n = T::lit(values.len() as f64);
    let mean = values.iter().copied().sum::<T>() / n;
    let ss = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (mean, ss)
}

/// `(ȳ1 − ȳ0) / sqrt((1/n0 + 1/n1) s²)` with the pooled variance `s²`
/// computed with divisor `n0 + n1 − 2`.
pub fn t_statistic<T: Real>(view: &TwoSampleView<T>) -> Result<T> {
    let (n0, n1) = (view.n0(), view.n1());
    if n0 < 2 || n1 < 2 {
        return Err(Error::DegenerateSample("t statistic needs at least two values per occasion"));
    }
    let (m0, ss0) = mean_and_ss(&view.sample0);
    let (m1, ss1) = mean_and_ss(&view.sample1);
    let s2 = (ss0 + ss1) / T::lit((n0 + n1 - 2) as f64);
    if !(s2 > T::zero()) {
        return Err(Error::DegenerateSample("zero pooled variance"));
    }
    let scale = (T::one() / T::lit(n0 as f64) + T::one() / T::lit(n1 as f64)) * s2;
    Ok((m1 - m0) / scale.sqrt())
}

/// Twice the Wilcoxon count: `2 #{y1 > y0} + #{y1 = y0}` over all pairs.
/// Kept as an integer so that the tie convention stays exact.
pub fn wilcoxon_twice<T: Real>(view: &TwoSampleView<T>) -> u64 {
    let mut zero = view.sample0.clone();
    let mut one = view.sample1.clone();
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("finite values");
    zero.sort_unstable_by(cmp);
    one.sort_unstable_by(cmp);

    let mut below = 0usize;
    let mut twice = 0u64;
    let mut i = 0;
    while i < one.len() {
        let v = one[i];
        let mut run = 1;
        while i + run < one.len() && one[i + run] == v {
            run += 1;
        }
        while below < zero.len() && zero[below] < v {
            below += 1;
        }
        let mut equal = 0;
        while below + equal < zero.len() && zero[below + equal] == v {
            equal += 1;
        }
        twice += run as u64 * (2 * below + equal) as u64;
        i += run;
    }
    twice
}

/// `W = Σ 1(y1 > y0)` over all cross pairs, tied pairs counting 1/2.
pub fn wilcoxon_statistic<T: Real>(view: &TwoSampleView<T>) -> T {
    T::lit(wilcoxon_twice(view) as f64 / 2.0)
}

/// Index (0-based) of the order statistic returned by [`empirical_quantile`]
/// for `count` values: `max(1, ceil(level · count)) − 1`.
pub(crate) fn quantile_rank(level: f64, count: usize) -> usize {
    let target = level * count as f64;
    // absorb representation error such as 0.05 * 360 = 18.000000000000004
    let rank = (target - 1e-9 * target.max(1.0)).ceil().max(1.0) as usize;
    rank.min(count) - 1
}

pub(crate) fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(level))
    }
}

/// Left-continuous inverse of the empirical CDF: the smallest order
/// statistic `x_(j)` with `j ≥ ceil(level · count)`.
pub fn empirical_quantile<T: Real>(values: &[T], level: f64) -> Result<T> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_level(level)?;
    let mut sorted = values.to_vec();
    let rank = quantile_rank(level, sorted.len());
    let (_, nth, _) = sorted.select_nth_unstable_by(rank, |a, b| a.partial_cmp(b).expect("finite values"));
    Ok(*nth)
}

/// `ξ_level(Ĝ1) − ξ_level(Ĝ0)` with empirical quantiles.
pub fn em_statistic<T: Real>(view: &TwoSampleView<T>, level: f64) -> Result<T> {
    Ok(empirical_quantile(&view.sample1, level)? - empirical_quantile(&view.sample0, level)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn view(a: &[f64], b: &[f64]) -> TwoSampleView<f64> {
        TwoSampleView::unclustered(a.to_vec(), b.to_vec())
    }

    fn brute_twice(v: &TwoSampleView<f64>) -> u64 {
        let mut twice = 0;
        for &y1 in &v.sample1 {
            for &y0 in &v.sample0 {
                twice += if y1 > y0 {
                    2
                } else if y1 == y0 {
                    1
                } else {
                    0
                };
            }
        }
        twice
    }

    /// Textbook two-sample t via sums of squares, computed independently.
    fn reference_t(a: &[f64], b: &[f64]) -> f64 {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        let qa: f64 = a.iter().map(|x| x * x).sum();
        let qb: f64 = b.iter().map(|x| x * x).sum();
        let sp = ((qa - sa * sa / na) + (qb - sb * sb / nb)) / (na + nb - 2.0);
        (sb / nb - sa / na) / (sp * (1.0 / na + 1.0 / nb)).sqrt()
    }

    #[test]
    fn t_statistic_examples() {
        assert_eq!(t_statistic(&view(&[1.0, 2.0, 4.0], &[4.0, 2.0, 1.0])).unwrap(), 0.0);
        let t = t_statistic(&view(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0])).unwrap();
        assert!((t - 1.5f64.sqrt()).abs() < 1e-12);
        assert!((t - reference_t(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0])).abs() < 1e-12);
        assert!(matches!(t_statistic(&view(&[2.0, 2.0], &[2.0, 2.0])), Err(Error::DegenerateSample(_))));
        assert!(t_statistic(&view(&[2.0], &[2.0, 3.0])).is_err());
    }

    #[test]
    fn wilcoxon_examples() {
        assert_eq!(wilcoxon_statistic(&view(&[1.0, 2.0], &[3.0, 4.0])), 4.0);
        assert_eq!(wilcoxon_statistic(&view(&[1.0, 3.0], &[2.0, 2.0])), 2.0);
        assert_eq!(wilcoxon_statistic(&view(&[5.0, 5.0], &[5.0, 5.0])), 2.0);
        assert_eq!(wilcoxon_statistic(&view(&[1.0], &[])), 0.0);
    }

    #[test]
    fn quantile_examples() {
        let hundred: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(empirical_quantile(&hundred, 0.05).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
        let pooled: Vec<f64> = (1..=360).map(f64::from).collect();
        assert_eq!(empirical_quantile(&pooled, 0.05).unwrap(), 18.0);
        assert!(matches!(empirical_quantile::<f64>(&[], 0.5), Err(Error::EmptyInput)));
        assert!(empirical_quantile(&[1.0], 1.0).is_err());
    }

    /// inf{y : F̂(y) ≥ α} by scanning candidate points.
    fn scan_quantile(values: &[f64], level: f64) -> f64 {
        let n = values.len() as f64;
        let mut candidates = values.to_vec();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        *candidates.iter().find(|&&y| values.iter().filter(|&&v| v <= y).count() as f64 / n >= level).unwrap()
    }

    #[test]
    fn em_statistic_examples() {
        let a: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(em_statistic(&view(&a, &a), 0.3).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        for level in [0.05, 0.5, 0.77] {
            assert_eq!(em_statistic(&view(&a, &shifted), level).unwrap(), 1.0);
        }
        let halves: Vec<f64> = a.iter().map(|v| v - 0.5).collect();
        assert_eq!(em_statistic(&view(&a, &halves), 0.05).unwrap(), -0.5);
    }

    proptest! {
        #[test]
        fn wilcoxon_matches_brute_force_and_swaps(
            a in prop::collection::vec(0i32..6, 0..25),
            b in prop::collection::vec(0i32..6, 0..25),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let v = view(&a, &b);
            prop_assert_eq!(wilcoxon_twice(&v), brute_twice(&v));
            prop_assert_eq!(
                wilcoxon_statistic(&v) + wilcoxon_statistic(&v.swapped()),
                (a.len() * b.len()) as f64
            );
        }

        #[test]
        fn t_is_antisymmetric(
            a in prop::collection::vec(-50.0f64..50.0, 2..20),
            b in prop::collection::vec(-50.0f64..50.0, 2..20),
        ) {
            let v = view(&a, &b);
            if let Ok(t) = t_statistic(&v) {
                let back = t_statistic(&v.swapped()).unwrap();
                prop_assert!((t + back).abs() <= 1e-9 * (1.0 + t.abs()));
                prop_assert!((t - reference_t(&a, &b)).abs() <= 1e-7 * (1.0 + t.abs()));
            }
        }

        #[test]
        fn quantile_is_monotone_and_affine_equivariant(
            values in prop::collection::vec(-100i32..100, 1..40),
            l1 in 0.01f64..0.99,
            l2 in 0.01f64..0.99,
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(empirical_quantile(&values, lo).unwrap() <= empirical_quantile(&values, hi).unwrap());
            let mapped: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
            let q = empirical_quantile(&values, l1).unwrap();
            prop_assert_eq!(empirical_quantile(&mapped, l1).unwrap(), scale * q + shift);
            prop_assert_eq!(q, scan_quantile(&values, l1));
        }

        #[test]
        fn statistics_ignore_value_order(
            a in prop::collection::vec(-20i32..20, 2..15),
            b in prop::collection::vec(-20i32..20, 2..15),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (mut pa, mut pb) = (a.clone(), b.clone());
            pa.shuffle(&mut rng);
            pb.shuffle(&mut rng);
            let (v, pv) = (view(&a, &b), view(&pa, &pb));
            prop_assert_eq!(wilcoxon_twice(&v), wilcoxon_twice(&pv));
            prop_assert_eq!(em_statistic(&v, 0.4).unwrap(), em_statistic(&pv, 0.4).unwrap());
            if let (Ok(t), Ok(pt)) = (t_statistic(&v), t_statistic(&pv)) {
                prop_assert!((t - pt).abs() < 1e-9 * (1.0 + t.abs()));
            }
        }
    }
}
