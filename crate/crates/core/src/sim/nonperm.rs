//! Textbook p-values that treat every observation as independent. They are
//! wrong for clustered data and serve as the "what if we ignored the
//! clusters" comparison in the simulation tables.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::stats::{t_statistic, wilcoxon_twice, TwoSampleView};
use crate::{Error, Real, Result};

/// Lower-tail p-values for "occasion 1 is smaller" from the pooled t test
/// (`n0 + n1 − 2` degrees of freedom) and the normal approximation to the
/// rank-sum count, with the variance corrected for ties.
pub fn nonperm_pvalues<T: Real>(view: &TwoSampleView<T>) -> Result<(f64, f64)> {
    let (n0, n1) = (view.n0(), view.n1());
    if n0 < 2 || n1 < 2 {
        return Err(Error::DegenerateSample("each occasion needs at least two observations"));
    }
    let t = t_statistic(view)?.as_f64();
    let df = (n0 + n1 - 2) as f64;
    let t_p = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").cdf(t);

    let w = wilcoxon_twice(view) as f64 / 2.0;
    let (a, b) = (n0 as f64, n1 as f64);
    let total = a + b;
    let ties = tie_correction(view);
    let variance = a * b / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)));
    if !(variance > 0.0) {
        return Err(Error::DegenerateSample("all observations are tied"));
    }
    let z = (w - a * b / 2.0) / variance.sqrt();
    let w_p = Normal::new(0.0, 1.0).expect("standard normal").cdf(z);
    Ok((t_p, w_p))
}

/// `Σ (t³ − t)` over groups of tied values in the pooled sample.
fn tie_correction<T: Real>(view: &TwoSampleView<T>) -> f64 {
    let mut pooled: Vec<T> = view.sample0.iter().chain(&view.sample1).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    pooled
        .chunk_by(|x, y| x == y)
        .map(|group| {
            let t = group.len() as f64;
            t * t * t - t
        })
        .sum()
}
