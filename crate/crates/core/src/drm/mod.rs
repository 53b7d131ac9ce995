//! Density ratio model (DRM) fits by composite empirical likelihood.
//!
//! All occasions share one set of support points (the pooled observations)
//! and occasion `k` reweights them by `exp(θ_k·q(y))`. The unconstrained fit
//! gives the fitted CDFs and quantiles behind the EL statistic; the fit
//! under "occasions `a` and `b` share their `α` percentile" gives the
//! likelihood ratio (ELR) statistic.

mod basis;
mod hull;
mod model;

pub use basis::Basis;
pub use hull::{convex_hull_check, convex_hull_check_model};
pub use model::{DrmModel, SolverOptions};

use model::QuantileConstraint;

use crate::panel::RotatingPanelSample;
use crate::stats::{check_level, empirical_quantile};
use crate::{Error, Real, Result};

/// Unconstrained DRM fit.
#[derive(Debug, Clone)]
pub struct DrmFit<T> {
    pub basis: Basis,
    /// `(K+1) × d`, row 0 identically zero.
    pub theta: Vec<Vec<T>>,
    /// `p_i` for every pooled observation, in pooled order.
    pub weights: Vec<T>,
    pub loglik: T,
    pub iterations: usize,
    /// `p_i exp(θ_k·q(y_i))`, row per occasion.
    masses: Vec<Vec<T>>,
    points: Vec<T>,
    /// Pooled indices sorted by value.
    order: Vec<usize>,
    sorted: Vec<T>,
    /// Running sums of `masses[k]` along `order`.
    cumulative: Vec<Vec<T>>,
    /// Standardized parameters, the constrained solver's starting point.
    start: Vec<T>,
}

impl<T: Real> DrmFit<T> {
    fn from_solution(model: &DrmModel<T>, theta: Vec<T>, loglik: T, iterations: usize) -> Result<Self> {
        let (weights, masses) =
            model.weights(&theta, None).ok_or(Error::ProfileFitFailed { iterations, residual: f64::INFINITY })?;
        let points = model.points().to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| points[i].partial_cmp(&points[j]).expect("finite values"));
        let sorted = order.iter().map(|&i| points[i]).collect();
        let cumulative = masses
            .iter()
            .map(|row| {
                let mut acc = T::zero();
                order
                    .iter()
                    .map(|&i| {
                        acc += row[i];
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(DrmFit {
            basis: model.basis(),
            theta: model.raw_theta(&theta),
            weights,
            loglik,
            iterations,
            masses,
            points,
            order,
            sorted,
            cumulative,
            start: theta,
        })
    }

    pub fn num_occasions(&self) -> usize {
        self.theta.len()
    }

    /// Pooled support points, in the same order as [`weights`](Self::weights).
    pub fn points(&self) -> &[T] {
        &self.points
    }

    /// Fitted point masses of occasion `k`, aligned with the pooled points.
    pub fn masses(&self, k: usize) -> &[T] {
        &self.masses[k]
    }

    /// `Ǧ_k(y)`: fitted mass of occasion `k` at or below `y`.
    pub fn cdf(&self, k: usize, y: T) -> T {
        let below = self.sorted.partition_point(|&v| v <= y);
        if below == 0 {
            T::zero()
        } else {
            self.cumulative[k][below - 1]
        }
    }

    /// Smallest pooled point where `Ǧ_k` reaches `level` (`0 < level ≤ 1`).
    pub fn quantile(&self, k: usize, level: f64) -> Result<T> {
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::InvalidLevel(level));
        }
        // tolerate solver rounding so that level 1 lands on the maximum
        let target = T::lit(level - 1e-10);
        let cum = &self.cumulative[k];
        let idx = cum.partition_point(|&c| c < target).min(cum.len() - 1);
        Ok(self.sorted[idx])
    }

    /// Largest deviation from the normalization constraints,
    /// `max_k |Σ_i p_i exp(θ_k·q(y_i)) − 1|`.
    pub fn normalization_residual(&self) -> T {
        self.cumulative.iter().map(|c| (c[c.len() - 1] - T::one()).abs()).fold(T::zero(), T::max)
    }

    /// Pooled indices ordered by value.
    pub fn sorted_indices(&self) -> &[usize] {
        &self.order
    }
}

/// DRM fit under the restriction that occasions `a` and `b` share the
/// `level` percentile `xi_hat`.
#[derive(Debug, Clone)]
pub struct ConstrainedFit<T> {
    pub basis: Basis,
    pub pair: (usize, usize),
    pub theta: Vec<Vec<T>>,
    /// Multipliers of the two percentile constraints, in the scale where the
    /// weight denominator is `Σ_s n_s φ_s(y) [1 + λ_s (1(y ≤ ξ) − α)]`.
    pub lambda: [T; 2],
    /// Multipliers of the normalization constraints; analytically the
    /// occasion sizes.
    pub t_mult: Vec<T>,
    pub xi_hat: T,
    pub level: f64,
    pub weights: Vec<T>,
    pub loglik: T,
    pub iterations: usize,
    /// Max-norm of the scaled stationarity (score) equations at return.
    pub stationarity_residual: T,
    masses: Vec<Vec<T>>,
    below: Vec<bool>,
}

impl<T: Real> ConstrainedFit<T> {
    /// Residuals of the normalization equations (one per occasion) followed
    /// by the two percentile equations.
    pub fn constraint_residuals(&self) -> Vec<T> {
        let mut out: Vec<T> = self.masses.iter().map(|row| row.iter().copied().sum::<T>() - T::one()).collect();
        for s in [self.pair.0, self.pair.1] {
            let below: T = self.masses[s].iter().zip(&self.below).filter(|(_, &b)| b).map(|(&m, _)| m).sum();
            out.push(below - T::lit(self.level));
        }
        out
    }

    pub fn max_constraint_residual(&self) -> T {
        self.constraint_residuals().into_iter().fold(T::zero(), |m, r| m.max(r.abs()))
    }

    /// Fitted point masses of occasion `k`, aligned with the pooled points.
    pub fn masses(&self, k: usize) -> &[T] {
        &self.masses[k]
    }
}

pub fn fit_profile<T: Real>(sample: &RotatingPanelSample<T>, basis: Basis) -> Result<DrmFit<T>> {
    fit_profile_model(&DrmModel::new(sample, basis)?)
}

pub fn fit_profile_model<T: Real>(model: &DrmModel<T>) -> Result<DrmFit<T>> {
    let (theta, loglik, iterations) = model.solve_profile(&SolverOptions::for_scalar::<T>())?;
    DrmFit::from_solution(model, theta, loglik, iterations)
}

pub fn fitted_cdf<T: Real>(fit: &DrmFit<T>, occasion: usize, y: T) -> T {
    fit.cdf(occasion, y)
}

pub fn el_quantile<T: Real>(fit: &DrmFit<T>, occasion: usize, level: f64) -> Result<T> {
    fit.quantile(occasion, level)
}

/// `ξ_level(Ǧ_1) − ξ_level(Ǧ_0)` from a fit on all occasions.
pub fn el_statistic<T: Real>(sample: &RotatingPanelSample<T>, basis: Basis, level: f64) -> Result<T> {
    el_statistic_between(sample, basis, level, (0, 1))
}

/// `ξ_level(Ǧ_b) − ξ_level(Ǧ_a)` for `pair = (a, b)`.
pub fn el_statistic_between<T: Real>(
    sample: &RotatingPanelSample<T>,
    basis: Basis,
    level: f64,
    pair: (usize, usize),
) -> Result<T> {
    check_level(level)?;
    check_pair(pair, sample.num_occasions())?;
    el_from_fit(&fit_profile(sample, basis)?, level, pair)
}

pub fn el_from_fit<T: Real>(fit: &DrmFit<T>, level: f64, pair: (usize, usize)) -> Result<T> {
    Ok(fit.quantile(pair.1, level)? - fit.quantile(pair.0, level)?)
}

/// Empirical `level` quantile of the union of occasions 0 and 1.
pub fn pooled_percentile<T: Real>(sample: &RotatingPanelSample<T>, level: f64) -> Result<T> {
    pooled_percentile_between(sample, level, (0, 1))
}

pub fn pooled_percentile_between<T: Real>(
    sample: &RotatingPanelSample<T>,
    level: f64,
    pair: (usize, usize),
) -> Result<T> {
    check_pair(pair, sample.num_occasions())?;
    let mut pooled = sample.values(pair.0);
    pooled.extend(sample.values(pair.1));
    empirical_quantile(&pooled, level)
}

fn check_pair(pair: (usize, usize), num_occasions: usize) -> Result<()> {
    for occasion in [pair.0, pair.1] {
        if occasion >= num_occasions {
            return Err(Error::OccasionOutOfRange { occasion, num_occasions });
        }
    }
    if pair.0 == pair.1 {
        return Err(Error::SameOccasion(pair.0));
    }
    Ok(())
}

pub fn fit_constrained<T: Real>(
    sample: &RotatingPanelSample<T>,
    basis: Basis,
    level: f64,
) -> Result<ConstrainedFit<T>> {
    fit_constrained_between(sample, basis, level, (0, 1))
}

pub fn fit_constrained_between<T: Real>(
    sample: &RotatingPanelSample<T>,
    basis: Basis,
    level: f64,
    pair: (usize, usize),
) -> Result<ConstrainedFit<T>> {
    check_level(level)?;
    check_pair(pair, sample.num_occasions())?;
    let model = DrmModel::new(sample, basis)?;
    let profile = fit_profile_model(&model)?;
    fit_constrained_model(&model, &profile, level, pair)
}

/// Constrained fit started from an existing profile fit of the same model.
pub fn fit_constrained_model<T: Real>(
    model: &DrmModel<T>,
    profile: &DrmFit<T>,
    level: f64,
    pair: (usize, usize),
) -> Result<ConstrainedFit<T>> {
    check_level(level)?;
    check_pair(pair, model.num_occasions())?;
    let mut pooled: Vec<T> = Vec::new();
    for (i, &y) in model.points.iter().enumerate() {
        if model.occasion[i] == pair.0 || model.occasion[i] == pair.1 {
            pooled.push(y);
        }
    }
    let xi = empirical_quantile(&pooled, level)?;
    for s in [pair.0, pair.1] {
        let own = model.points.iter().zip(&model.occasion).filter(|(_, &k)| k == s).map(|(&y, _)| y);
        let (min, max) = own.fold((T::infinity(), T::neg_infinity()), |(lo, hi), y| (lo.min(y), hi.max(y)));
        if xi < min || xi > max {
            return Err(Error::PercentileOutsideRange {
                xi: xi.as_f64(),
                occasion: s,
                min: min.as_f64(),
                max: max.as_f64(),
            });
        }
    }

    let constraint =
        QuantileConstraint { pair, level: T::lit(level), below: model.points.iter().map(|&y| y <= xi).collect() };
    let mut start = profile.start.clone();
    start.extend([T::zero(), T::zero()]);
    let opts = SolverOptions::constrained::<T>();
    let (x, loglik, iterations) = match model.solve_constrained(&constraint, start, &opts) {
        Ok(done) => done,
        Err((last, iterations, residual)) => {
            let raw = model.raw_theta(&last[..model.theta_len()]);
            return Err(if convex_hull_check_model(model, &raw, level, xi, pair) {
                Error::SolverDiverged { iterations, residual: residual.as_f64() }
            } else {
                Error::ConvexHullViolated
            });
        }
    };

    let nt = model.theta_len();
    let lambda = [x[nt], x[nt + 1]];
    let (weights, masses) = model
        .weights(&x[..nt], Some((&constraint, lambda)))
        .ok_or(Error::SolverDiverged { iterations, residual: f64::INFINITY })?;
    let scales = model.unknown_scales(Some(&constraint));
    let eval = model.evaluate(&x, Some(&constraint), false).expect("converged point lies in the domain");
    let stationarity_residual = model.scaled_residual(&eval.grad, &scales);
    let t_mult = (0..model.num_occasions())
        .map(|s| {
            let lam = if s == pair.0 {
                lambda[0]
            } else if s == pair.1 {
                lambda[1]
            } else {
                T::zero()
            };
            (0..weights.len())
                .map(|i| {
                    let c = if constraint.below[i] { T::one() - constraint.level } else { -constraint.level };
                    masses[s][i] * model.counts[s] * (T::one() + lam * c)
                })
                .sum()
        })
        .collect();

    Ok(ConstrainedFit {
        basis: model.basis(),
        pair,
        theta: model.raw_theta(&x[..nt]),
        lambda,
        t_mult,
        xi_hat: xi,
        level,
        weights,
        loglik,
        iterations,
        stationarity_residual,
        masses,
        below: constraint.below,
    })
}

/// `loglik(profile) − loglik(constrained)` for occasions 0 and 1.
pub fn elr_statistic<T: Real>(sample: &RotatingPanelSample<T>, basis: Basis, level: f64) -> Result<T> {
    elr_statistic_between(sample, basis, level, (0, 1))
}

pub fn elr_statistic_between<T: Real>(
    sample: &RotatingPanelSample<T>,
    basis: Basis,
    level: f64,
    pair: (usize, usize),
) -> Result<T> {
    check_level(level)?;
    check_pair(pair, sample.num_occasions())?;
    let model = DrmModel::new(sample, basis)?;
    let profile = fit_profile_model(&model)?;
    elr_from_fit(&model, &profile, level, pair)
}

pub fn elr_from_fit<T: Real>(model: &DrmModel<T>, profile: &DrmFit<T>, level: f64, pair: (usize, usize)) -> Result<T> {
    let constrained = fit_constrained_model(model, profile, level, pair)?;
    Ok(profile.loglik - constrained.loglik)
}

/// ELR carrying the direction of the departure: positive when occasion `b`
/// has more fitted mass than occasion `a` at or below the pooled percentile
/// (its percentile is lower), negative otherwise. Large values point to a
/// downward shift of `b`, matching a lower-tailed EL or Wilcoxon test.
pub fn signed_elr_from_fit<T: Real>(
    model: &DrmModel<T>,
    profile: &DrmFit<T>,
    level: f64,
    pair: (usize, usize),
) -> Result<T> {
    let constrained = fit_constrained_model(model, profile, level, pair)?;
    let elr = profile.loglik - constrained.loglik;
    let xi = constrained.xi_hat;
    let lower = profile.cdf(pair.1, xi) >= profile.cdf(pair.0, xi);
    Ok(if lower { elr } else { -elr })
}

pub fn signed_elr_statistic<T: Real>(sample: &RotatingPanelSample<T>, basis: Basis, level: f64) -> Result<T> {
    let model = DrmModel::new(sample, basis)?;
    let profile = fit_profile_model(&model)?;
    signed_elr_from_fit(&model, &profile, level, (0, 1))
}
