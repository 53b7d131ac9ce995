//! Dual (θ-only) form of the composite empirical likelihood under the
//! density ratio model, and the Newton solvers built on it.
//!
//! With `n_s` observations on occasion `s` and tilts `φ_s(y) = exp(θ_s·q(y))`
//! (`θ_0 = 0`), the profile log likelihood is maximised where
//!
//! ```text
//! h(θ, λ) = −Σ_i log D_i + Σ_s θ_s·Σ_{i∈s} q(y_i)
//! D_i     = Σ_s n_s φ_s(y_i) [1 + λ_s (1(y_i ≤ ξ) − α)]
//! ```
//!
//! is stationary, with weights `p_i = 1 / D_i`. Without the quantile
//! constraint (`λ = 0`) `h` is concave in θ. With it, the stationary point is
//! a saddle (maximum in θ, minimum in λ) and the stationarity equations are
//! exactly the normalization, quantile and score equations of the
//! constrained problem, the multipliers of the normalization constraints
//! having been eliminated as `t_s = n_s`.
//!
//! Features are standardized internally (same model space, better
//! conditioned Newton systems); θ is mapped back to the raw basis on output.

use crate::drm::Basis;
use crate::linalg::Matrix;
use crate::panel::RotatingPanelSample;
use crate::{Error, Real, Result};

/// Newton iteration limits. Residuals are measured on the equations scaled
/// by the occasion sizes, i.e. on `Σ p φ_s − 1` style quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Iterate until the max-norm residual is below this.
    pub tolerance: f64,
    /// Accept the last iterate when it stalls below this.
    pub acceptance: f64,
}

impl SolverOptions {
    pub fn for_scalar<T: Real>() -> Self {
        let eps = T::epsilon().as_f64();
        SolverOptions {
            max_iterations: 200,
            max_halvings: 30,
            tolerance: (1e-10f64).max(1e3 * eps),
            acceptance: (1e-8f64).max(1e4 * eps),
        }
    }

    /// Limits used by the constrained solver: 200 iterations, 30 halvings,
    /// tolerance `1e-9`, acceptance `1e-8` (for `f64`).
    pub fn constrained<T: Real>() -> Self {
        let eps = T::epsilon().as_f64();
        SolverOptions { tolerance: (1e-9f64).max(1e3 * eps), ..Self::for_scalar::<T>() }
    }
}

/// The two-occasion equal-percentile constraint.
#[derive(Debug, Clone)]
pub(crate) struct QuantileConstraint<T> {
    pub pair: (usize, usize),
    pub level: T,
    /// `1(y_i ≤ ξ)`
    pub below: Vec<bool>,
}

impl<T: Real> QuantileConstraint<T> {
    #[inline]
    fn centered(&self, i: usize) -> T {
        if self.below[i] {
            T::one() - self.level
        } else {
            -self.level
        }
    }
}

/// Solution, objective value and iteration count.
pub(crate) type Solved<T> = (Vec<T>, T, usize);
/// Last iterate, iteration count and its residual, after a failure.
pub(crate) type Stalled<T> = (Vec<T>, usize, T);

pub(crate) struct Evaluation<T> {
    pub value: T,
    /// ∇h (unscaled)
    pub grad: Vec<T>,
    pub hess: Option<Matrix<T>>,
}

/// Pooled design of a DRM fit: all observations, their occasion and their
/// standardized basis features.
#[derive(Debug, Clone)]
pub struct DrmModel<T> {
    pub(crate) basis: Basis,
    pub(crate) dim: usize,
    pub(crate) num_occasions: usize,
    pub(crate) points: Vec<T>,
    pub(crate) occasion: Vec<usize>,
    pub(crate) counts: Vec<T>,
    pub(crate) features: Vec<T>,
    centers: Vec<T>,
    scales: Vec<T>,
    /// `Σ_{i∈s} q̃(y_i)`, row-major by occasion.
    sums: Vec<T>,
}

impl<T: Real> DrmModel<T> {
    pub fn new(sample: &RotatingPanelSample<T>, basis: Basis) -> Result<Self> {
        let per_occasion: Vec<Vec<T>> = (0..sample.num_occasions()).map(|k| sample.values(k)).collect();
        Self::from_occasions(&per_occasion, basis)
    }

    /// Builds the design from per-occasion value lists.
    pub fn from_occasions(per_occasion: &[Vec<T>], basis: Basis) -> Result<Self> {
        let num_occasions = per_occasion.len();
        if num_occasions == 0 || per_occasion.iter().any(Vec::is_empty) {
            return Err(Error::DegenerateSample("every occasion needs at least one observation"));
        }
        let dim = basis.dim();
        let total: usize = per_occasion.iter().map(Vec::len).sum();
        let mut points = Vec::with_capacity(total);
        let mut occasion = Vec::with_capacity(total);
        let mut features = vec![T::zero(); total * dim];
        for (k, values) in per_occasion.iter().enumerate() {
            for &y in values {
                let i = points.len();
                basis.eval_into(y, &mut features[i * dim..(i + 1) * dim])?;
                points.push(y);
                occasion.push(k);
            }
        }

        let n = T::lit(total as f64);
        let mut centers = vec![T::zero(); dim];
        let mut scales = vec![T::one(); dim];
        for a in 1..dim {
            let mean = (0..total).map(|i| features[i * dim + a]).sum::<T>() / n;
            let var = (0..total)
                .map(|i| {
                    let z = features[i * dim + a] - mean;
                    z * z
                })
                .sum::<T>()
                / n;
            centers[a] = mean;
            if var > T::zero() {
                scales[a] = var.sqrt();
            }
            for i in 0..total {
                features[i * dim + a] = (features[i * dim + a] - mean) / scales[a];
            }
        }

        let mut sums = vec![T::zero(); num_occasions * dim];
        for i in 0..total {
            for a in 0..dim {
                sums[occasion[i] * dim + a] += features[i * dim + a];
            }
        }
        let counts = per_occasion.iter().map(|v| T::lit(v.len() as f64)).collect();
        Ok(DrmModel { basis, dim, num_occasions, points, occasion, counts, features, centers, scales, sums })
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn num_occasions(&self) -> usize {
        self.num_occasions
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub(crate) fn theta_len(&self) -> usize {
        (self.num_occasions - 1) * self.dim
    }

    /// Number of solver unknowns of the constrained problem: standardized
    /// θ_1..θ_K followed by `(λ_a, λ_b)`.
    pub fn num_unknowns(&self) -> usize {
        self.theta_len() + 2
    }

    /// Diagnostic for the analytic derivatives of the constrained dual at
    /// `x` (laid out as in [`num_unknowns`](Self::num_unknowns)). Returns the
    /// largest gap between the analytic gradient and Hessian and their
    /// central differences with the given step, relative to
    /// `max(|exact|, 1)`, or `None` if `x` is outside the domain.
    pub fn derivative_discrepancy(&self, x: &[T], level: T, xi: T, pair: (usize, usize), step: T) -> Option<T> {
        assert_eq!(x.len(), self.num_unknowns(), "one value per unknown");
        let qc = QuantileConstraint { pair, level, below: self.points.iter().map(|&y| y <= xi).collect() };
        let at = self.evaluate(x, Some(&qc), true)?;
        let hess = at.hess.expect("requested");
        let two = T::lit(2.0);
        let mut worst = T::zero();
        for j in 0..x.len() {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[j] += step;
            down[j] -= step;
            let eu = self.evaluate(&up, Some(&qc), false)?;
            let ed = self.evaluate(&down, Some(&qc), false)?;
            let gap = |fd: T, exact: T| (fd - exact).abs() / exact.abs().max(T::one());
            worst = worst.max(gap((eu.value - ed.value) / (two * step), at.grad[j]));
            for i in 0..x.len() {
                worst = worst.max(gap((eu.grad[i] - ed.grad[i]) / (two * step), hess.at(i, j)));
            }
        }
        Some(worst)
    }

    #[inline]
    fn feature(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// `φ_s(y_i)` for every occasion `s`, written into `phi`.
    #[inline]
    fn tilts(&self, theta: &[T], i: usize, phi: &mut [T]) {
        let q = self.feature(i);
        phi[0] = T::one();
        for s in 1..self.num_occasions {
            let row = &theta[(s - 1) * self.dim..s * self.dim];
            let lin: T = row.iter().zip(q).map(|(&t, &v)| t * v).sum();
            phi[s] = lin.exp();
        }
    }

    /// `p_i` and `p_i φ_s(y_i)` (row-major by occasion) at a standardized
    /// parameter point.
    pub(crate) fn weights(
        &self,
        theta: &[T],
        constraint: Option<(&QuantileConstraint<T>, [T; 2])>,
    ) -> Option<(Vec<T>, Vec<Vec<T>>)> {
        let k1 = self.num_occasions;
        let mut phi = vec![T::zero(); k1];
        let mut p = Vec::with_capacity(self.len());
        let mut mass = vec![Vec::with_capacity(self.len()); k1];
        for i in 0..self.len() {
            self.tilts(theta, i, &mut phi);
            let mut denom: T = (0..k1).map(|s| self.counts[s] * phi[s]).sum();
            if let Some((qc, lambda)) = constraint {
                let c = qc.centered(i);
                denom += lambda[0] * self.counts[qc.pair.0] * phi[qc.pair.0] * c;
                denom += lambda[1] * self.counts[qc.pair.1] * phi[qc.pair.1] * c;
            }
            if !(denom > T::zero()) || !denom.is_finite() {
                return None;
            }
            let pi = denom.recip();
            p.push(pi);
            for s in 0..k1 {
                mass[s].push(pi * phi[s]);
            }
        }
        Some((p, mass))
    }

    /// `h`, its gradient and optionally its Hessian. Unknowns are θ_1..θ_K
    /// (standardized, `d` each) followed by `(λ_a, λ_b)` when constrained.
    /// Returns `None` outside the domain (some `D_i ≤ 0` or overflow).
    pub(crate) fn evaluate(
        &self,
        x: &[T],
        constraint: Option<&QuantileConstraint<T>>,
        want_hess: bool,
    ) -> Option<Evaluation<T>> {
        let k1 = self.num_occasions;
        let d = self.dim;
        let nt = self.theta_len();
        let nl = if constraint.is_some() { 2 } else { 0 };
        let n = nt + nl;
        let theta = &x[..nt];
        let lambda = constraint.map(|_| [x[nt], x[nt + 1]]);

        let mut value = T::zero();
        let mut grad = vec![T::zero(); n];
        for s in 1..k1 {
            for a in 0..d {
                let j = (s - 1) * d + a;
                grad[j] = self.sums[s * d + a];
                value += theta[j] * self.sums[s * d + a];
            }
        }
        let mut hess = want_hess.then(|| Matrix::zeros(n));

        let mut phi = vec![T::zero(); k1];
        let mut w = vec![T::zero(); k1];
        let mut coef = vec![T::zero(); k1 * k1];
        for i in 0..self.len() {
            self.tilts(theta, i, &mut phi);
            let q = self.feature(i);
            let mut e: [T; 2] = [T::zero(); 2];
            let mut denom = T::zero();
            for s in 0..k1 {
                w[s] = self.counts[s] * phi[s];
            }
            if let (Some(qc), Some(lambda)) = (constraint, lambda) {
                let c = qc.centered(i);
                // v_t / p = n_t φ_t c
                e[0] = self.counts[qc.pair.0] * phi[qc.pair.0] * c;
                e[1] = self.counts[qc.pair.1] * phi[qc.pair.1] * c;
                w[qc.pair.0] += lambda[0] * e[0];
                w[qc.pair.1] += lambda[1] * e[1];
            }
            for s in 0..k1 {
                denom += w[s];
            }
            if !(denom > T::zero()) || !denom.is_finite() {
                return None;
            }
            let p = denom.recip();
            value -= denom.ln();
            for s in 0..k1 {
                w[s] *= p;
            }
            let v = [e[0] * p, e[1] * p];

            for s in 1..k1 {
                let ws = w[s];
                for a in 0..d {
                    grad[(s - 1) * d + a] -= ws * q[a];
                }
            }
            if nl == 2 {
                grad[nt] -= v[0];
                grad[nt + 1] -= v[1];
            }

            let Some(h) = hess.as_mut() else { continue };
            // θθ: −(δ_st w_s − w_s w_t) q qᵀ, upper triangle
            for s in 1..k1 {
                for t in s..k1 {
                    let delta = if s == t { w[s] } else { T::zero() };
                    coef[s * k1 + t] = w[s] * w[t] - delta;
                }
            }
            for s in 1..k1 {
                for t in s..k1 {
                    let cst = coef[s * k1 + t];
                    for a in 0..d {
                        let row = (s - 1) * d + a;
                        let qa = cst * q[a];
                        let b0 = if s == t { a } else { 0 };
                        for b in b0..d {
                            h.add(row, (t - 1) * d + b, qa * q[b]);
                        }
                    }
                }
            }
            if let Some(qc) = constraint {
                let pair = [qc.pair.0, qc.pair.1];
                // θλ: −(δ_{s,pair_t} v_t − w_s v_t) q
                for s in 1..k1 {
                    for t in 0..2 {
                        let delta = if pair[t] == s { v[t] } else { T::zero() };
                        let cst = w[s] * v[t] - delta;
                        for a in 0..d {
                            h.add((s - 1) * d + a, nt + t, cst * q[a]);
                        }
                    }
                }
                // λλ: v_t v_u
                h.add(nt, nt, v[0] * v[0]);
                h.add(nt, nt + 1, v[0] * v[1]);
                h.add(nt + 1, nt + 1, v[1] * v[1]);
            }
        }
        if let Some(h) = hess.as_mut() {
            h.symmetrize_from_upper();
        }
        Some(Evaluation { value, grad, hess })
    }

    /// Occasion size attached to each unknown, used to scale residuals.
    pub(crate) fn unknown_scales(&self, constraint: Option<&QuantileConstraint<T>>) -> Vec<T> {
        let mut out: Vec<T> =
            (1..self.num_occasions).flat_map(|s| std::iter::repeat_n(self.counts[s], self.dim)).collect();
        if let Some(qc) = constraint {
            out.push(self.counts[qc.pair.0]);
            out.push(self.counts[qc.pair.1]);
        }
        out
    }

    /// Maps standardized θ rows (occasions 1..K) to raw-basis rows for all
    /// occasions, row 0 being zero.
    pub(crate) fn raw_theta(&self, theta: &[T]) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.dim]; self.num_occasions];
        for s in 1..self.num_occasions {
            let row = &theta[(s - 1) * self.dim..s * self.dim];
            let mut intercept = row[0];
            for a in 1..self.dim {
                out[s][a] = row[a] / self.scales[a];
                intercept -= row[a] * self.centers[a] / self.scales[a];
            }
            out[s][0] = intercept;
        }
        out
    }

    /// Inverse of [`raw_theta`](Self::raw_theta) for rows 1..K.
    pub(crate) fn standardized_theta(&self, raw: &[Vec<T>]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.theta_len());
        for row in raw.iter().skip(1) {
            let mut intercept = row[0];
            for a in 1..self.dim {
                intercept += row[a] * self.centers[a];
            }
            out.push(intercept);
            for a in 1..self.dim {
                out.push(row[a] * self.scales[a]);
            }
        }
        out
    }

    pub(crate) fn scaled_residual(&self, grad: &[T], scales: &[T]) -> T {
        grad.iter().zip(scales).fold(T::zero(), |m, (&g, &s)| m.max((g / s).abs()))
    }

    /// Maximizes the concave profile criterion by Newton's method with a
    /// backtracking line search, starting at θ = 0.
    pub(crate) fn solve_profile(&self, opts: &SolverOptions) -> Result<(Vec<T>, T, usize)> {
        let mut theta = vec![T::zero(); self.theta_len()];
        let scales = self.unknown_scales(None);
        let tol = T::lit(opts.tolerance);
        let accept = T::lit(opts.acceptance);
        let fail = |iterations, residual: T| Error::ProfileFitFailed { iterations, residual: residual.as_f64() };

        let mut current = self.evaluate(&theta, None, true).ok_or_else(|| fail(0, T::infinity()))?;
        for iteration in 0..opts.max_iterations {
            let residual = self.scaled_residual(&current.grad, &scales);
            if residual <= tol {
                return Ok((theta, current.value, iteration));
            }
            let hess = current.hess.as_ref().expect("hessian requested");
            let mut neg = hess.clone();
            neg.data.iter_mut().for_each(|v| *v = -*v);
            let Some(step) = neg.solve(&current.grad) else {
                return Err(fail(iteration, residual));
            };
            let slope: T = step.iter().zip(&current.grad).map(|(&a, &b)| a * b).sum();
            let mut t = T::one();
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let cand: Vec<T> = theta.iter().zip(&step).map(|(&x, &dx)| x + t * dx).collect();
                if let Some(ev) = self.evaluate(&cand, None, true) {
                    let armijo = ev.value >= current.value + T::lit(1e-4) * t * slope;
                    let shrinks = self.scaled_residual(&ev.grad, &scales) <= T::lit(0.5) * residual;
                    if armijo || shrinks {
                        accepted = Some((cand, ev));
                        break;
                    }
                }
                t *= T::lit(0.5);
            }
            match accepted {
                Some((cand, ev)) => {
                    theta = cand;
                    current = ev;
                }
                None if residual <= accept => return Ok((theta, current.value, iteration)),
                None => return Err(fail(iteration, residual)),
            }
        }
        let residual = self.scaled_residual(&current.grad, &scales);
        if residual <= accept {
            Ok((theta, current.value, opts.max_iterations))
        } else {
            Err(fail(opts.max_iterations, residual))
        }
    }

    /// Damped Newton on the stacked stationarity equations of the
    /// constrained problem, from `start` (θ from the profile fit, λ = 0).
    /// The merit function is the squared norm of the scaled residuals.
    pub(crate) fn solve_constrained(
        &self,
        constraint: &QuantileConstraint<T>,
        start: Vec<T>,
        opts: &SolverOptions,
    ) -> std::result::Result<Solved<T>, Stalled<T>> {
        let scales = self.unknown_scales(Some(constraint));
        let tol = T::lit(opts.tolerance);
        let accept = T::lit(opts.acceptance);
        let merit = |g: &[T]| -> T { g.iter().zip(&scales).map(|(&v, &s)| (v / s) * (v / s)).sum() };

        let mut x = start;
        let Some(mut current) = self.evaluate(&x, Some(constraint), true) else {
            return Err((x, 0, T::infinity()));
        };
        for iteration in 0..opts.max_iterations {
            let residual = self.scaled_residual(&current.grad, &scales);
            if residual <= tol {
                return Ok((x, current.value, iteration));
            }
            let hess = current.hess.as_ref().expect("hessian requested");
            let rhs: Vec<T> = current.grad.iter().map(|&g| -g).collect();
            let Some(step) = hess.solve(&rhs) else {
                return Err((x, iteration, residual));
            };
            let m0 = merit(&current.grad);
            let mut t = T::one();
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let cand: Vec<T> = x.iter().zip(&step).map(|(&v, &dv)| v + t * dv).collect();
                if let Some(ev) = self.evaluate(&cand, Some(constraint), true) {
                    if merit(&ev.grad) <= (T::one() - T::lit(2e-4) * t) * m0 {
                        accepted = Some((cand, ev));
                        break;
                    }
                }
                t *= T::lit(0.5);
            }
            match accepted {
                Some((cand, ev)) => {
                    x = cand;
                    current = ev;
                }
                None if residual <= accept => return Ok((x, current.value, iteration)),
                None => return Err((x, iteration, residual)),
            }
        }
        let residual = self.scaled_residual(&current.grad, &scales);
        if residual <= accept {
            Ok((x, current.value, opts.max_iterations))
        } else {
            Err((x, opts.max_iterations, residual))
        }
    }
}
