//! Existence check for the constrained fit: the zero vector must be interior
//! to the convex hull of the per-observation constraint residuals.
//!
//! The residual of observation `i` has one coordinate per occasion,
//! `φ_s(y_i) − 1`, and one per occasion of the tested pair,
//! `φ_s(y_i)·1(y_i ≤ ξ) − α`. The baseline coordinate is identically zero,
//! so "interior" is taken relative to the affine hull: zero must be a convex
//! combination with every weight strictly positive. That is decided by the
//! linear program
//!
//! ```text
//! maximize t  subject to  Σ_i (t + v_i) g_i = 0,  Σ_i (t + v_i) = 1,  v ≥ 0
//! ```
//!
//! whose optimum is positive exactly in the interior case.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::drm::{Basis, DrmModel};
use crate::panel::RotatingPanelSample;
use crate::Real;

/// Relative margin `N · t*` below which zero counts as a boundary point.
const MARGIN: f64 = 1e-7;

/// Hull check for occasions 0 and 1 at raw parameters `theta`
/// (`(K+1) × d`, row 0 zero). Samples the basis cannot evaluate fail it.
pub fn convex_hull_check<T: Real>(
    sample: &RotatingPanelSample<T>,
    basis: Basis,
    theta: &[Vec<T>],
    level: f64,
    xi_hat: T,
) -> bool {
    if sample.num_occasions() < 2 {
        return false;
    }
    match DrmModel::new(sample, basis) {
        Ok(model) => convex_hull_check_model(&model, theta, level, xi_hat, (0, 1)),
        Err(_) => false,
    }
}

pub fn convex_hull_check_model<T: Real>(
    model: &DrmModel<T>,
    theta: &[Vec<T>],
    level: f64,
    xi_hat: T,
    pair: (usize, usize),
) -> bool {
    let k1 = model.num_occasions();
    if theta.len() != k1 || theta.iter().any(|row| row.len() != model.dim) {
        return false;
    }
    let standardized = model.standardized_theta(theta);
    let n = model.len();
    let residual = |i: usize| -> Option<Vec<f64>> {
        let q = &model.features[i * model.dim..(i + 1) * model.dim];
        let mut phi = vec![1.0; k1];
        for s in 1..k1 {
            let row = &standardized[(s - 1) * model.dim..s * model.dim];
            phi[s] = row.iter().zip(q).map(|(&t, &v)| t * v).sum::<T>().exp().as_f64();
        }
        let below = if model.points[i] <= xi_hat { 1.0 } else { 0.0 };
        let mut g: Vec<f64> = phi.iter().map(|p| p - 1.0).collect();
        g.push(phi[pair.0] * below - level);
        g.push(phi[pair.1] * below - level);
        g.iter().all(|v| v.is_finite()).then_some(g)
    };
    let Some(points) = (0..n).map(residual).collect::<Option<Vec<_>>>() else {
        return false;
    };
    if points.is_empty() {
        return false;
    }
    let dims = points[0].len();

    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let v: Vec<_> = (0..n).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    for c in 0..dims {
        let total: f64 = points.iter().map(|g| g[c]).sum();
        let scale = points.iter().fold(0.0f64, |m, g| m.max(g[c].abs()));
        if scale == 0.0 {
            continue;
        }
        let mut row = vec![(t, total / scale)];
        row.extend(v.iter().zip(&points).map(|(&var, g)| (var, g[c] / scale)));
        lp.add_constraint(row, ComparisonOp::Eq, 0.0);
    }
    let mut simplex = vec![(t, n as f64)];
    simplex.extend(v.iter().map(|&var| (var, 1.0)));
    lp.add_constraint(simplex, ComparisonOp::Eq, 1.0);

    match lp.solve() {
        Ok(solution) => solution.objective() * n as f64 > MARGIN,
        Err(_) => false,
    }
}
