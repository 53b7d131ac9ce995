//! Slow, independent reference computations used by the oracle and
//! acceptance tests. None of them shares code with the library solvers.

#![allow(dead_code, clippy::needless_range_loop)]

/// Maximum of the composite empirical likelihood of two occasions under the
/// linear-basis density ratio model, by brute force: for each `(a, b)` on a
/// grid the weights are the inner empirical likelihood solution, and the
/// grid is repeatedly refined around its best point. `extra` adds the
/// quantile constraints of the equal-percentile problem.
pub fn drm_oracle(y0: &[f64], y1: &[f64], extra: Option<(f64, f64)>) -> f64 {
    let pooled: Vec<f64> = y0.iter().chain(y1).copied().collect();
    let center = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let s1: f64 = y1.iter().map(|y| y - center).sum();
    let n1 = y1.len() as f64;
    let objective = |a: f64, b: f64| -> f64 {
        let rows: Vec<Vec<f64>> = pooled
            .iter()
            .map(|&y| {
                let w = (a + b * (y - center)).exp();
                match extra {
                    None => vec![w - 1.0],
                    Some((level, xi)) => {
                        let below = if y <= xi { 1.0 } else { 0.0 };
                        vec![w - 1.0, below - level, w * below - level]
                    }
                }
            })
            .collect();
        inner_el(&rows) + a * n1 + b * s1
    };

    // one fine sweep of the whole box, then shrinking local grids
    let (mut ca, mut cb, mut half) = (0.0, 0.0, 8.0);
    let mut best = f64::NEG_INFINITY;
    for round in 0..80 {
        let steps = if round == 0 { 64 } else { 10 };
        let (mut ba, mut bb) = (ca, cb);
        for i in 0..=steps {
            for j in 0..=steps {
                let a = ca - half + 2.0 * half * i as f64 / steps as f64;
                let b = cb - half + 2.0 * half * j as f64 / steps as f64;
                let v = objective(a, b);
                if v > best {
                    best = v;
                    ba = a;
                    bb = b;
                }
            }
        }
        ca = ba;
        cb = bb;
        half *= if round == 0 { 0.1 } else { 0.7 };
    }
    best
}

/// `max Σ log p_i` subject to `Σ p_i = 1` and `Σ p_i g_i = 0`, through the
/// convex dual in the multiplier with the pseudo-logarithm that keeps it
/// finite; `-inf` when zero is not inside the hull of the `g_i`.
pub fn inner_el(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let eps = 1.0 / n;
    // pseudo-log and its first two derivatives
    let plog = |z: f64| -> (f64, f64, f64) {
        if z >= eps {
            (z.ln(), 1.0 / z, -1.0 / (z * z))
        } else {
            let r = z / eps;
            (eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r, 2.0 / eps - z / (eps * eps), -1.0 / (eps * eps))
        }
    };
    let dual = |mu: &[f64]| -> f64 { rows.iter().map(|g| -plog(1.0 + dot(mu, g)).0).sum() };
    let mut mu = vec![0.0; d];
    for _ in 0..60 {
        let mut grad = vec![0.0; d];
        let mut hess = vec![vec![0.0; d]; d];
        for g in rows {
            let (_, d1, d2) = plog(1.0 + dot(&mu, g));
            for a in 0..d {
                grad[a] -= d1 * g[a];
                for b in 0..d {
                    hess[a][b] -= d2 * g[a] * g[b];
                }
            }
        }
        for a in 0..d {
            hess[a][a] += 1e-12;
        }
        let Some(step) = solve_small(hess, grad.iter().map(|v| -v).collect()) else {
            return f64::NEG_INFINITY;
        };
        let current = dual(&mu);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let trial: Vec<f64> = mu.iter().zip(&step).map(|(m, s)| m + t * s).collect();
            if dual(&trial) <= current {
                mu = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        let decrement: f64 = step.iter().zip(&grad).map(|(s, g)| -s * g).sum();
        if !moved || decrement < 1e-20 {
            break;
        }
    }
    let mut total = 0.0;
    let mut mass = 0.0;
    for g in rows {
        let z = 1.0 + dot(&mu, g);
        if z < eps * (1.0 - 1e-9) {
            return f64::NEG_INFINITY;
        }
        let p = 1.0 / (n * z);
        mass += p;
        total += p.ln();
    }
    if (mass - 1.0).abs() > 1e-6 {
        return f64::NEG_INFINITY;
    }
    total
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting on a tiny dense system.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Twice the Wilcoxon count by the double loop.
pub fn wilcoxon_twice_brute(x0: &[f64], x1: &[f64]) -> u64 {
    let mut twice = 0;
    for &a in x0 {
        for &b in x1 {
            if b > a {
                twice += 2;
            } else if b == a {
                twice += 1;
            }
        }
    }
    twice
}

/// `ln Γ(x)` by the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by the modified Lentz
/// evaluation of its continued fraction.
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return 1.0 - incomplete_beta(1.0 - x, b, a);
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp() / a;
    let tiny = 1e-300;
    let (mut c, mut d) = (1.0, 1.0 - (a + b) * x / (a + 1.0));
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut f = d;
    for m in 1..10_000 {
        let m = m as f64;
        for numerator in [
            m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m)),
            -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0)),
        ] {
            d = 1.0 + numerator * d;
            if d.abs() < tiny {
                d = tiny;
            }
            c = 1.0 + numerator / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            f *= c * d;
        }
        if (c * d - 1.0).abs() < 1e-16 {
            break;
        }
    }
    front * f
}

/// Student t CDF through the incomplete beta function.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * incomplete_beta(df / (df + t * t), df / 2.0, 0.5);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

use rand::Rng;
use rotperm::drm::{elr_from_fit, fit_constrained_model, fit_profile_model, Basis, DrmModel};
use rotperm::rng::{stream, StreamRole};
use rotperm::stats::{wilcoxon_twice, TwoSampleView};

/// Agreement between the library fits and [`drm_oracle`] on random tiny
/// two-occasion instances.
#[derive(Debug, Default)]
pub struct OracleReport {
    pub profile_compared: usize,
    pub constrained_compared: usize,
    pub max_profile_gap: f64,
    pub max_constrained_gap: f64,
    /// Instances skipped because a library fit failed (no finite optimum
    /// on tiny separated samples, or the percentile precondition).
    pub skipped: Vec<String>,
}

pub fn oracle_agreement(seed: u64, instances: usize) -> OracleReport {
    let mut rng = stream(seed, StreamRole::Setting, &[]);
    let mut report = OracleReport::default();
    for _ in 0..instances {
        let n0 = rng.random_range(3..=5);
        let n1 = rng.random_range(3..=5);
        let shift = rng.random_range(-0.5..0.5);
        let y0: Vec<f64> = (0..n0).map(|_| rng.random_range(0.0..2.0)).collect();
        let y1: Vec<f64> = (0..n1).map(|_| shift + rng.random_range(0.0..2.0)).collect();
        let model = DrmModel::from_occasions(&[y0.clone(), y1.clone()], Basis::Linear).unwrap();
        let profile = match fit_profile_model(&model) {
            Ok(fit) => fit,
            Err(err) => {
                report.skipped.push(format!("profile: {err}"));
                continue;
            }
        };
        let (t0, t1) = (profile.theta[1][0], profile.theta[1][1]);
        let center = y0.iter().chain(&y1).sum::<f64>() / (n0 + n1) as f64;
        if (t0 + t1 * center).abs() > 6.0 || t1.abs() > 6.0 {
            report.skipped.push("profile outside the oracle grid".into());
            continue;
        }
        let gap = (profile.loglik - drm_oracle(&y0, &y1, None)).abs();
        report.max_profile_gap = report.max_profile_gap.max(gap);
        report.profile_compared += 1;

        let level = if rng.random::<bool>() { 0.5 } else { 0.3 };
        let constrained = match fit_constrained_model(&model, &profile, level, (0, 1)) {
            Ok(fit) => fit,
            Err(err) => {
                report.skipped.push(format!("constrained: {err}"));
                continue;
            }
        };
        let (c0, c1) = (constrained.theta[1][0], constrained.theta[1][1]);
        if (c0 + c1 * center).abs() > 6.0 || c1.abs() > 6.0 {
            report.skipped.push("constrained outside the oracle grid".into());
            continue;
        }
        let oracle = drm_oracle(&y0, &y1, Some((level, constrained.xi_hat)));
        report.max_constrained_gap = report.max_constrained_gap.max((constrained.loglik - oracle).abs());
        report.constrained_compared += 1;
    }
    report
}

/// Smallest unsigned ELR over random instances, with the number of
/// instances on which the statistic could not be computed.
pub fn elr_minimum(seed: u64, instances: usize) -> (f64, usize, usize) {
    let mut rng = stream(seed, StreamRole::Setting, &[]);
    let (mut minimum, mut failed) = (f64::INFINITY, 0);
    for _ in 0..instances {
        let occasions = rng.random_range(2..=3);
        let samples: Vec<Vec<f64>> = (0..occasions)
            .map(|_| {
                let n = rng.random_range(4..=15);
                let shift = rng.random_range(0.0..1.0);
                (0..n).map(|_| 1.0 + shift + rng.random_range(0.0..3.0)).collect()
            })
            .collect();
        let basis = [Basis::Linear, Basis::Normal2, Basis::Gamma2][rng.random_range(0..3)];
        let level = [0.1, 0.3, 0.5, 0.8][rng.random_range(0..4)];
        let model = DrmModel::from_occasions(&samples, basis).unwrap();
        match fit_profile_model(&model).and_then(|p| elr_from_fit(&model, &p, level, (0, 1))) {
            Ok(elr) => minimum = minimum.min(elr),
            Err(_) => failed += 1,
        }
    }
    (minimum, instances - failed, failed)
}

/// Number of random tie-heavy instances on which the sort-merge Wilcoxon
/// count differs from the double loop.
pub fn wilcoxon_mismatches(seed: u64, instances: usize) -> usize {
    let mut rng = stream(seed, StreamRole::Setting, &[]);
    let mut mismatches = 0;
    for _ in 0..instances {
        let n0 = rng.random_range(1..40);
        let n1 = rng.random_range(1..40);
        let levels = rng.random_range(1..8);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect() };
        let x0 = draw(n0);
        let x1 = draw(n1);
        let fast = wilcoxon_twice(&TwoSampleView::unclustered(x0.clone(), x1.clone()));
        if fast != wilcoxon_twice_brute(&x0, &x1) {
            mismatches += 1;
        }
    }
    mismatches
}
