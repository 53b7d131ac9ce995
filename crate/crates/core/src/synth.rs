//! Synthetic rotating-panel samples with longitudinal and cross-sectional
//! random effects.
//!
//! Three models are provided:
//!
//! * normal: `y = μ_k + σ1 η_i + σ2 η_{k,i} + σ3 ε_{k,i,u}` with standard
//!   normal effects,
//! * gamma: `y = λ_k (ε_i + ε_{k,i} + x_{k,i,u})` with unit-scale gamma
//!   effects of shapes `γ1`, `γ2` and `η_k`,
//! * no-name: biased draws from a finite population `𝒫` tilted by
//!   `x^(σ1 ε_i + σ_{k,2} ε_{k,i})`, times gamma multipliers with mean one.
//!
//! All draws come from [`crate::rng`] streams keyed by cluster and occasion,
//! so a sample is a pure function of its config and prefixes of the panel
//! are stable.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::panel::{ClusterId, ClusterObservation, PlanConfig, RotatingPanelSample};
use crate::rng::{stream, StreamRole};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalModelConfig {
    /// `μ_k`, one per occasion.
    pub means: Vec<f64>,
    /// Longitudinal effect scale.
    pub sigma1: f64,
    /// Cross-sectional effect scale.
    pub sigma2: f64,
    /// Unit noise scale.
    pub sigma3: f64,
    pub plan: PlanConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaModelConfig {
    /// Shape of the longitudinal effect.
    pub gamma1: f64,
    /// Shape of the cross-sectional effect.
    pub gamma2: f64,
    /// Per-occasion unit shapes `η_k`.
    pub etas: Vec<f64>,
    /// Per-occasion scale multipliers `λ_k`.
    pub lambdas: Vec<f64>,
    pub plan: PlanConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoNameModelConfig {
    pub population: Vec<f64>,
    pub sigma1: f64,
    /// `σ_{k,2}`, one per occasion.
    pub sigma2s: Vec<f64>,
    pub lambda_shape: f64,
    pub lambda_scale: f64,
    pub plan: PlanConfig,
    pub seed: u64,
}

impl NoNameModelConfig {
    pub const LAMBDA_SHAPE: f64 = 20.0;
    pub const LAMBDA_SCALE: f64 = 0.05;
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be finite and positive, got {v}")))
    }
}

fn per_occasion(name: &str, values: &[f64], plan: &PlanConfig) -> Result<()> {
    if values.len() == plan.num_occasions {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} has {} entries for {} occasions", values.len(), plan.num_occasions)))
    }
}

impl NormalModelConfig {
    pub fn validate(&self) -> Result<()> {
        per_occasion("means", &self.means, &self.plan)?;
        if let Some(bad) = self.means.iter().find(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite mean {bad}")));
        }
        // sigma1 = sigma2 = 0 is the degenerate unclustered model
        nonneg("sigma1", self.sigma1)?;
        nonneg("sigma2", self.sigma2)?;
        positive("sigma3", self.sigma3)
    }
}

impl GammaModelConfig {
    pub fn validate(&self) -> Result<()> {
        per_occasion("etas", &self.etas, &self.plan)?;
        per_occasion("lambdas", &self.lambdas, &self.plan)?;
        positive("gamma1", self.gamma1)?;
        positive("gamma2", self.gamma2)?;
        for &v in &self.etas {
            positive("eta", v)?;
        }
        for &v in &self.lambdas {
            positive("lambda", v)?;
        }
        Ok(())
    }
}

impl NoNameModelConfig {
    pub fn validate(&self) -> Result<()> {
        per_occasion("sigma2s", &self.sigma2s, &self.plan)?;
        if self.population.is_empty() {
            return Err(Error::InvalidConfig("population is empty".into()));
        }
        for &x in &self.population {
            positive("population value", x)?;
        }
        nonneg("sigma1", self.sigma1)?;
        for &v in &self.sigma2s {
            nonneg("sigma2", v)?;
        }
        positive("lambda_shape", self.lambda_shape)?;
        positive("lambda_scale", self.lambda_scale)
    }
}

/// Builds a canonical-rotation sample, asking `cluster` for the values of
/// each `(occasion, cluster_id)`.
fn assemble<T: Real>(
    plan: PlanConfig,
    mut cluster: impl FnMut(usize, ClusterId) -> Vec<f64>,
) -> RotatingPanelSample<T> {
    let membership: Vec<Vec<ClusterId>> = (0..plan.num_occasions).map(|k| plan.canonical_members(k)).collect();
    let mut observations = Vec::with_capacity(plan.num_occasions * plan.clusters_per_occasion);
    for (occasion, members) in membership.iter().enumerate() {
        for &cluster_id in members {
            let values = cluster(occasion, cluster_id).into_iter().map(T::lit).collect();
            observations.push(ClusterObservation { occasion, cluster_id, values });
        }
    }
    RotatingPanelSample::from_parts(plan, membership, observations)
}

fn gamma(shape: f64, scale: f64) -> Gamma<f64> {
    Gamma::new(shape, scale).expect("validated gamma parameters")
}

pub fn generate_normal<T: Real>(cfg: &NormalModelConfig) -> Result<RotatingPanelSample<T>> {
    cfg.validate()?;
    let seed = cfg.seed;
    Ok(assemble(cfg.plan, |k, id| {
        let id = u64::from(id);
        let longitudinal: f64 = stream(seed, StreamRole::Longitudinal, &[id]).sample(StandardNormal);
        let cross: f64 = stream(seed, StreamRole::CrossSectional, &[id, k as u64]).sample(StandardNormal);
        let shared = cfg.means[k] + cfg.sigma1 * longitudinal + cfg.sigma2 * cross;
        let mut noise = stream(seed, StreamRole::UnitNoise, &[id, k as u64]);
        (0..cfg.plan.cluster_size).map(|_| shared + cfg.sigma3 * noise.sample::<f64, _>(StandardNormal)).collect()
    }))
}

pub fn generate_gamma<T: Real>(cfg: &GammaModelConfig) -> Result<RotatingPanelSample<T>> {
    cfg.validate()?;
    let seed = cfg.seed;
    let longitudinal_dist = gamma(cfg.gamma1, 1.0);
    let cross_dist = gamma(cfg.gamma2, 1.0);
    Ok(assemble(cfg.plan, |k, id| {
        let id = u64::from(id);
        let longitudinal = longitudinal_dist.sample(&mut stream(seed, StreamRole::Longitudinal, &[id]));
        let cross = cross_dist.sample(&mut stream(seed, StreamRole::CrossSectional, &[id, k as u64]));
        let unit_dist = gamma(cfg.etas[k], 1.0);
        let mut noise = stream(seed, StreamRole::UnitNoise, &[id, k as u64]);
        (0..cfg.plan.cluster_size)
            .map(|_| cfg.lambdas[k] * (longitudinal + cross + unit_dist.sample(&mut noise)))
            .collect()
    }))
}

pub fn generate_noname<T: Real>(cfg: &NoNameModelConfig) -> Result<RotatingPanelSample<T>> {
    cfg.validate()?;
    let seed = cfg.seed;
    let logs: Vec<f64> = cfg.population.iter().map(|x| x.ln()).collect();
    let max_log = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_log = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let multiplier = gamma(cfg.lambda_shape, cfg.lambda_scale);
    Ok(assemble(cfg.plan, |k, id| {
        let id = u64::from(id);
        let longitudinal: f64 = stream(seed, StreamRole::Longitudinal, &[id]).random();
        let cross: f64 = stream(seed, StreamRole::CrossSectional, &[id, k as u64]).random();
        let tilt = cfg.sigma1 * longitudinal + cfg.sigma2s[k] * cross;
        // weights x^tilt, normalised at the largest weight to stay finite
        let anchor = if tilt >= 0.0 { max_log } else { min_log };
        let weights = logs.iter().map(|l| (tilt * (l - anchor)).exp());
        let index = WeightedIndex::new(weights).expect("positive tilted weights");
        let mut draws = stream(seed, StreamRole::PopulationDraw, &[id, k as u64]);
        let mut scales = stream(seed, StreamRole::UnitMultiplier, &[id, k as u64]);
        (0..cfg.plan.cluster_size)
            .map(|_| {
                let x = cfg.population[index.sample(&mut draws)];
                multiplier.sample(&mut scales) * x
            })
            .collect()
    }))
}

/// Reads a finite population: one positive value per line, `#` comments and
/// blank lines ignored.
pub fn load_population(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_population(&text)
}

pub fn parse_population(text: &str) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: f64 = line
            .parse()
            .map_err(|_| Error::Parse { line: index + 1, message: format!("expected a number, found {line:?}") })?;
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Parse {
                line: index + 1,
                message: format!("population values must be positive, found {value}"),
            });
        }
        values.push(value);
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(values)
}

/// The synthetic stand-in population shipped with the crate (825 values).
/// It is not real lumber data; it only roughly matches the size, mean and
/// variance of such a dataset.
pub fn bundled_population() -> Vec<f64> {
    parse_population(include_str!("../data/synthetic_population.txt")).expect("bundled population parses")
}
