//! The permutation scheme for two occasions of a rotating panel, and the
//! Monte Carlo permutation p-value.
//!
//! Under the null hypothesis that occasions `a` and `b` share their marginal
//! distribution, a cluster observed on both occasions may have its two
//! cluster vectors exchanged without changing the joint distribution
//! (step I). Clusters seen on only one of the two occasions can be
//! reassigned between the two sides as whole clusters (step I+). All other
//! occasions stay as they are (step II).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::drm::{self, Basis, DrmFit, DrmModel};
use crate::panel::RotatingPanelSample;
use crate::rng::{stream, StreamRole};
use crate::stats::{self, TwoSampleView};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StatisticKind {
    T,
    W,
    EM,
    EL,
    ELR,
}

impl StatisticKind {
    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::T => "T",
            StatisticKind::W => "W",
            StatisticKind::EM => "EM",
            StatisticKind::EL => "EL",
            StatisticKind::ELR => "ELR",
        }
    }

    fn needs_level(self) -> bool {
        matches!(self, StatisticKind::EM | StatisticKind::EL | StatisticKind::ELR)
    }

    fn needs_basis(self) -> bool {
        matches!(self, StatisticKind::EL | StatisticKind::ELR)
    }
}

/// Which tail of the permutation distribution is evidence against the null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    RejectLarge,
    RejectSmall,
}

/// A test statistic with its parameters.
///
/// The default orientations target the alternative that occasion `b` has
/// shifted below occasion `a`: T, W, EM and EL are then small. The ELR is
/// evaluated in its signed form (see [`drm::signed_elr_from_fit`]) and is
/// large under that alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatisticSpec {
    pub kind: StatisticKind,
    pub level: Option<f64>,
    pub basis: Option<Basis>,
    pub orientation: Orientation,
}

impl StatisticSpec {
    pub fn t() -> Self {
        Self::build(StatisticKind::T, None, None)
    }

    pub fn w() -> Self {
        Self::build(StatisticKind::W, None, None)
    }

    pub fn em(level: f64) -> Self {
        Self::build(StatisticKind::EM, Some(level), None)
    }

    pub fn el(level: f64, basis: Basis) -> Self {
        Self::build(StatisticKind::EL, Some(level), Some(basis))
    }

    pub fn elr(level: f64, basis: Basis) -> Self {
        Self::build(StatisticKind::ELR, Some(level), Some(basis))
    }

    fn build(kind: StatisticKind, level: Option<f64>, basis: Option<Basis>) -> Self {
        let orientation = match kind {
            StatisticKind::ELR => Orientation::RejectLarge,
            _ => Orientation::RejectSmall,
        };
        StatisticSpec { kind, level, basis, orientation }
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind.name();
        match (self.kind.needs_level(), self.level) {
            (true, None) => return Err(Error::InvalidConfig(format!("{kind} needs a percentile level"))),
            (false, Some(_)) => return Err(Error::InvalidConfig(format!("{kind} takes no percentile level"))),
            (true, Some(level)) => stats::check_level(level)?,
            (false, None) => {}
        }
        match (self.kind.needs_basis(), self.basis) {
            (true, None) => Err(Error::InvalidConfig(format!("{kind} needs a basis"))),
            (false, Some(_)) => Err(Error::InvalidConfig(format!("{kind} takes no basis"))),
            _ => Ok(()),
        }
    }

    /// Short label such as `EL(0.5,normal2)`, also accepted by `from_str`
    /// in the `EL:0.5:normal2` form.
    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Evaluates the statistic on occasions `pair = (a, b)`.
    pub fn evaluate<T: Real>(&self, sample: &RotatingPanelSample<T>, pair: (usize, usize)) -> Result<T> {
        evaluate_all(std::slice::from_ref(self), sample, pair).pop().expect("one spec")
    }
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        match (self.level, self.basis) {
            (Some(level), Some(basis)) => write!(f, "({level},{basis})"),
            (Some(level), None) => write!(f, "({level})"),
            _ => Ok(()),
        }
    }
}

impl StatisticSpec {
    /// Parses `T`, `W`, `EM[:<level>]`, `EL[:<level>[:<basis>]]` or
    /// `ELR[:<level>[:<basis>]]`, filling a missing level or basis from the
    /// defaults.
    pub fn parse_with(text: &str, default_level: Option<f64>, default_basis: Basis) -> Result<Self> {
        let bad = |why: &str| Error::InvalidConfig(format!("statistic {text:?}: {why}"));
        let mut parts = text.trim().split(':');
        let kind = match parts.next().unwrap_or("").trim().to_ascii_uppercase().as_str() {
            "T" => StatisticKind::T,
            "W" => StatisticKind::W,
            "EM" => StatisticKind::EM,
            "EL" => StatisticKind::EL,
            "ELR" => StatisticKind::ELR,
            _ => return Err(bad("expected T, W, EM, EL or ELR")),
        };
        let level = match parts.next() {
            Some(field) => Some(field.trim().parse::<f64>().map_err(|_| bad("level is not a number"))?),
            None if kind.needs_level() => default_level,
            None => None,
        };
        let basis = match parts.next() {
            Some(field) => Some(field.parse::<Basis>()?),
            None if kind.needs_basis() => Some(default_basis),
            None => None,
        };
        if parts.next().is_some() {
            return Err(bad("too many fields"));
        }
        let spec = StatisticSpec::build(kind, level, basis);
        spec.validate()?;
        Ok(spec)
    }
}

impl FromStr for StatisticSpec {
    type Err = Error;

    /// As [`StatisticSpec::parse_with`] with no default level and the
    /// `normal2` basis.
    fn from_str(s: &str) -> Result<Self> {
        StatisticSpec::parse_with(s, None, Basis::Normal2)
    }
}

/// Evaluates several statistics on the same sample, sharing one DRM fit per
type FitResult<T> = Result<(DrmModel<T>, DrmFit<T>)>;

/// basis between the EL and ELR statistics.
pub fn evaluate_all<T: Real>(
    specs: &[StatisticSpec],
    sample: &RotatingPanelSample<T>,
    pair: (usize, usize),
) -> Vec<Result<T>> {
    let mut view: Option<Result<TwoSampleView<T>>> = None;
    let mut fits: Vec<(Basis, FitResult<T>)> = Vec::new();
    specs
        .iter()
        .map(|spec| {
            spec.validate()?;
            let level = spec.level.unwrap_or(0.5);
            match spec.kind {
                StatisticKind::T | StatisticKind::W | StatisticKind::EM => {
                    let view = view
                        .get_or_insert_with(|| TwoSampleView::from_sample(sample, pair.0, pair.1))
                        .as_ref()
                        .map_err(Clone::clone)?;
                    match spec.kind {
                        StatisticKind::T => stats::t_statistic(view),
                        StatisticKind::W => Ok(stats::wilcoxon_statistic(view)),
                        _ => stats::em_statistic(view, level),
                    }
                }
                StatisticKind::EL | StatisticKind::ELR => {
                    let basis = spec.basis.expect("validated");
                    let slot = match fits.iter().position(|(b, _)| *b == basis) {
                        Some(slot) => slot,
                        None => {
                            let fit = DrmModel::new(sample, basis).and_then(|model| {
                                let fit = drm::fit_profile_model(&model)?;
                                Ok((model, fit))
                            });
                            fits.push((basis, fit));
                            fits.len() - 1
                        }
                    };
                    let (model, fit) = fits[slot].1.as_ref().map_err(Clone::clone)?;
                    if spec.kind == StatisticKind::EL {
                        drm::el_from_fit(fit, level, pair)
                    } else {
                        drm::signed_elr_from_fit(model, fit, level, pair)
                    }
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationOptions {
    /// Number of permuted samples `M`. Keep it moderate: with the strict
    /// exceedance rule a replicate equal to the observed value never counts,
    /// so tiny `M` (or a degenerate sample) drives the p-value to zero.
    pub num_permutations: usize,
    pub alpha_test: f64,
    pub seed: u64,
    pub pair: (usize, usize),
    pub step_one_plus: bool,
    /// Evaluate replicates on the rayon pool.
    pub parallel: bool,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        PermutationOptions {
            num_permutations: 201,
            alpha_test: 0.05,
            seed: 0,
            pair: (0, 1),
            step_one_plus: true,
            parallel: true,
        }
    }
}

impl PermutationOptions {
    pub fn validate(&self) -> Result<()> {
        if self.num_permutations == 0 {
            return Err(Error::InvalidConfig("the number of permutations must be at least 1".into()));
        }
        if !(self.alpha_test > 0.0 && self.alpha_test < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha_test {} outside (0, 1)", self.alpha_test)));
        }
        if self.pair.0 == self.pair.1 {
            return Err(Error::SameOccasion(self.pair.0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationResult<T> {
    pub spec: StatisticSpec,
    pub observed: T,
    /// Statistics of the permuted samples that evaluated successfully, in
    /// replicate order.
    pub replicates: Vec<T>,
    pub failed_replicates: usize,
    pub p_value: f64,
    pub alpha_test: f64,
    pub reject: bool,
}

impl<T: Real> PermutationResult<T> {
    fn tally(spec: StatisticSpec, observed: T, draws: Vec<Result<T>>, alpha_test: f64) -> Self {
        let total = draws.len();
        let replicates: Vec<T> = draws.into_iter().filter_map(Result::ok).collect();
        let failed_replicates = total - replicates.len();
        let exceed = replicates
            .iter()
            .filter(|&&r| match spec.orientation {
                Orientation::RejectLarge => r > observed,
                Orientation::RejectSmall => r < observed,
            })
            .count();
        let p_value = if replicates.is_empty() { 1.0 } else { exceed as f64 / replicates.len() as f64 };
        PermutationResult {
            spec,
            observed,
            replicates,
            failed_replicates,
            p_value,
            alpha_test,
            reject: p_value < alpha_test,
        }
    }
}

/// One draw of the permutation scheme on occasions `pair`.
///
/// Step I flips a fair coin (`rng.random::<bool>()`) for each cluster
/// observed on both occasions, in cluster-id order, and exchanges the two
/// cluster vectors when it lands `true`; a cluster listed on both occasions
/// but missing its observation on one of them is left alone (the coin is
/// still drawn). Step I+ gives each cluster observed on exactly one of the
/// two occasions a random 64-bit key and refills the slots, in cluster-id
/// order, with the cluster vectors ordered by key (stable for ties): a
/// uniform reassignment that keeps the number of clusters on each side.
pub fn permute_once<T: Real, R: Rng + ?Sized>(
    sample: &RotatingPanelSample<T>,
    pair: (usize, usize),
    step_one_plus: bool,
    rng: &mut R,
) -> Result<RotatingPanelSample<T>> {
    let (a, b) = pair;
    let overlap = sample.overlap_sets(a, b)?;
    let mut out = sample.clone();
    for &id in &overlap.both {
        let swap: bool = rng.random();
        if !swap || sample.observation(a, id).is_none() || sample.observation(b, id).is_none() {
            continue;
        }
        let first = std::mem::take(&mut out.observation_mut(a, id).expect("checked").values);
        let second = std::mem::replace(&mut out.observation_mut(b, id).expect("checked").values, first);
        out.observation_mut(a, id).expect("checked").values = second;
    }

    if step_one_plus {
        let slots: Vec<(usize, u32)> = overlap
            .only_first
            .iter()
            .map(|&id| (a, id))
            .chain(overlap.only_second.iter().map(|&id| (b, id)))
            .filter(|&(k, id)| sample.observation(k, id).is_some())
            .collect();
        let mut keyed: Vec<(u64, usize)> = (0..slots.len()).map(|i| (rng.random::<u64>(), i)).collect();
        keyed.sort_by_key(|&(key, _)| key);
        for (slot, &(_, source)) in slots.iter().zip(&keyed) {
            let (k, id) = slots[source];
            let values = sample.observation(k, id).expect("filtered").values.clone();
            out.observation_mut(slot.0, slot.1).expect("filtered").values = values;
        }
    }
    Ok(out)
}

fn check_sample<T: Real>(sample: &RotatingPanelSample<T>, options: &PermutationOptions) -> Result<()> {
    options.validate()?;
    sample.check_occasion(options.pair.0)?;
    sample.check_occasion(options.pair.1)
}

/// Permutation test of one statistic. Replicate `r` draws its permutation
/// from its own random stream keyed by `(options.seed, r)`, so the result
/// does not depend on scheduling.
pub fn permutation_test<T: Real>(
    sample: &RotatingPanelSample<T>,
    spec: StatisticSpec,
    options: &PermutationOptions,
) -> Result<PermutationResult<T>> {
    permutation_tests(sample, &[spec], options)?.pop().expect("one spec")
}

/// Permutation tests of several statistics sharing the same permuted
/// samples. The outer error covers invalid input; each inner result fails
/// when its statistic cannot be evaluated on the observed sample.
pub fn permutation_tests<T: Real>(
    sample: &RotatingPanelSample<T>,
    specs: &[StatisticSpec],
    options: &PermutationOptions,
) -> Result<Vec<Result<PermutationResult<T>>>> {
    check_sample(sample, options)?;
    for spec in specs {
        spec.validate()?;
    }
    let observed = evaluate_all(specs, sample, options.pair);
    let live: Vec<usize> = (0..specs.len()).filter(|&i| observed[i].is_ok()).collect();
    let live_specs: Vec<StatisticSpec> = live.iter().map(|&i| specs[i]).collect();

    let replicate = |r: usize| -> Vec<Result<T>> {
        let mut rng = stream(options.seed, StreamRole::Replicate, &[r as u64]);
        match permute_once(sample, options.pair, options.step_one_plus, &mut rng) {
            Ok(permuted) => evaluate_all(&live_specs, &permuted, options.pair),
            Err(err) => vec![Err(err); live_specs.len()],
        }
    };
    let draws: Vec<Vec<Result<T>>> = if options.parallel && !live_specs.is_empty() {
        (0..options.num_permutations).into_par_iter().map(replicate).collect()
    } else {
        (0..options.num_permutations).map(replicate).collect()
    };

    let mut columns: Vec<Vec<Result<T>>> = vec![Vec::with_capacity(draws.len()); live_specs.len()];
    for row in draws {
        for (column, value) in columns.iter_mut().zip(row) {
            column.push(value);
        }
    }
    let mut columns = columns.into_iter();
    Ok(specs
        .iter()
        .zip(observed)
        .map(|(&spec, observed)| match observed {
            Ok(value) => Ok(PermutationResult::tally(
                spec,
                value,
                columns.next().expect("one column per live spec"),
                options.alpha_test,
            )),
            Err(err) => Err(Error::ObservedStatisticFailed(Box::new(err))),
        })
        .collect())
}

/// Permutation p-values of `spec` over `num_reps` samples from `generator`,
/// which receives the repetition index. Repetition `i` runs its
/// permutations with the seed derived from `(options.seed, i)`.
pub fn uniformity_probe<T: Real, G>(
    generator: G,
    spec: StatisticSpec,
    options: &PermutationOptions,
    num_reps: usize,
) -> Result<Vec<f64>>
where
    G: Fn(usize) -> Result<RotatingPanelSample<T>> + Sync,
{
    let run = |i: usize| -> Result<f64> {
        let sample = generator(i)?;
        let opts = PermutationOptions {
            seed: crate::rng::derive_seed(options.seed, StreamRole::Repetition, &[i as u64]),
            parallel: false,
            ..*options
        };
        Ok(permutation_test(&sample, spec, &opts)?.p_value)
    };
    if options.parallel {
        (0..num_reps).into_par_iter().map(run).collect()
    } else {
        (0..num_reps).map(run).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PlanConfig;
    use crate::synth::{generate_normal, NormalModelConfig};
    use rand::RngCore;

    /// Returns the same word forever.
    struct Constant(u64);

    impl RngCore for Constant {
        fn next_u32(&mut self) -> u32 {
            self.0 as u32
        }
        fn next_u64(&mut self) -> u64 {
            self.0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(self.0 as u8);
        }
    }

    fn sample(seed: u64) -> RotatingPanelSample<f64> {
        let plan = PlanConfig::new(4, 6, 2, 3).unwrap();
        let cfg = NormalModelConfig { means: vec![8.0; 4], sigma1: 1.0, sigma2: 1.0, sigma3: 2.0, plan, seed };
        generate_normal(&cfg).unwrap()
    }

    fn sorted(mut v: Vec<f64>) -> Vec<f64> {
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn constant_streams_give_identity_and_full_swap() {
        let s = sample(1);
        let same = permute_once(&s, (0, 1), true, &mut Constant(0)).unwrap();
        assert_eq!(same, s);

        let swapped = permute_once(&s, (0, 1), false, &mut Constant(u64::MAX)).unwrap();
        let overlap = s.overlap_sets(0, 1).unwrap();
        for &id in &overlap.both {
            assert_eq!(swapped.observation(0, id).unwrap().values, s.observation(1, id).unwrap().values);
            assert_eq!(swapped.observation(1, id).unwrap().values, s.observation(0, id).unwrap().values);
        }
        for k in 2..4 {
            assert_eq!(swapped.values(k), s.values(k));
        }
        // constant keys leave Step I+ in place as well
        let with_plus = permute_once(&s, (0, 1), true, &mut Constant(u64::MAX)).unwrap();
        assert_eq!(with_plus, swapped);
    }

    #[test]
    fn permutation_preserves_values_and_structure() {
        let s = sample(2);
        let mut rng = stream(5, StreamRole::Replicate, &[0]);
        let mut all = sorted(s.values(0).into_iter().chain(s.values(1)).collect());
        for _ in 0..20 {
            let p = permute_once(&s, (0, 1), true, &mut rng).unwrap();
            assert!(p.validate().is_empty());
            assert_eq!(p.members(0), s.members(0));
            let pooled = sorted(p.values(0).into_iter().chain(p.values(1)).collect());
            assert_eq!(pooled, all);
            assert_eq!(p.values(2), s.values(2));
            all = pooled;
        }
    }

    #[test]
    fn spec_parsing_and_validation() {
        assert_eq!("T".parse::<StatisticSpec>().unwrap(), StatisticSpec::t());
        assert_eq!("em:0.05".parse::<StatisticSpec>().unwrap(), StatisticSpec::em(0.05));
        assert_eq!("EL:0.5".parse::<StatisticSpec>().unwrap(), StatisticSpec::el(0.5, Basis::Normal2));
        assert_eq!("ELR:0.5:gamma2".parse::<StatisticSpec>().unwrap(), StatisticSpec::elr(0.5, Basis::Gamma2));
        assert!("EM".parse::<StatisticSpec>().is_err());
        assert!("T:0.5".parse::<StatisticSpec>().is_err());
        assert!("EL:1.5".parse::<StatisticSpec>().is_err());
        assert!("XYZ".parse::<StatisticSpec>().is_err());
        assert_eq!(StatisticSpec::elr(0.5, Basis::Gamma2).label(), "ELR(0.5,gamma2)");
        assert_eq!(StatisticSpec::elr(0.5, Basis::Gamma2).orientation, Orientation::RejectLarge);
        assert_eq!(StatisticSpec::em(0.5).orientation, Orientation::RejectSmall);
    }

    #[test]
    fn single_identity_replicate_rejects() {
        // with M = 1 and a replicate equal to the observed sample the strict
        // rule counts no exceedance
        let s = sample(3);
        let spec = StatisticSpec::t();
        let observed = spec.evaluate(&s, (0, 1)).unwrap();
        let result = PermutationResult::tally(spec, observed, vec![Ok(observed)], 0.05);
        assert_eq!(result.p_value, 0.0);
        assert!(result.reject);
    }

    #[test]
    fn failed_replicates_are_excluded() {
        let spec = StatisticSpec::t();
        let draws = vec![Ok(1.0), Err(Error::ConvexHullViolated), Ok(-1.0), Ok(3.0)];
        let result = PermutationResult::tally(spec, 0.5, draws, 0.05);
        assert_eq!(result.failed_replicates, 1);
        assert_eq!(result.replicates, vec![1.0, -1.0, 3.0]);
        assert!((result.p_value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn results_do_not_depend_on_parallelism() {
        let s = sample(4);
        let specs = [StatisticSpec::t(), StatisticSpec::w(), StatisticSpec::el(0.5, Basis::Normal2)];
        let base = PermutationOptions { num_permutations: 30, seed: 9, ..Default::default() };
        let par = permutation_tests(&s, &specs, &base).unwrap();
        let seq = permutation_tests(&s, &specs, &PermutationOptions { parallel: false, ..base }).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn observed_failure_is_reported() {
        let plan = PlanConfig::new(2, 2, 1, 1).unwrap();
        let cfg = NormalModelConfig { means: vec![8.0; 2], sigma1: 0.0, sigma2: 0.0, sigma3: 1.0, plan, seed: 1 };
        let mut s: RotatingPanelSample<f64> = generate_normal(&cfg).unwrap();
        for k in 0..2 {
            for id in s.members(k).to_vec() {
                s.observation_mut(k, id).unwrap().values = vec![-1.0];
            }
        }
        let out = permutation_test(&s, StatisticSpec::el(0.5, Basis::Gamma2), &PermutationOptions::default());
        assert!(matches!(out, Err(Error::ObservedStatisticFailed(_))));
    }
}
