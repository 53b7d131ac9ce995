//! Rotating-panel data model.
//!
//! A rotating sampling plan observes `n` clusters on each of `K + 1`
//! occasions and replaces `m` of them between consecutive occasions, so the
//! panel is fully refreshed after `N = n / m` occasions. Cluster ids are
//! global: a cluster keeps its id on every occasion it is sampled.
//!
//! Membership sets and observations are stored separately so that defects
//! (a listed cluster without data, a dropout) stay representable and can be
//! reported by [`RotatingPanelSample::validate`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

pub type ClusterId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanConfig {
    /// `K + 1`; occasions are indexed `0..=K`.
    pub num_occasions: usize,
    /// `n`
    pub clusters_per_occasion: usize,
    /// `m`
    pub replaced_per_occasion: usize,
    /// `r`
    pub cluster_size: usize,
    /// `N`, the number of occasions after which the panel is fully replaced.
    pub full_rotation: usize,
}

impl PlanConfig {
    /// Builds a plan from `K + 1`, `n`, `m` and `r`; `N` is derived as `n / m`.
    pub fn new(
        num_occasions: usize,
        clusters_per_occasion: usize,
        replaced_per_occasion: usize,
        cluster_size: usize,
    ) -> Result<Self> {
        if replaced_per_occasion == 0 || !clusters_per_occasion.is_multiple_of(replaced_per_occasion) {
            return Err(Error::InvalidConfig(format!(
                "clusters per occasion ({clusters_per_occasion}) must be a positive multiple \
                 of the number replaced per occasion ({replaced_per_occasion})"
            )));
        }
        let plan = PlanConfig {
            num_occasions,
            clusters_per_occasion,
            replaced_per_occasion,
            cluster_size,
            full_rotation: clusters_per_occasion / replaced_per_occasion,
        };
        let problems = plan.violations();
        if problems.is_empty() {
            Ok(plan)
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// The plan used throughout the simulations: `K + 1 = 5`, `m = 6`.
    pub fn simulation_default(clusters_per_occasion: usize, cluster_size: usize) -> Result<Self> {
        Self::new(5, clusters_per_occasion, 6, cluster_size)
    }

    /// Canonical membership of occasion `k`: ids `k m + 1 ..= k m + n`.
    pub fn canonical_members(&self, occasion: usize) -> Vec<ClusterId> {
        let start = occasion * self.replaced_per_occasion + 1;
        (start..start + self.clusters_per_occasion).map(|id| id as ClusterId).collect()
    }

    /// Number of distinct clusters in a canonical panel: `n + K m`.
    pub fn total_clusters(&self) -> usize {
        self.clusters_per_occasion + (self.num_occasions.saturating_sub(1)) * self.replaced_per_occasion
    }

    /// Expected `|s_k1 ∩ s_k2|` under the canonical rotation.
    pub fn expected_overlap(&self, k1: usize, k2: usize) -> usize {
        let shift = self.replaced_per_occasion * k1.abs_diff(k2);
        self.clusters_per_occasion.saturating_sub(shift)
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.num_occasions < 2 {
            out.push(Violation::PlanBounds("at least two occasions are required"));
        }
        if self.replaced_per_occasion < 1 {
            out.push(Violation::NoRotation);
        }
        if self.cluster_size < 1 {
            out.push(Violation::PlanBounds("cluster size must be at least one"));
        }
        if self.clusters_per_occasion != self.replaced_per_occasion * self.full_rotation {
            out.push(Violation::PlanArithmetic {
                clusters: self.clusters_per_occasion,
                replaced: self.replaced_per_occasion,
                full_rotation: self.full_rotation,
            });
        }
        out
    }
}

/// The `r` values `y_{k,i,1..r}` of cluster `i` on occasion `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterObservation<T> {
    pub occasion: usize,
    pub cluster_id: ClusterId,
    pub values: Vec<T>,
}

/// One violated invariant of a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    PlanBounds(&'static str),
    NoRotation,
    PlanArithmetic { clusters: usize, replaced: usize, full_rotation: usize },
    OccasionCount { expected: usize, found: usize },
    OccasionSize { occasion: usize, expected: usize, found: usize },
    RotationOverlap { first: usize, second: usize, expected: usize, found: usize },
    DuplicateMember { occasion: usize, cluster_id: ClusterId },
    MissingObservation { occasion: usize, cluster_id: ClusterId },
    OrphanObservation { occasion: usize, cluster_id: ClusterId },
    MislabeledObservation { occasion: usize, cluster_id: ClusterId },
    ClusterSize { occasion: usize, cluster_id: ClusterId, expected: usize, found: usize },
    NonFinite { occasion: usize, cluster_id: ClusterId, unit: usize },
}

impl Violation {
    /// Structural violations make a sample unusable; the others describe a
    /// departure from the planned rotation geometry (dropouts, irregular
    /// replacement) that the permutation scheme tolerates.
    pub fn is_structural(&self) -> bool {
        !matches!(
            self,
            Violation::PlanArithmetic { .. }
                | Violation::OccasionSize { .. }
                | Violation::RotationOverlap { .. }
                | Violation::NoRotation
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PlanBounds(msg) => write!(f, "plan: {msg}"),
            Violation::NoRotation => write!(f, "plan: no clusters are replaced between occasions"),
            Violation::PlanArithmetic { clusters, replaced, full_rotation } => {
                write!(f, "plan: n = {clusters} is not m * N = {replaced} * {full_rotation}")
            }
            Violation::OccasionCount { expected, found } => {
                write!(f, "expected {expected} occasions, found {found}")
            }
            Violation::OccasionSize { occasion, expected, found } => {
                write!(f, "occasion {occasion}: expected {expected} clusters, found {found}")
            }
            Violation::RotationOverlap { first, second, expected, found } => {
                write!(f, "occasions ({first}, {second}): expected {expected} shared clusters, found {found}")
            }
            Violation::DuplicateMember { occasion, cluster_id } => {
                write!(f, "({occasion}, {cluster_id}): listed twice")
            }
            Violation::MissingObservation { occasion, cluster_id } => {
                write!(f, "({occasion}, {cluster_id}): member without an observation")
            }
            Violation::OrphanObservation { occasion, cluster_id } => {
                write!(f, "({occasion}, {cluster_id}): observation for a non-member")
            }
            Violation::MislabeledObservation { occasion, cluster_id } => {
                write!(f, "({occasion}, {cluster_id}): observation carries a different label")
            }
            Violation::ClusterSize { occasion, cluster_id, expected, found } => {
                write!(f, "({occasion}, {cluster_id}): expected {expected} values, found {found}")
            }
            Violation::NonFinite { occasion, cluster_id, unit } => {
                write!(f, "({occasion}, {cluster_id}): value {unit} is not finite")
            }
        }
    }
}

/// The three-way split of two occasions' memberships.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Overlap {
    pub both: BTreeSet<ClusterId>,
    pub only_first: BTreeSet<ClusterId>,
    pub only_second: BTreeSet<ClusterId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotatingPanelSample<T> {
    plan: PlanConfig,
    membership: Vec<Vec<ClusterId>>,
    observations: BTreeMap<(usize, ClusterId), ClusterObservation<T>>,
}

impl<T: Real> RotatingPanelSample<T> {
    /// Assembles a sample without checking it; see [`validate`](Self::validate).
    pub fn from_parts(
        plan: PlanConfig,
        membership: Vec<Vec<ClusterId>>,
        observations: impl IntoIterator<Item = ClusterObservation<T>>,
    ) -> Self {
        let observations = observations.into_iter().map(|obs| ((obs.occasion, obs.cluster_id), obs)).collect();
        RotatingPanelSample { plan, membership, observations }
    }

    pub fn into_parts(self) -> (PlanConfig, Vec<Vec<ClusterId>>, Vec<ClusterObservation<T>>) {
        (self.plan, self.membership, self.observations.into_values().collect())
    }

    pub fn plan(&self) -> &PlanConfig {
        &self.plan
    }

    pub fn num_occasions(&self) -> usize {
        self.membership.len()
    }

    /// `s_k`, in stored order.
    pub fn members(&self, occasion: usize) -> &[ClusterId] {
        &self.membership[occasion]
    }

    pub fn observation(&self, occasion: usize, cluster_id: ClusterId) -> Option<&ClusterObservation<T>> {
        self.observations.get(&(occasion, cluster_id))
    }

    pub(crate) fn observation_mut(
        &mut self,
        occasion: usize,
        cluster_id: ClusterId,
    ) -> Option<&mut ClusterObservation<T>> {
        self.observations.get_mut(&(occasion, cluster_id))
    }

    pub fn observations(&self) -> impl Iterator<Item = &ClusterObservation<T>> {
        self.observations.values()
    }

    /// All values observed on `occasion`, cluster by cluster in membership
    /// order. Members without an observation contribute nothing.
    pub fn values(&self, occasion: usize) -> Vec<T> {
        self.clusters(occasion).flat_map(|obs| obs.values.iter().copied()).collect()
    }

    /// Observations of `occasion` in membership order, skipping missing ones.
    pub fn clusters(&self, occasion: usize) -> impl Iterator<Item = &ClusterObservation<T>> {
        self.membership[occasion].iter().filter_map(move |&id| self.observations.get(&(occasion, id)))
    }

    /// Number of observed values on `occasion`.
    pub fn count(&self, occasion: usize) -> usize {
        self.clusters(occasion).map(|obs| obs.values.len()).sum()
    }

    pub fn check_occasion(&self, occasion: usize) -> Result<()> {
        if occasion < self.num_occasions() {
            Ok(())
        } else {
            Err(Error::OccasionOutOfRange { occasion, num_occasions: self.num_occasions() })
        }
    }

    /// Splits `s_k1 ∪ s_k2` into the shared clusters and those sampled on only
    /// one of the two occasions.
    pub fn overlap_sets(&self, k1: usize, k2: usize) -> Result<Overlap> {
        self.check_occasion(k1)?;
        self.check_occasion(k2)?;
        if k1 == k2 {
            return Err(Error::SameOccasion(k1));
        }
        let first: BTreeSet<_> = self.membership[k1].iter().copied().collect();
        let second: BTreeSet<_> = self.membership[k2].iter().copied().collect();
        Ok(Overlap {
            both: first.intersection(&second).copied().collect(),
            only_first: first.difference(&second).copied().collect(),
            only_second: second.difference(&first).copied().collect(),
        })
    }

    /// Lists every violated invariant; an empty report means the sample is
    /// well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let plan = &self.plan;
        let mut out = plan.violations();
        if self.membership.len() != plan.num_occasions {
            out.push(Violation::OccasionCount { expected: plan.num_occasions, found: self.membership.len() });
        }

        for (occasion, members) in self.membership.iter().enumerate() {
            if members.len() != plan.clusters_per_occasion {
                out.push(Violation::OccasionSize {
                    occasion,
                    expected: plan.clusters_per_occasion,
                    found: members.len(),
                });
            }
            let mut seen = BTreeSet::new();
            for &cluster_id in members {
                if !seen.insert(cluster_id) {
                    out.push(Violation::DuplicateMember { occasion, cluster_id });
                    continue;
                }
                let Some(obs) = self.observations.get(&(occasion, cluster_id)) else {
                    out.push(Violation::MissingObservation { occasion, cluster_id });
                    continue;
                };
                if obs.occasion != occasion || obs.cluster_id != cluster_id {
                    out.push(Violation::MislabeledObservation { occasion, cluster_id });
                }
                if obs.values.len() != plan.cluster_size {
                    out.push(Violation::ClusterSize {
                        occasion,
                        cluster_id,
                        expected: plan.cluster_size,
                        found: obs.values.len(),
                    });
                }
                for (unit, v) in obs.values.iter().enumerate() {
                    if !v.is_finite() {
                        out.push(Violation::NonFinite { occasion, cluster_id, unit: unit + 1 });
                    }
                }
            }
        }

        for &(occasion, cluster_id) in self.observations.keys() {
            let listed = self.membership.get(occasion).is_some_and(|members| members.contains(&cluster_id));
            if !listed {
                out.push(Violation::OrphanObservation { occasion, cluster_id });
            }
        }

        let expected = plan.clusters_per_occasion.saturating_sub(plan.replaced_per_occasion);
        for first in 1..self.membership.len() {
            let (a, b) = (first - 1, first);
            let set_a: BTreeSet<_> = self.membership[a].iter().collect();
            let found = self.membership[b].iter().filter(|id| set_a.contains(id)).count();
            if found != expected {
                out.push(Violation::RotationOverlap { first: a, second: b, expected, found });
            }
        }
        out
    }
}
