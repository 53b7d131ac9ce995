//! Simulation configuration and its flat `section.key = value` text form.
//!
//! ```text
//! # normal model, the four mean settings of the first experiment
//! model = normal
//! plan.cluster_size = 5
//! settings = 8.0,8.4; 8.0,8.0; 8.0,7.6; 8.0,7.2
//! normal.sigmas = 1, 1, 2
//! test.statistics = T, W
//! run.reps = 1000
//! ```
//!
//! Every key has a default, so an empty file is a valid configuration.
//! `settings` lists the leading per-occasion parameters of each setting
//! (means, unit shapes or `σ_{k,2}` depending on the model); entries beyond
//! those given are drawn afresh on every repetition.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::drm::Basis;
use crate::panel::PlanConfig;
use crate::permute::StatisticSpec;
use crate::rng::StreamRng;
use crate::synth::{bundled_population, load_population};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Normal,
    Gamma,
    NoName,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Normal => "normal",
            ModelKind::Gamma => "gamma",
            ModelKind::NoName => "noname",
        }
    }

    /// The basis matching the model's marginal family.
    pub fn default_basis(self) -> Basis {
        match self {
            ModelKind::Normal => Basis::Normal2,
            ModelKind::Gamma => Basis::Gamma2,
            ModelKind::NoName => Basis::General3,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(ModelKind::Normal),
            "gamma" => Ok(ModelKind::Gamma),
            "noname" | "no-name" => Ok(ModelKind::NoName),
            other => Err(Error::InvalidConfig(format!("unknown model {other:?} (expected normal, gamma or noname)"))),
        }
    }
}

/// Draw rule `base + spread · Z` for unspecified parameters; `Z` is
/// standard normal or uniform on `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fill {
    pub base: f64,
    pub spread: f64,
}

impl Fill {
    pub fn normal(self, rng: &mut StreamRng) -> f64 {
        self.base + self.spread * rng.sample::<f64, _>(StandardNormal)
    }

    pub fn uniform(self, rng: &mut StreamRng) -> f64 {
        self.base + self.spread * rng.random::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Setting {
    pub label: String,
    /// Leading per-occasion values: means (normal), unit shapes `η_k`
    /// (gamma) or `σ_{k,2}` (no-name).
    pub leading: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub model: ModelKind,
    pub plan: PlanConfig,
    pub settings: Vec<Setting>,
    /// Normal model `(σ1, σ2, σ3)`.
    pub sigmas: [f64; 3],
    /// Unspecified normal means.
    pub mean_fill: Fill,
    /// Gamma model `(γ1, γ2)`.
    pub gamma_shapes: [f64; 2],
    /// Leading gamma scales `λ_k`.
    pub gamma_scales: Vec<f64>,
    /// Unspecified unit shapes `η_k`.
    pub eta_fill: Fill,
    /// Unspecified scales `λ_k`.
    pub scale_fill: Fill,
    pub noname_sigma1: f64,
    /// Unspecified `σ_{k,2}`.
    pub sigma2_fill: Fill,
    /// `bundled` or a path; resolved into `population` when parsed.
    pub population_source: String,
    #[serde(skip)]
    pub population: Vec<f64>,
    pub statistics: Vec<StatisticSpec>,
    /// Also tabulate the cluster-blind t and Wilcoxon p-values.
    pub nonperm: bool,
    pub alpha_test: f64,
    pub num_permutations: usize,
    pub step_one_plus: bool,
    pub pair: (usize, usize),
    pub num_reps: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core. Never affects results.
    #[serde(skip)]
    pub parallelism: usize,
    /// Generation attempts per repetition before it is abandoned.
    pub max_attempts: usize,
}

/// Raw key-value pairs, kept so that command-line flags can override
/// individual keys before the configuration is built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

pub const KEYS: &[&str] = &[
    "model",
    "plan.occasions",
    "plan.clusters",
    "plan.replaced",
    "plan.cluster_size",
    "settings",
    "settings.labels",
    "normal.sigmas",
    "normal.mean_fill",
    "gamma.shapes",
    "gamma.scales",
    "gamma.eta_fill",
    "gamma.scale_fill",
    "noname.sigma1",
    "noname.sigma2_fill",
    "noname.population",
    "test.statistics",
    "test.level",
    "test.basis",
    "test.alpha",
    "test.permutations",
    "test.step1plus",
    "test.pair",
    "test.nonperm",
    "run.reps",
    "run.seed",
    "run.threads",
    "run.max_attempts",
];

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::default();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_error = |message: String| Error::Parse { line: index + 1, message };
            let (key, value) =
                line.split_once('=').ok_or_else(|| parse_error(format!("expected `key = value`, found {line:?}")))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(parse_error(format!("unknown key {key:?}")));
            }
            if map.entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(parse_error(format!("key {key:?} given twice")));
            }
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|err| Error::Io(format!("{}: {err}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::InvalidConfig(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(text) => text.parse().map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {text:?}"))),
        }
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(text) => parse_list(key, text),
        }
    }

    fn fill(&self, key: &str, default: Fill) -> Result<Fill> {
        let values = self.list(key, &[default.base, default.spread])?;
        match values[..] {
            [base, spread] => Ok(Fill { base, spread }),
            _ => Err(Error::InvalidConfig(format!("{key}: expected `base, spread`"))),
        }
    }

    pub fn build(&self) -> Result<SimulationConfig> {
        let model: ModelKind = self.value("model", ModelKind::Normal)?;
        let plan = PlanConfig::new(
            self.value("plan.occasions", 5)?,
            self.value("plan.clusters", 36)?,
            self.value("plan.replaced", 6)?,
            self.value("plan.cluster_size", 5)?,
        )?;

        let default_settings = match model {
            ModelKind::Normal | ModelKind::Gamma => "8.0, 8.0",
            ModelKind::NoName => "6.0, 6.0",
        };
        let settings_text = self.get("settings").unwrap_or(default_settings);
        let rows: Vec<Vec<f64>> =
            settings_text.split(';').map(|row| parse_list("settings", row)).collect::<Result<_>>()?;
        let labels: Vec<String> = match self.get("settings.labels") {
            Some(text) => text.split(',').map(|l| l.trim().to_string()).collect(),
            None => (1..=rows.len()).map(|i| i.to_string()).collect(),
        };
        if labels.len() != rows.len() {
            return Err(Error::InvalidConfig(format!(
                "settings.labels has {} labels for {} settings",
                labels.len(),
                rows.len()
            )));
        }
        let settings: Vec<Setting> =
            labels.into_iter().zip(rows).map(|(label, leading)| Setting { label, leading }).collect();

        let sigmas = self.list("normal.sigmas", &[1.0, 1.0, 2.0])?;
        let gamma_shapes = self.list("gamma.shapes", &[2.0, 1.5])?;
        let population_source = self.get("noname.population").unwrap_or("bundled").to_string();
        let population = match model {
            ModelKind::NoName if population_source == "bundled" => bundled_population(),
            ModelKind::NoName => load_population(&population_source)?,
            _ => Vec::new(),
        };

        let level = Some(self.value("test.level", 0.5)?);
        let basis: Basis = self.value("test.basis", model.default_basis())?;
        let default_stats = match model {
            ModelKind::NoName => "EM, EL, ELR",
            _ => "T, W",
        };
        let statistics = self
            .get("test.statistics")
            .unwrap_or(default_stats)
            .split(',')
            .map(|item| StatisticSpec::parse_with(item, level, basis))
            .collect::<Result<Vec<_>>>()?;
        let pair = self.list("test.pair", &[0.0, 1.0])?;

        let cfg = SimulationConfig {
            model,
            plan,
            settings,
            sigmas: fixed(&sigmas, "normal.sigmas")?,
            mean_fill: self.fill("normal.mean_fill", Fill { base: 8.0, spread: 0.5 })?,
            gamma_shapes: fixed(&gamma_shapes, "gamma.shapes")?,
            gamma_scales: self.list("gamma.scales", &[1.0, 1.0])?,
            eta_fill: self.fill("gamma.eta_fill", Fill { base: 8.0, spread: 0.5 })?,
            scale_fill: self.fill("gamma.scale_fill", Fill { base: 1.0, spread: 0.2 })?,
            noname_sigma1: self.value("noname.sigma1", 2.0)?,
            sigma2_fill: self.fill("noname.sigma2_fill", Fill { base: 3.0, spread: 2.0 })?,
            population_source,
            population,
            statistics,
            nonperm: self.value("test.nonperm", true)?,
            alpha_test: self.value("test.alpha", 0.05)?,
            num_permutations: self.value("test.permutations", 201)?,
            step_one_plus: self.value("test.step1plus", true)?,
            pair: match pair[..] {
                [a, b] if a >= 0.0 && b >= 0.0 && a.fract() == 0.0 && b.fract() == 0.0 => (a as usize, b as usize),
                _ => return Err(Error::InvalidConfig("test.pair: expected two occasion indices".into())),
            },
            num_reps: self.value("run.reps", 1000)?,
            master_seed: self.value("run.seed", 1)?,
            parallelism: self.value("run.threads", 1)?,
            max_attempts: self.value("run.max_attempts", 20)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_list(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|item| {
            item.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("{key}: {item:?} is not a number")))
        })
        .collect()
}

fn fixed<const N: usize>(values: &[f64], key: &str) -> Result<[f64; N]> {
    values.try_into().map_err(|_| Error::InvalidConfig(format!("{key}: expected {N} values, found {}", values.len())))
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_reps == 0 {
            return bad("run.reps must be at least 1".into());
        }
        if self.num_permutations == 0 {
            return bad("test.permutations must be at least 1".into());
        }
        if self.max_attempts == 0 {
            return bad("run.max_attempts must be at least 1".into());
        }
        if !(self.alpha_test > 0.0 && self.alpha_test < 1.0) {
            return bad(format!("test.alpha {} outside (0, 1)", self.alpha_test));
        }
        if self.statistics.is_empty() {
            return bad("no statistics requested".into());
        }
        for spec in &self.statistics {
            spec.validate()?;
        }
        let k1 = self.plan.num_occasions;
        if self.pair.0 >= k1 || self.pair.1 >= k1 {
            return bad(format!("test.pair {:?} outside the {k1} occasions", self.pair));
        }
        if self.pair.0 == self.pair.1 {
            return Err(Error::SameOccasion(self.pair.0));
        }
        if self.settings.is_empty() {
            return bad("no settings".into());
        }
        for setting in &self.settings {
            if setting.leading.is_empty() || setting.leading.len() > k1 {
                return bad(format!(
                    "setting {} gives {} values for {k1} occasions",
                    setting.label,
                    setting.leading.len()
                ));
            }
        }
        if self.gamma_scales.len() > k1 {
            return bad(format!("gamma.scales gives {} values for {k1} occasions", self.gamma_scales.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_the_defaults() {
        let cfg = ConfigMap::parse("").unwrap().build().unwrap();
        assert_eq!(cfg.model, ModelKind::Normal);
        assert_eq!(cfg.plan, PlanConfig::simulation_default(36, 5).unwrap());
        assert_eq!(cfg.settings, vec![Setting { label: "1".into(), leading: vec![8.0, 8.0] }]);
        assert_eq!(cfg.statistics, vec![StatisticSpec::t(), StatisticSpec::w()]);
        assert_eq!((cfg.num_reps, cfg.num_permutations, cfg.alpha_test), (1000, 201, 0.05));
    }

    #[test]
    fn keys_settings_and_statistics() {
        let text = "model = gamma  # comment\nsettings = 8.0,8.4; 8.0,7.2\ntest.statistics = EM, EL, ELR:0.05\n\
                    test.level = 0.5\nrun.reps = 10\n";
        let cfg = ConfigMap::parse(text).unwrap().build().unwrap();
        assert_eq!(cfg.model, ModelKind::Gamma);
        assert_eq!(cfg.settings[1].leading, vec![8.0, 7.2]);
        assert_eq!(cfg.settings[1].label, "2");
        assert_eq!(
            cfg.statistics,
            vec![
                StatisticSpec::em(0.5),
                StatisticSpec::el(0.5, Basis::Gamma2),
                StatisticSpec::elr(0.05, Basis::Gamma2)
            ]
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            ConfigMap::parse("model = normal\nbogus = 1\n").unwrap_err(),
            Error::Parse { line: 2, message: "unknown key \"bogus\"".into() }
        );
        assert!(matches!(ConfigMap::parse("run.reps\n"), Err(Error::Parse { line: 1, .. })));
        let mut map = ConfigMap::default();
        map.set("run.reps", "0").unwrap();
        assert!(map.build().is_err());
        assert!(map.set("nope", "1").is_err());
    }
}
