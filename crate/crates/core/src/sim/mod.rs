//! Monte Carlo harness: repeated generation and testing under a
//! [`SimulationConfig`], result tables, CSV ingestion and single-dataset
//! reports.
//!
//! Every random quantity of repetition `i` is keyed by `(master_seed, i,
//! attempt)`, and repetitions are reduced in index order, so a table is a
//! pure function of the configuration whatever the thread count.

mod config;
mod io;
mod nonperm;

pub use config::{ConfigMap, Fill, ModelKind, Setting, SimulationConfig, KEYS};
pub use io::{emit_csv, ingest_csv, read_csv, Ingested, CSV_HEADER};
pub use nonperm::nonperm_pvalues;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::permute::{permutation_tests, PermutationOptions, PermutationResult, StatisticKind, StatisticSpec};
use crate::rng::{derive_seed, stream, StreamRole};
use crate::stats::TwoSampleView;
use crate::synth::{
    generate_gamma, generate_noname, generate_normal, GammaModelConfig, NoNameModelConfig, NormalModelConfig,
};
use crate::{Error, Result, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Perm,
    NonPerm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Perm => "perm",
            Method::NonPerm => "non-perm",
        }
    }
}

/// One cell of a result table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub setting: String,
    pub statistic: String,
    pub method: Method,
    pub rejections: usize,
    /// Repetitions in which the test produced a decision.
    pub valid: usize,
    /// Repetitions in which the statistic failed on the observed sample.
    pub failed: usize,
    /// Permutation replicates that failed, summed over repetitions.
    pub failed_replicates: usize,
    /// Rejection rate in percent.
    pub rate: f64,
    /// Monte Carlo standard error of `rate`, in percent.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingSummary {
    pub label: String,
    /// Values used for the leading occasions.
    pub leading: Vec<f64>,
    /// Extra generations caused by ELR failures on observed samples.
    pub regenerated: usize,
    /// Repetitions given up after `max_attempts` generations.
    pub abandoned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub model: String,
    pub num_reps: usize,
    pub num_permutations: usize,
    pub alpha_test: f64,
    pub master_seed: u64,
    pub settings: Vec<SettingSummary>,
    pub rows: Vec<TableRow>,
    pub warnings: Vec<String>,
}

impl ResultTable {
    pub fn row(&self, setting: &str, statistic: &str, method: Method) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.setting == setting && r.statistic == statistic && r.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,statistic,method,rejections,valid,failed,failed_replicates,rate,se\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},\"{}\",{},{},{},{},{},{:.2},{:.2}",
                r.setting,
                r.statistic,
                r.method.name(),
                r.rejections,
                r.valid,
                r.failed,
                r.failed_replicates,
                r.rate,
                r.se
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "model {}: {} repetitions, M = {}, alpha = {}, seed {}\n",
            self.model, self.num_reps, self.num_permutations, self.alpha_test, self.master_seed
        );
        let width = self.rows.iter().map(|r| r.statistic.len()).max().unwrap_or(9).max(9);
        let _ = writeln!(
            out,
            "{:<8} {:<width$} {:<8} {:>7} {:>6} {:>7} {:>12}",
            "setting", "statistic", "method", "rate%", "se", "failed", "failed-perms"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:<width$} {:<8} {:>7.1} {:>6.2} {:>7} {:>12}",
                r.setting,
                r.statistic,
                r.method.name(),
                r.rate,
                r.se,
                r.failed,
                r.failed_replicates
            );
        }
        for s in &self.settings {
            if s.regenerated > 0 || s.abandoned > 0 {
                let _ = writeln!(
                    out,
                    "setting {}: {} regenerated, {} abandoned repetitions",
                    s.label, s.regenerated, s.abandoned
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Per-occasion parameters for one repetition: the setting's leading values
/// followed by fresh draws.
fn draw_sample(cfg: &SimulationConfig, setting: &Setting, rep: u64, attempt: u64) -> Result<Sample> {
    let k1 = cfg.plan.num_occasions;
    let mut rng = stream(cfg.master_seed, StreamRole::Setting, &[rep, attempt]);
    let seed = derive_seed(cfg.master_seed, StreamRole::DataSeed, &[rep, attempt]);
    let leading = &setting.leading;
    let mut fill = |given: &[f64], draw: &mut dyn FnMut(&mut crate::rng::StreamRng) -> f64| -> Vec<f64> {
        (0..k1).map(|k| given.get(k).copied().unwrap_or_else(|| draw(&mut rng))).collect()
    };
    match cfg.model {
        ModelKind::Normal => {
            let means = fill(leading, &mut |r| cfg.mean_fill.normal(r));
            let [sigma1, sigma2, sigma3] = cfg.sigmas;
            generate_normal(&NormalModelConfig { means, sigma1, sigma2, sigma3, plan: cfg.plan, seed })
        }
        ModelKind::Gamma => {
            let etas = fill(leading, &mut |r| cfg.eta_fill.normal(r));
            let lambdas = fill(&cfg.gamma_scales, &mut |r| cfg.scale_fill.uniform(r));
            let [gamma1, gamma2] = cfg.gamma_shapes;
            generate_gamma(&GammaModelConfig { gamma1, gamma2, etas, lambdas, plan: cfg.plan, seed })
        }
        ModelKind::NoName => {
            let sigma2s = fill(leading, &mut |r| cfg.sigma2_fill.uniform(r));
            generate_noname(&NoNameModelConfig {
                population: cfg.population.clone(),
                sigma1: cfg.noname_sigma1,
                sigma2s,
                lambda_shape: NoNameModelConfig::LAMBDA_SHAPE,
                lambda_scale: NoNameModelConfig::LAMBDA_SCALE,
                plan: cfg.plan,
                seed,
            })
        }
    }
}

/// The first-attempt sample of repetition `rep` under `setting`, exactly as
/// [`run_simulation`] would draw it.
pub fn repetition_sample(cfg: &SimulationConfig, setting: &Setting, rep: usize) -> Result<Sample> {
    draw_sample(cfg, setting, rep as u64, 0)
}

/// Outcome of one statistic in one repetition.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Decision {
    Decided { reject: bool, failed_replicates: usize },
    Failed,
}

struct Repetition {
    attempts: usize,
    /// `None` when every attempt hit an ELR failure.
    perm: Option<Vec<Decision>>,
    nonperm: Option<[Decision; 2]>,
}

fn run_repetition(cfg: &SimulationConfig, setting: &Setting, rep: usize) -> Result<Repetition> {
    let has_elr = cfg.statistics.iter().any(|s| s.kind == StatisticKind::ELR);
    for attempt in 0..cfg.max_attempts {
        let sample = draw_sample(cfg, setting, rep as u64, attempt as u64)?;
        let options = PermutationOptions {
            num_permutations: cfg.num_permutations,
            alpha_test: cfg.alpha_test,
            seed: derive_seed(cfg.master_seed, StreamRole::Repetition, &[rep as u64, attempt as u64]),
            pair: cfg.pair,
            step_one_plus: cfg.step_one_plus,
            parallel: false,
        };
        let results = permutation_tests(&sample, &cfg.statistics, &options)?;
        let elr_failed =
            has_elr && cfg.statistics.iter().zip(&results).any(|(s, r)| s.kind == StatisticKind::ELR && r.is_err());
        if elr_failed {
            continue;
        }
        let perm = results
            .iter()
            .map(|r| match r {
                Ok(res) => Decision::Decided { reject: res.reject, failed_replicates: res.failed_replicates },
                Err(_) => Decision::Failed,
            })
            .collect();
        let nonperm = cfg.nonperm.then(|| {
            match TwoSampleView::from_sample(&sample, cfg.pair.0, cfg.pair.1).and_then(|v| nonperm_pvalues(&v)) {
                Ok((t, w)) => [t, w].map(|p| Decision::Decided { reject: p < cfg.alpha_test, failed_replicates: 0 }),
                Err(_) => [Decision::Failed; 2],
            }
        });
        return Ok(Repetition { attempts: attempt + 1, perm: Some(perm), nonperm });
    }
    Ok(Repetition { attempts: cfg.max_attempts, perm: None, nonperm: None })
}

fn tally(setting: &str, statistic: String, method: Method, decisions: impl Iterator<Item = Decision>) -> TableRow {
    let (mut rejections, mut valid, mut failed, mut failed_replicates) = (0, 0, 0, 0);
    for d in decisions {
        match d {
            Decision::Decided { reject, failed_replicates: f } => {
                valid += 1;
                rejections += usize::from(reject);
                failed_replicates += f;
            }
            Decision::Failed => failed += 1,
        }
    }
    let p = if valid == 0 { 0.0 } else { rejections as f64 / valid as f64 };
    let se = if valid == 0 { 0.0 } else { (p * (1.0 - p) / valid as f64).sqrt() * 100.0 };
    TableRow {
        setting: setting.to_string(),
        statistic,
        method,
        rejections,
        valid,
        failed,
        failed_replicates,
        rate: p * 100.0,
        se,
    }
}

/// Runs every setting of `cfg` and tabulates rejection rates.
///
/// A repetition whose observed sample defeats an ELR statistic is dropped
/// and regenerated with fresh draws; other statistics failing on the
/// observed sample count as failed cells. Parallelism is over repetitions.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|err| Error::InvalidConfig(format!("thread pool: {err}")))?;

    let mut rows = Vec::new();
    let mut settings = Vec::new();
    let mut warnings = Vec::new();
    for setting in &cfg.settings {
        let reps: Vec<Repetition> = pool.install(|| {
            (0..cfg.num_reps).into_par_iter().map(|i| run_repetition(cfg, setting, i)).collect::<Result<Vec<_>>>()
        })?;
        let regenerated: usize = reps.iter().map(|r| r.attempts - 1).sum();
        let abandoned = reps.iter().filter(|r| r.perm.is_none()).count();
        if regenerated + abandoned > cfg.num_reps / 20 {
            warnings.push(format!(
                "setting {}: {regenerated} regenerated and {abandoned} abandoned repetitions exceed 5% of {}",
                setting.label, cfg.num_reps
            ));
        }
        for (j, spec) in cfg.statistics.iter().enumerate() {
            let decisions = reps.iter().filter_map(|r| r.perm.as_ref().map(|p| p[j]));
            rows.push(tally(&setting.label, spec.label(), Method::Perm, decisions));
        }
        if cfg.nonperm {
            for (j, kind) in [StatisticKind::T, StatisticKind::W].into_iter().enumerate() {
                if cfg.statistics.iter().any(|s| s.kind == kind) {
                    let decisions = reps.iter().filter_map(|r| r.nonperm.map(|n| n[j]));
                    rows.push(tally(&setting.label, kind.name().to_string(), Method::NonPerm, decisions));
                }
            }
        }
        settings.push(SettingSummary {
            label: setting.label.clone(),
            leading: setting.leading.clone(),
            regenerated,
            abandoned,
        });
    }
    Ok(ResultTable {
        model: cfg.model.name().to_string(),
        num_reps: cfg.num_reps,
        num_permutations: cfg.num_permutations,
        alpha_test: cfg.alpha_test,
        master_seed: cfg.master_seed,
        settings,
        rows,
        warnings,
    })
}

/// Outcome of testing one dataset with several statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleTestReport {
    pub warnings: Vec<String>,
    pub num_permutations: usize,
    pub seed: u64,
    pub results: Vec<SingleTestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleTestEntry {
    pub statistic: String,
    #[serde(flatten)]
    pub outcome: SingleTestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SingleTestOutcome {
    Done(PermutationResult<f64>),
    Failed { error: String },
}

impl SingleTestReport {
    /// True when some statistic could not be evaluated on the data.
    pub fn has_failure(&self) -> bool {
        self.results.iter().any(|r| matches!(r.outcome, SingleTestOutcome::Failed { .. }))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let _ = writeln!(out, "M = {}, seed {}", self.num_permutations, self.seed);
        for entry in &self.results {
            match &entry.outcome {
                SingleTestOutcome::Done(r) => {
                    let _ = writeln!(
                        out,
                        "{}: observed {:.6}, p* = {:.4}, {} at alpha = {}, {} failed replicates",
                        entry.statistic,
                        r.observed,
                        r.p_value,
                        if r.reject { "reject" } else { "do not reject" },
                        r.alpha_test,
                        r.failed_replicates
                    );
                }
                SingleTestOutcome::Failed { error } => {
                    let _ = writeln!(out, "{}: {error}", entry.statistic);
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic,observed,p_value,reject,failed_replicates,error\n");
        for entry in &self.results {
            match &entry.outcome {
                SingleTestOutcome::Done(r) => {
                    let _ = writeln!(
                        out,
                        "\"{}\",{},{},{},{},",
                        entry.statistic, r.observed, r.p_value, r.reject, r.failed_replicates
                    );
                }
                SingleTestOutcome::Failed { error } => {
                    let _ = writeln!(out, "\"{}\",,,,,\"{}\"", entry.statistic, error.replace('"', "'"));
                }
            }
        }
        out
    }
}

/// Ingests a CSV dataset and runs the permutation tests of `specs` on it.
/// Statistics failing on the observed data are reported, not raised.
pub fn run_single_test(
    data_path: impl AsRef<Path>,
    specs: &[StatisticSpec],
    options: &PermutationOptions,
) -> Result<SingleTestReport> {
    let Ingested { sample, warnings } = ingest_csv(data_path)?;
    let results = permutation_tests(&sample, specs, options)?;
    let results = specs
        .iter()
        .zip(results)
        .map(|(spec, result)| SingleTestEntry {
            statistic: spec.label(),
            outcome: match result {
                Ok(r) => SingleTestOutcome::Done(r),
                Err(err) => SingleTestOutcome::Failed { error: err.to_string() },
            },
        })
        .collect();
    Ok(SingleTestReport { warnings, num_permutations: options.num_permutations, seed: options.seed, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(text: &str) -> SimulationConfig {
        ConfigMap::parse(text).unwrap().build().unwrap()
    }

    #[test]
    fn smoke_run_with_one_repetition() {
        let cfg = small_config("run.reps = 1\ntest.permutations = 1\nplan.clusters = 12\n");
        let table = run_simulation(&cfg).unwrap();
        assert_eq!(table.rows.len(), 4);
        for row in &table.rows {
            assert!(row.rate == 0.0 || row.rate == 100.0);
            assert_eq!(row.se, 0.0);
            assert_eq!(row.valid, 1);
        }
        assert!(table.to_text().contains("non-perm"));
        assert!(table.to_csv().lines().count() == 5);
    }

    #[test]
    fn identical_json_for_any_thread_count() {
        let text = "model = gamma\nrun.reps = 4\ntest.permutations = 9\nplan.clusters = 12\n\
                    test.statistics = T, EL, ELR\nsettings = 8.0,8.0; 8.0,7.2\n";
        let mut one = small_config(text);
        one.parallelism = 1;
        let mut many = one.clone();
        many.parallelism = 3;
        assert_eq!(run_simulation(&one).unwrap().to_json(), run_simulation(&many).unwrap().to_json());
    }
}
