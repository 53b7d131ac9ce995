//! `rotperm`: permutation tests on rotating-panel CSV data and Monte Carlo
//! rejection-rate tables.
//!
//! Every flag overrides one key of the flat configuration file given with
//! `--config`, so a run is fully described by the file plus the flags.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rotperm::permute::PermutationOptions;
use rotperm::sim::{self, ConfigMap, SimulationConfig};
use rotperm::Error;

#[derive(Parser)]
#[command(name = "rotperm", version, about = "Permutation tests for clustered rotating-panel data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run permutation tests on one CSV dataset.
    Test {
        /// CSV with columns occasion,cluster_id,unit,value.
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a simulation study and print its rejection-rate table.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Write one synthetic dataset as CSV.
    Generate {
        /// Index of the setting to draw from (0-based).
        #[arg(long, default_value_t = 0)]
        setting: usize,
        /// Repetition index whose random parameters and data are used.
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Check a CSV dataset and/or a configuration without running anything.
    Validate {
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// normal, gamma or noname.
    #[arg(long)]
    model: Option<String>,
    /// Statistic such as T, W, EM:0.05, EL or ELR:0.5:gamma2; repeatable.
    #[arg(long = "stat")]
    stats: Vec<String>,
    /// Default quantile level for EM, EL and ELR.
    #[arg(long)]
    level: Option<f64>,
    /// Significance level of the tests.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of permutations M.
    #[arg(long = "perms")]
    permutations: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Default DRM basis: linear, normal2, gamma2 or log.
    #[arg(long)]
    basis: Option<String>,
    /// Skip the relabelling of clusters seen on only one occasion.
    #[arg(long)]
    no_step1plus: bool,
    /// Write the output here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

impl Common {
    fn config_map(&self) -> rotperm::Result<ConfigMap> {
        let mut map = match &self.config {
            Some(path) => ConfigMap::load(path)?,
            None => ConfigMap::default(),
        };
        let overrides = [
            ("model", self.model.clone()),
            ("test.level", self.level.map(|v| v.to_string())),
            ("test.alpha", self.alpha.map(|v| v.to_string())),
            ("test.permutations", self.permutations.map(|v| v.to_string())),
            ("run.reps", self.reps.map(|v| v.to_string())),
            ("run.seed", self.seed.map(|v| v.to_string())),
            ("run.threads", self.threads.map(|v| v.to_string())),
            ("test.basis", self.basis.clone()),
            ("test.step1plus", self.no_step1plus.then(|| "false".to_string())),
            ("test.statistics", (!self.stats.is_empty()).then(|| self.stats.join(","))),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                map.set(key, value)?;
            }
        }
        Ok(map)
    }

    fn config(&self) -> rotperm::Result<SimulationConfig> {
        self.config_map()?.build()
    }

    fn emit(&self, text: &str) -> rotperm::Result<()> {
        match &self.out {
            Some(path) => write_file(path, text.as_bytes()),
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> rotperm::Result<()> {
    fs::write(path, bytes).map_err(|err| Error::Io(format!("{}: {err}", path.display())))
}

/// Failures that map to distinct exit codes.
enum Failure {
    /// Bad configuration, unreadable or malformed input.
    Input(Error),
    /// A statistic could not be computed on the observed data.
    Statistic,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure::Input(err)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Test { data, common } => {
            let cfg = common.config()?;
            install_threads(cfg.parallelism)?;
            let options = PermutationOptions {
                num_permutations: cfg.num_permutations,
                alpha_test: cfg.alpha_test,
                seed: cfg.master_seed,
                pair: cfg.pair,
                step_one_plus: cfg.step_one_plus,
                parallel: cfg.parallelism != 1,
            };
            let report = sim::run_single_test(&data, &cfg.statistics, &options)?;
            let text = match common.format {
                Format::Text => report.to_text(),
                Format::Csv => report.to_csv(),
                Format::Json => report.to_json(),
            };
            common.emit(&text)?;
            if report.has_failure() {
                return Err(Failure::Statistic);
            }
        }
        Command::Simulate { common } => {
            let table = sim::run_simulation(&common.config()?)?;
            let text = match common.format {
                Format::Text => table.to_text(),
                Format::Csv => table.to_csv(),
                Format::Json => table.to_json(),
            };
            common.emit(&text)?;
            for warning in &table.warnings {
                eprintln!("warning: {warning}");
            }
        }
        Command::Generate { setting, rep, common } => {
            let cfg = common.config()?;
            let chosen = cfg.settings.get(setting).ok_or_else(|| {
                Error::InvalidConfig(format!("setting {setting} does not exist ({} settings)", cfg.settings.len()))
            })?;
            let sample = sim::repetition_sample(&cfg, chosen, rep)?;
            let mut buffer = Vec::new();
            sim::emit_csv(&sample, &mut buffer)?;
            common.emit(&String::from_utf8(buffer).expect("csv is utf-8"))?;
        }
        Command::Validate { data, common } => {
            let cfg = common.config()?;
            let mut text = format!(
                "configuration ok: model {}, {} settings, {} statistics\n",
                cfg.model,
                cfg.settings.len(),
                cfg.statistics.len()
            );
            if let Some(path) = data {
                let ingested = sim::ingest_csv(&path)?;
                let plan = ingested.sample.plan();
                text += &format!(
                    "{}: {} occasions, n = {}, m = {}, r = {}\n",
                    path.display(),
                    plan.num_occasions,
                    plan.clusters_per_occasion,
                    plan.replaced_per_occasion,
                    plan.cluster_size
                );
                for w in &ingested.warnings {
                    text += &format!("warning: {w}\n");
                }
            }
            common.emit(&text)?;
        }
    }
    Ok(())
}

fn install_threads(threads: usize) -> rotperm::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|err| Error::InvalidConfig(format!("thread pool: {err}")))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_statistic_failure() { 3 } else { 2 })
        }
        Err(Failure::Statistic) => ExitCode::from(3),
    }
}
