//! Configuration file schema and command-line overrides.

use std::path::{Path, PathBuf};

use dampc::smc::{ExperimentConfig, ModelSettings};
use dampc::Controller;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "DAMPC_SEED";

/// Output file names, relative to `dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub trace: String,
    pub summary: String,
    pub table: String,
    pub plot: String,
    pub records: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trace: "trace.csv".into(),
            summary: "summary.json".into(),
            table: "table.txt".into(),
            plot: "plot.csv".into(),
            records: "runs.csv".into(),
        }
    }
}

impl OutputConfig {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: ExperimentConfig,
    pub model: ModelSettings,
    pub output: OutputConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.experiment.validate().map_err(config_error)?;
        self.experiment.control_params(&self.model).map_err(config_error)?;
        for name in [
            &self.output.trace,
            &self.output.summary,
            &self.output.table,
            &self.output.plot,
            &self.output.records,
        ] {
            if name.is_empty() {
                return Err(CliError::Config("output file names must not be empty".into()));
            }
        }
        Ok(())
    }
}

fn config_error(e: dampc::Error) -> CliError {
    CliError::Config(e.to_string())
}

/// Values given on the command line; each replaces the file's setting.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub controller: Option<Controller>,
    pub runs: Option<u64>,
}

/// Reads the seed from the environment; an unparsable value is a config
/// error.
pub fn env_seed(value: Option<String>) -> Result<Option<u64>, CliError> {
    match value {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
    }
}

/// Loads the config (defaults when `path` is `None`) and applies overrides.
/// Seed precedence: flag, then environment, then file.
pub fn resolve(path: Option<&Path>, env: Option<u64>, overrides: &Overrides) -> Result<ConfigFile, CliError> {
    let mut cfg = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(seed) = overrides.seed.or(env) {
        cfg.experiment.base_seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output.dir = out.clone();
    }
    if let Some(c) = overrides.controller {
        cfg.experiment.controller = c;
    }
    if let Some(r) = overrides.runs {
        cfg.experiment.runs = Some(r);
    }
    cfg.validate()?;
    Ok(cfg)
}
