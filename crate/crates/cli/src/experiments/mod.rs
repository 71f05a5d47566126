mod logistic;
mod oracle_check;
mod regimes;
mod sample;
mod sharpness;

use std::fmt;

use clap::ValueEnum;

use crate::config::{Config, ConfigError};
use guidelab::estimators::SlopeFit;

use crate::report::{CsvTable, Report};
use crate::row;

pub use logistic::run_logistic;
pub use oracle_check::run_oracle_check;
pub use regimes::run_regimes;
pub use sample::run_sample;
pub use sharpness::run_sharpness;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Experiment {
    Regimes,
    Sharpness,
    Logistic,
    Sample,
    OracleCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Regimes => "regimes",
            Experiment::Sharpness => "sharpness",
            Experiment::Logistic => "logistic",
            Experiment::Sample => "sample",
            Experiment::OracleCheck => "oracle-check",
        }
    }

    /// Whether the experiment reads `n_mc`.
    pub fn uses_n_mc(self) -> bool {
        matches!(self, Experiment::Regimes | Experiment::Sharpness | Experiment::Logistic)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] guidelab::Error),
}

pub fn run_experiment(experiment: Experiment, cfg: &mut Config) -> Result<Report, RunError> {
    match experiment {
        Experiment::Regimes => run_regimes(cfg),
        Experiment::Sharpness => run_sharpness(cfg),
        Experiment::Logistic => run_logistic(cfg),
        Experiment::Sample => run_sample(cfg),
        Experiment::OracleCheck => run_oracle_check(cfg),
    }
}

pub(crate) fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Settings shared by the Monte Carlo experiments.
pub(crate) struct McSettings {
    pub seed: u64,
    pub n_mc: usize,
    pub chunks: usize,
}

impl McSettings {
    pub fn read(cfg: &mut Config) -> Result<Self, ConfigError> {
        let seed = cfg.required("seed")?;
        let n_mc = cfg.scalar("n_mc", guidelab::estimators::DEFAULT_N_MC)?;
        if n_mc < 2 {
            return Err(invalid("n_mc", "need at least 2 draws"));
        }
        let chunks = cfg.positive("chunks", 8usize)?;
        Ok(Self { seed, n_mc, chunks })
    }
}

/// Log-log fit parameters per series, including how many points were trimmed.
pub(crate) fn fit_table() -> CsvTable {
    CsvTable::new(&["series", "slope", "intercept", "r_squared", "trimmed"])
}

pub(crate) fn push_fit(table: &mut CsvTable, series: &str, fit: &SlopeFit) {
    table.push(row![series, fit.slope, fit.intercept, fit.r_squared, fit.trimmed]);
}

/// Number of consecutive increases in a series.
pub(crate) fn inversions(series: &[f64]) -> usize {
    series.windows(2).filter(|w| w[1] > w[0]).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_inversions() {
        assert_eq!(inversions(&[3.0, 2.0, 1.0]), 0);
        assert_eq!(inversions(&[3.0, 4.0, 1.0, 2.0]), 2);
        assert_eq!(inversions(&[1.0]), 0);
    }
}
