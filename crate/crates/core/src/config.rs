//! Flat key/value run configuration (TOML syntax).
//!
//! Model keys: `drift`, `sigma`, `a1`, `lambda`, `g12`, `g21`, `profit1`,
//! `profit2`, `x0`, `regime0`. Every other key is optional, see [`RunSettings`].

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelSpec;

#[derive(Debug, Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(String);

impl ConfigError {
    pub fn new(message: String) -> ConfigError {
        ConfigError(message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub x_min: f64,
    pub x_max: f64,
    pub nodes: usize,
    /// Sup-norm residual tolerance of the finite-difference solve.
    pub tol: f64,
    pub max_iter: usize,
    /// Stopping tolerance of the Bellman value iteration.
    pub oracle_tol: f64,
    pub paths: usize,
    /// Monte Carlo time step; defaults to `1 / (10 (a1 + lambda))`.
    pub dt: Option<f64>,
    /// Monte Carlo horizon; defaults to `40 / (a1 - max(b, 0))`.
    pub t_max: Option<f64>,
    pub seed: u64,
    /// Largest discounted-tail truncation bound a simulation may accept.
    pub accuracy: f64,
    /// Relative threshold perturbations tried by the policy tournament.
    pub perturbations: Vec<f64>,
    pub output_dir: PathBuf,
    pub formats: Vec<OutputFormat>,
    pub allow_integrability_override: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            x_min: 1e-3,
            x_max: 1e3,
            nodes: 401,
            tol: 1e-8,
            max_iter: 200,
            oracle_tol: 1e-10,
            paths: 100_000,
            dt: None,
            t_max: None,
            seed: 20_240_601,
            accuracy: 1e-6,
            perturbations: vec![-0.2, 0.2],
            output_dir: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
            allow_integrability_override: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelSpec,
    #[serde(flatten)]
    pub settings: RunSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProfitSpec, Regime};

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            drift = 0.05
            sigma = 0.3
            a1 = 1.0
            lambda = 0.3
            g12 = 0.4
            g21 = 0.2
            profit1 = "zero"
            profit2 = "saturating(1,1)"
            x0 = 1.0
            regime0 = 2
            nodes = 201
            "#,
        )
        .unwrap();
        assert_eq!(cfg.model.regime0, Regime::Two);
        assert_eq!(cfg.model.profit2, ProfitSpec::Saturating { scale: 1.0, rate: 1.0 });
        assert_eq!(cfg.settings.nodes, 201);
        assert_eq!(cfg.settings.x_min, 1e-3);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_profit_and_regime() {
        let base = "drift=0.05\nsigma=0.3\na1=1.0\nlambda=0.3\ng12=0.4\ng21=0.2\nprofit1=\"zero\"\nx0=1.0\n";
        assert!(RunConfig::from_toml_str(&format!("{base}profit2=\"cubic(1)\"\nregime0=1\n")).is_err());
        assert!(RunConfig::from_toml_str(&format!("{base}profit2=\"zero\"\nregime0=3\n")).is_err());
        assert!(RunConfig::from_toml_str(base).is_err());
    }
}
