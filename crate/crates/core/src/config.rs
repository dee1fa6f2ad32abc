//! Strict TOML run configuration. Every field defaults to the reference
//! protocol; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::{ColumnSelector, LabelMap};
use crate::error::{Error, Result};
use crate::harness::{ReplayScenario, Scenario};

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    /// also write per-trajectory round logs
    pub keep_logs: bool,
    pub simulate: SimulateConfig,
    pub realdata: RealdataConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: DEFAULT_SEED,
            threads: 1,
            out: PathBuf::from("results"),
            keep_logs: false,
            simulate: SimulateConfig::default(),
            realdata: RealdataConfig::default(),
        }
    }
}

/// The scenario grid is the product `d × sigma`; every other scenario
/// field comes from `scenario`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub d: Vec<usize>,
    pub sigma: Vec<f64>,
    pub scenario: Scenario,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            d: vec![2, 5],
            sigma: vec![0.05, 0.10, 0.20],
            scenario: Scenario::default(),
        }
    }
}

impl SimulateConfig {
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        if self.d.is_empty() || self.sigma.is_empty() {
            return Err(Error::Config("the scenario grid needs at least one d and one sigma".into()));
        }
        let mut out = Vec::with_capacity(self.d.len() * self.sigma.len());
        for &d in &self.d {
            for &sigma in &self.sigma {
                let sc = Scenario {
                    d,
                    sigma,
                    ..self.scenario.clone()
                };
                sc.validate()?;
                if out.iter().any(|o: &Scenario| o.id() == sc.id()) {
                    return Err(Error::Config(format!("scenario {} listed twice", sc.id())));
                }
                out.push(sc);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RealdataConfig {
    pub csv: Option<PathBuf>,
    pub label_col: Option<ColumnSelector>,
    /// all non-label columns when absent
    pub features: Option<Vec<ColumnSelector>>,
    pub label_map: LabelMap,
    pub replay: ReplayScenario,
}

impl Default for RealdataConfig {
    fn default() -> Self {
        RealdataConfig {
            csv: None,
            label_col: None,
            features: None,
            label_map: LabelMap::new(),
            replay: ReplayScenario::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
