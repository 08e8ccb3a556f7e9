//! TOML study configuration.
//!
//! One file can describe the design, a generative scenario, the monitoring
//! plan, simulation settings and analysis settings; each command reads the
//! sections it needs. See `configs/` in the repository for annotated
//! examples.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{BoundaryFamily, BoundaryMethod, DEFAULT_MC_REPLICATES};
use crate::design::{DesignSpec, ScenarioParams, ScenarioSpec, SmartDesign};
use crate::error::{Error, Result};
use crate::selection::{Direction, DEFAULT_RESAMPLES};

/// Version written to every configuration and report.
pub const FORMAT_VERSION: u32 = 1;

fn default_alpha() -> f64 {
    0.05
}
fn default_replicates() -> usize {
    DEFAULT_MC_REPLICATES
}
fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}
fn default_true() -> bool {
    true
}
fn default_family() -> BoundaryFamily {
    BoundaryFamily::Pocock
}
fn default_method() -> BoundaryMethod {
    BoundaryMethod::MonteCarlo
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitoringSection {
    pub info_proportions: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_family")]
    pub family: BoundaryFamily,
    #[serde(default = "default_method")]
    pub method: BoundaryMethod,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Degrees of freedom; the design's null rank when absent.
    #[serde(default)]
    pub df: Option<usize>,
    /// Fixed critical values; when present no calibration is run.
    #[serde(default)]
    pub critical_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n_max: usize,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub inflate: bool,
    /// Direction in which the best strategy is judged; enables post-hoc
    /// selection inside each rejecting trial.
    #[serde(default)]
    pub best_select: Option<Direction>,
    #[serde(default = "default_alpha")]
    pub best_select_alpha: f64,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub post_hoc: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub inflate: bool,
    /// Planned maximum sample size; the number of usable records when absent.
    #[serde(default)]
    pub n_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub format_version: u32,
    pub design: DesignSpec,
    #[serde(default)]
    pub scenario: Option<ScenarioParams>,
    #[serde(default)]
    pub monitoring: Option<MonitoringSection>,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub analysis: Option<AnalysisSection>,
}

/// A parsed configuration together with the hash of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: StudyConfig,
    pub design: SmartDesign,
    pub hash: String,
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl StudyConfig {
    pub fn parse(text: &str) -> Result<LoadedConfig> {
        let config: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                config.format_version
            )));
        }
        let design = SmartDesign::new(config.design.clone())?;
        if let Some(s) = &config.scenario {
            ScenarioSpec::new(design.clone(), s.clone())?;
        }
        Ok(LoadedConfig { config, design, hash: content_hash(text.as_bytes()) })
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

impl LoadedConfig {
    pub fn scenario(&self) -> Result<ScenarioSpec> {
        let params = self
            .config
            .scenario
            .clone()
            .ok_or_else(|| Error::Config("missing [scenario] section".into()))?;
        ScenarioSpec::new(self.design.clone(), params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALT1: &str = r#"
format_version = 1

[design]
initial_arms = ["A1", "A2"]
initial_probs = [0.5, 0.5]
responder_arms = ["B1", "B2"]
p = [0.5, 0.5]
nonresponder_arms = ["C1", "C2"]
q = [0.5, 0.5]

[scenario]
pi = [0.5, 0.5]
mu_ab = [[15, 22], [15, 22]]
mu_ac = [[20, 15], [20, 15]]
sigma_ab = [[12, 12], [12, 12]]
sigma_ac = [[10, 10], [10, 10]]

[monitoring]
info_proportions = [0.5, 1.0]
family = "obf"

[simulation]
n_max = 252
replicates = 5000
best_select = "maximize"
"#;

    #[test]
    fn parses_full_config() {
        let c = StudyConfig::parse(ALT1).unwrap();
        assert_eq!(c.design.n_strategies(), 8);
        let s = c.scenario().unwrap();
        assert_eq!(s.params.mu_ab[0][1], 22.0);
        let m = c.config.monitoring.as_ref().unwrap();
        assert_eq!(m.family, BoundaryFamily::OBrienFleming);
        assert_eq!(m.alpha, 0.05);
        assert_eq!(m.method, BoundaryMethod::MonteCarlo);
        let sim = c.config.simulation.as_ref().unwrap();
        assert!(sim.inflate);
        assert_eq!(sim.best_select, Some(Direction::Maximize));
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = StudyConfig::parse(ALT1).unwrap();
        let text = c.config.to_toml().unwrap();
        let back = StudyConfig::parse(&text).unwrap();
        assert_eq!(back.config, c.config);
    }

    #[test]
    fn rejects_bad_input() {
        let wrong_version = ALT1.replace("format_version = 1", "format_version = 2");
        assert!(matches!(StudyConfig::parse(&wrong_version), Err(Error::Config(_))));
        let unknown = ALT1.replace("family = \"obf\"", "famly = \"obf\"");
        assert!(matches!(StudyConfig::parse(&unknown), Err(Error::Config(_))));
        let bad_prob = ALT1.replace("q = [0.5, 0.5]", "q = [0.5, 0.6]");
        assert!(matches!(StudyConfig::parse(&bad_prob), Err(Error::InvalidDesign(_))));
        let bad_scenario = ALT1.replace("pi = [0.5, 0.5]", "pi = [0.5, 1.5]");
        assert!(matches!(StudyConfig::parse(&bad_scenario), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
