//! Run configuration documents (TOML on disk, JSON over HTTP).

use std::path::{Path, PathBuf};

use anchorsim_core::dynamics::DynamicsConfig;
use anchorsim_core::profiles::GenerationConfig;
use anchorsim_core::sampling::SamplingConfig;
use anchorsim_core::scenario::Scenario;
use anchorsim_core::socialnet::NetworkConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config schema_version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u32 },
    #[error("config is missing schema_version")]
    MissingVersion,
    #[error("config is invalid: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// One of the built-in fixture names.
    Fixture(String),
    /// Path to a JSON scenario document.
    File(PathBuf),
    /// Free text handed to the keyword dispatcher.
    Text(String),
    Inline(Scenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    /// Path to a persisted pool file.
    Pool(PathBuf),
    Generate(GenerationConfig),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    #[default]
    Mock,
    /// Remote model; the credential comes from the environment.
    External { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub scenario: ScenarioSpec,
    pub population: PopulationSpec,
    /// Case label used for network feature tags; defaults to the scenario title.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,
    #[serde(default)]
    pub network: NetworkConfig,
    /// Cohort selection; the whole pool runs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub provider: ProviderSpec,
    #[serde(default)]
    pub snapshot_stride: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn check_version(found: Option<u64>) -> Result<(), ConfigError> {
    match found {
        None => Err(ConfigError::MissingVersion),
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(()),
        Some(v) => Err(ConfigError::Version {
            found: v,
            expected: SCHEMA_VERSION,
        }),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let value: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        check_version(value.get("schema_version").and_then(toml::Value::as_integer).map(|v| v as u64))?;
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<RunConfig, ConfigError> {
        check_version(value.get("schema_version").and_then(serde_json::Value::as_u64))?;
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML or JSON (by extension) config and resolves relative
    /// paths against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let v = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            RunConfig::from_json_value(v)?
        } else {
            RunConfig::from_toml(&text)?
        };
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ScenarioSpec::File(p) = &mut self.scenario {
            fix(p);
        }
        if let PopulationSpec::Pool(p) = &mut self.population {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: String| ConfigError::Invalid(e);
        self.network.validate().map_err(|e| bad(e.to_string()))?;
        if let Some(s) = &self.sampling {
            s.validate().map_err(|e| bad(e.to_string()))?;
        }
        self.dynamics.validate().map_err(|e| bad(e.to_string()))?;
        if let PopulationSpec::Generate(g) = &self.population {
            g.validate().map_err(|e| bad(e.to_string()))?;
        }
        if let ScenarioSpec::Inline(s) = &self.scenario {
            s.validate().map_err(|e| bad(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 5

[scenario]
fixture = "us_election_test"

[population.generate]
pool_size = 12
"#;

    #[test]
    fn minimal_toml_parses_with_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.provider, ProviderSpec::Mock);
        assert!(cfg.sampling.is_none());
        match &cfg.population {
            PopulationSpec::Generate(g) => assert_eq!(g.pool_size, 12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace("seed = 5", "");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = format!("{MINIMAL}\n[dynamics]\ntheta = 0.4\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Invalid(_))));
        let text = MINIMAL.replace("seed = 5", "seed = 5\ncolour = \"red\"");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn version_mismatch_and_missing_version() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(
            RunConfig::from_toml(&text),
            Err(ConfigError::Version { found: 2, expected: 1 })
        ));
        let text = MINIMAL.replace("schema_version = 1", "");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::MissingVersion)));
    }

    #[test]
    fn out_of_domain_dynamics_rejected() {
        let text = format!("{MINIMAL}\n[dynamics]\ntheta_bc = 2.5\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::from_toml(MINIMAL).unwrap();
        cfg.sampling = Some(SamplingConfig {
            n: 9,
            ..SamplingConfig::default()
        });
        cfg.provider = ProviderSpec::External { name: "remote".into() };
        cfg.output_dir = Some("out".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(RunConfig::from_json_value(v).unwrap(), cfg);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let text = MINIMAL
            .replace("fixture = \"us_election_test\"", "file = \"scen.json\"")
            .replace("[population.generate]\npool_size = 12", "[population]\npool = \"pool.json\"");
        let mut cfg = RunConfig::from_toml(&text).unwrap();
        cfg.resolve_paths(Path::new("/data/cfg"));
        assert_eq!(cfg.scenario, ScenarioSpec::File("/data/cfg/scen.json".into()));
        assert_eq!(cfg.population, PopulationSpec::Pool("/data/cfg/pool.json".into()));
    }
}
