//! Tool configuration: classification table, parameter defaults, and
//! checker, planner and reducer settings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::{DEFAULT_BOUND, DEFAULT_STATE_CAP};
use crate::ingest::ClassificationTable;
use crate::ir::Archetype;
use crate::reducer::DEFAULT_ENUMERATION_CAP;

/// Environment variable naming a config file.
pub const CONFIG_ENV: &str = "SLICED_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("config `{path}`: unknown archetype `{name}` in defaults")]
    UnknownArchetype { path: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckerConfig {
    pub cap: Option<usize>,
    pub bound: Option<usize>,
    /// Worker threads; 1 disables parallel expansion.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub toggle_guard: bool,
    /// Predicates every plan state must satisfy.
    pub keep: Vec<String>,
    pub allow_faults: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReducerConfig {
    pub enumeration_cap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Replaces the built-in classification table when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<ClassificationTable>,
    /// Archetype name -> parameter defaults; block parameters win.
    pub defaults: BTreeMap<String, BTreeMap<String, i64>>,
    pub checker: CheckerConfig,
    pub plan: PlanConfig,
    pub reducer: ReducerConfig,
}

impl Config {
    pub fn parse(text: &str, path: &str) -> Result<Config, ConfigError> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        for name in cfg.defaults.keys() {
            if name.parse::<Archetype>().is_err() {
                return Err(ConfigError::UnknownArchetype { path: path.into(), name: name.clone() });
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        Config::parse(&text, &shown)
    }

    /// Loads `explicit`, else the file named by `SLICED_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Config, ConfigError> {
        match explicit {
            Some(p) => Config::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Config::load(Path::new(&p)),
                _ => Ok(Config::default()),
            },
        }
    }

    pub fn table(&self) -> ClassificationTable {
        self.table.clone().unwrap_or_default()
    }

    pub fn defaults_for(&self, tag: Archetype) -> BTreeMap<String, i64> {
        self.defaults
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(tag.name()))
            .map(|(_, v)| v.clone())
            .unwrap_or_default()
    }

    pub fn state_cap(&self) -> usize {
        self.checker.cap.unwrap_or(DEFAULT_STATE_CAP)
    }

    pub fn bound(&self) -> usize {
        self.checker.bound.unwrap_or(DEFAULT_BOUND)
    }

    pub fn enumeration_cap(&self) -> u128 {
        self.reducer.enumeration_cap.map(u128::from).unwrap_or(DEFAULT_ENUMERATION_CAP)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg = Config::parse(
            r#"{"defaults": {"Battery": {"capacity": 6}}, "checker": {"cap": 1000}, "plan": {"toggle_guard": true}}"#,
            "t",
        )
        .unwrap();
        assert_eq!(cfg.defaults_for(Archetype::Battery)["capacity"], 6);
        assert_eq!(cfg.state_cap(), 1000);
        assert_eq!(cfg.bound(), DEFAULT_BOUND);
        assert!(cfg.plan.toggle_guard);
        assert_eq!(cfg.table(), ClassificationTable::default());
    }

    #[test]
    fn rejects_unknown_keys_and_archetypes() {
        assert!(matches!(Config::parse(r#"{"nope": 1}"#, "t"), Err(ConfigError::Parse { .. })));
        assert!(matches!(
            Config::parse(r#"{"defaults": {"Toaster": {}}}"#, "t"),
            Err(ConfigError::UnknownArchetype { .. })
        ));
    }
}
