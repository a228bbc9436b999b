//! Sectioned `key = value` experiment configuration.
//!
//! ```text
//! scenario = schrodinger-free
//! seed = 7
//!
//! [grid]
//! points = 512
//! ```
//!
//! Keys before the first `[section]` header are top level; `#` and `;` start comment
//! lines. Every key must be consumed by the scenario that runs, so a misspelled key
//! is reported with its line number instead of being ignored.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

/// Scenario names accepted by `run`.
pub const SCENARIOS: [&str; 9] = [
    "schrodinger-free",
    "fluid-quantum",
    "ensemble-classical",
    "hj",
    "gauge-check",
    "action-check",
    "verify-identities",
    "worldfunc",
    "compare",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: [{section}] {key}: {msg}")]
    Field {
        line: usize,
        section: String,
        key: String,
        msg: String,
    },
    #[error("missing required key '{key}' in [{section}]")]
    Missing { section: String, key: String },
    #[error("unknown scenario '{0}'; expected one of {list}", list = SCENARIOS.join(", "))]
    UnknownScenario(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Parsed configuration. Equality ignores source line numbers and the file location,
/// so a config parses back equal from its own [`ExperimentConfig::echo`].
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub seed: u64,
    sections: BTreeMap<String, BTreeMap<String, String>>,
    lines: BTreeMap<(String, String), usize>,
    base_dir: PathBuf,
    used: RefCell<BTreeSet<(String, String)>>,
}

impl PartialEq for ExperimentConfig {
    fn eq(&self, other: &Self) -> bool {
        self.scenario == other.scenario && self.seed == other.seed && self.sections == other.sections
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut lines = BTreeMap::new();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    msg: format!("unterminated section header '{s}'"),
                })?;
                let name = name.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                    return Err(ConfigError::Syntax {
                        line,
                        msg: format!("invalid section name '{name}'"),
                    });
                }
                current = name.to_string();
                continue;
            }
            let (key, value) = s.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected 'key = value', found '{s}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: "empty key".into(),
                });
            }
            let entries = sections.entry(current.clone()).or_default();
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            lines.insert((current.clone(), key.to_string()), line);
        }
        let mut cfg = Self {
            scenario: String::new(),
            seed: 0,
            sections,
            lines,
            base_dir: PathBuf::new(),
            used: RefCell::new(BTreeSet::new()),
        };
        cfg.scenario = cfg.required::<String>("", "scenario")?;
        if !SCENARIOS.contains(&cfg.scenario.as_str()) {
            return Err(ConfigError::UnknownScenario(cfg.scenario));
        }
        cfg.seed = cfg.get("", "seed", 0u64)?;
        Ok(cfg)
    }

    /// Canonical text form: top-level keys, then sections in name order.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario = {}", self.scenario);
        let _ = writeln!(out, "seed = {}", self.seed);
        for (name, entries) in &self.sections {
            let entries: Vec<_> = entries
                .iter()
                .filter(|(k, _)| !(name.is_empty() && (*k == "scenario" || *k == "seed")))
                .collect();
            if entries.is_empty() {
                continue;
            }
            if !name.is_empty() {
                let _ = writeln!(out, "\n[{name}]");
            }
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// Directory of the config file; relative paths in the config resolve against it.
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.sections.get(section).is_some_and(|s| s.contains_key(key))
    }

    fn raw(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        let v = self.sections.get(section)?.get(key)?;
        self.used.borrow_mut().insert((section.to_string(), key.to_string()));
        Some((v.as_str(), self.lines[&(section.to_string(), key.to_string())]))
    }

    fn convert<T: FromStr>(&self, section: &str, key: &str, value: &str, line: usize) -> Result<T, ConfigError> {
        value.parse().map_err(|_| ConfigError::Field {
            line,
            section: section.to_string(),
            key: key.to_string(),
            msg: format!("cannot parse '{value}' as {}", std::any::type_name::<T>()),
        })
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(section, key) {
            Some((v, line)) => self.convert(section, key, v, line),
            None => Ok(default),
        }
    }

    pub fn required<T: FromStr>(&self, section: &str, key: &str) -> Result<T, ConfigError> {
        let (v, line) = self.raw(section, key).ok_or_else(|| ConfigError::Missing {
            section: section.to_string(),
            key: key.to_string(),
        })?;
        self.convert(section, key, v, line)
    }

    /// A value restricted to one of `choices`.
    pub fn choice(&self, section: &str, key: &str, choices: &[&str], default: &str) -> Result<String, ConfigError> {
        match self.raw(section, key) {
            Some((v, line)) if !choices.contains(&v) => Err(ConfigError::Field {
                line,
                section: section.to_string(),
                key: key.to_string(),
                msg: format!("'{v}' is not one of {}", choices.join(", ")),
            }),
            Some((v, _)) => Ok(v.to_string()),
            None => Ok(default.to_string()),
        }
    }

    /// Field-level error pointing at the line of an existing key.
    pub fn invalid(&self, section: &str, key: &str, msg: impl Into<String>) -> ConfigError {
        let line = self
            .lines
            .get(&(section.to_string(), key.to_string()))
            .copied()
            .unwrap_or(0);
        ConfigError::Field {
            line,
            section: section.to_string(),
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    /// Fails on the first key no accessor has read.
    pub fn check_all_used(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        for ((section, key), line) in &self.lines {
            if !used.contains(&(section.clone(), key.clone())) {
                return Err(ConfigError::Field {
                    line: *line,
                    section: section.clone(),
                    key: key.clone(),
                    msg: format!("unknown key for scenario '{}'", self.scenario),
                });
            }
        }
        Ok(())
    }

    /// The same configuration with another scenario name, keys marked unused.
    pub fn with_scenario(&self, scenario: &str) -> Self {
        let mut c = self.clone();
        c.scenario = scenario.to_string();
        c.used = RefCell::new(BTreeSet::new());
        c
    }
}
