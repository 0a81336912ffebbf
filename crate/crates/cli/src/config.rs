//! Plain-text `key=value` configuration files plus flag overrides.
//!
//! Precedence, lowest to highest: compiled-in defaults, config file,
//! command-line flags. The resolved values are echoed into every output
//! artifact so a run can be reproduced from any of its products.

use std::collections::BTreeMap;
use std::path::Path;

use convcode::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::MalformedInput {
                    path: display.clone(),
                    line: lineno + 1,
                    reason: "expected key=value".into(),
                });
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| Error::InvalidConfig {
                reason: format!("config key `{key}`: cannot parse `{raw}`"),
            }),
        }
    }

    /// flag > config value > default.
    pub fn resolve<T: std::str::FromStr + Copy>(
        &self,
        flag: Option<T>,
        key: &str,
        default: T,
    ) -> Result<T> {
        Ok(flag.or(self.get(key)?).unwrap_or(default))
    }

    pub fn resolve_string(&self, flag: Option<&str>, key: &str, default: &str) -> String {
        flag.map(str::to_string)
            .or_else(|| self.values.get(key).cloned())
            .unwrap_or_else(|| default.to_string())
    }
}

/// Resolved settings as `# key=value` comment lines for report headers.
pub struct Echo {
    entries: Vec<(String, String)>,
}

impl Echo {
    pub fn new() -> Self {
        Echo {
            entries: Vec::new(),
        }
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn header(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("# {k}={v}\n"))
            .collect()
    }

    pub fn meta(&self) -> Vec<(String, String)> {
        self.entries.clone()
    }
}
