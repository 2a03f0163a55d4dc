//! Flat `key = value` experiment files. `#` starts a comment; grids are
//! comma-separated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }

    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }
}

impl std::error::Error for ConfigError {}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// What a key accepts; `Path` values must name an existing file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    Value,
    Path,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, (String, usize)>,
}

impl Config {
    pub fn parse(text: &str, schema: &[(&str, KeyKind)]) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected key = value, found '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let kind = schema
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, kind)| *kind)
                .ok_or_else(|| ConfigError::at(line, format!("unknown key '{key}'")))?;
            if value.is_empty() {
                return Err(ConfigError::at(line, format!("empty value for '{key}'")));
            }
            if kind == KeyKind::Path && !Path::new(value).is_file() {
                return Err(ConfigError::at(line, format!("{key}: file '{value}' does not exist")));
            }
            if entries.insert(key.to_string(), (value.to_string(), line)).is_some() {
                return Err(ConfigError::at(line, format!("duplicate key '{key}'")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path, schema: &[(&str, KeyKind)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read config '{}': {e}", path.display())))?;
        Self::parse(&text, schema)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.1)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.0.as_str())
    }

    /// Error attributed to the line that set `key`.
    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.line(key),
            message: format!("{key}: {}", message.into()),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| self.error(key, format!("cannot parse '{v}': {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        let item = item.trim();
                        item.parse::<T>()
                            .map_err(|e| self.error(key, format!("cannot parse '{item}': {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }
}
