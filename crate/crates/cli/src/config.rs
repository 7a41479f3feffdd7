//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` comments, no sections. Parsing is strict in
//! both directions: malformed lines and duplicate keys fail immediately, and
//! every key must be consumed by the command that loaded the file —
//! leftovers are reported as unknown keys so a typo can't silently fall back
//! to a default.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line} is not `key = value`: {text:?}")]
    BadLine { line: usize, text: String },
    #[error("duplicate config key `{0}`")]
    DuplicateKey(String),
    #[error("config key `{key}` expects {want}, got {got:?}")]
    BadValue {
        key: String,
        want: &'static str,
        got: String,
    },
    #[error("missing required config key `{0}`")]
    MissingKey(String),
    #[error("unknown config key(s) for this command: {0}")]
    UnknownKeys(KeyList),
}

/// Comma-joined key names for the unknown-key error message.
#[derive(Debug)]
pub struct KeyList(pub Vec<String>);

impl fmt::Display for KeyList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(", "))
    }
}

/// Parsed config file. Typed getters mark keys as consumed;
/// [`Config::finish`] rejects whatever nobody asked for.
#[derive(Debug)]
pub struct Config {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::BadLine {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey(key));
            }
        }
        Ok(Config {
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    /// All entries in sorted order, for echoing into a manifest.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    fn parsed<T: std::str::FromStr>(
        &self,
        key: &str,
        want: &'static str,
    ) -> Result<Option<T>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                want,
                got: raw.to_string(),
            }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.parsed(key, "an unsigned integer")?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.parsed(key, "an unsigned integer")?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v: f64 = self.parsed(key, "a number")?.unwrap_or(default);
        if !v.is_finite() {
            return Err(ConfigError::BadValue {
                key: key.to_string(),
                want: "a finite number",
                got: v.to_string(),
            });
        }
        Ok(v)
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parsed(key, "a number")
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(ConfigError::BadValue {
                key: key.to_string(),
                want: "true or false",
                got: other.to_string(),
            }),
        }
    }

    pub fn path_opt(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        Ok(PathBuf::from(self.require(key)?))
    }

    /// Errors if any key was never consumed by a getter.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .cloned()
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::UnknownKeys(KeyList(unknown)))
        }
    }
}

/// Cone slope directive: a fixed number, or `estimate` to fit one from the
/// embedded dataset before sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeSpec {
    Estimate,
    Fixed(f64),
}

impl Config {
    pub fn slope_spec(&self) -> Result<SlopeSpec, ConfigError> {
        match self.get("slope") {
            None | Some("estimate") => Ok(SlopeSpec::Estimate),
            Some(raw) => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() && v > 0.0 => Ok(SlopeSpec::Fixed(v)),
                _ => Err(ConfigError::BadValue {
                    key: "slope".to_string(),
                    want: "`estimate` or a positive number",
                    got: raw.to_string(),
                }),
            },
        }
    }
}
