//! Flat key=value experiment configuration.
//!
//! One `key=value` per line; `#` starts a comment; blank lines are
//! ignored; whitespace around key and value is trimmed. Keys are
//! namespaced with dots (`train.adam_lr`, `sweep.snr_db_list`,
//! `channel.kappa`). A key given twice keeps the last value, which is how
//! command-line overrides layer on top of a file: parse the file, then
//! `set` each override.
//!
//! The module is a plain string store with typed accessors; the command
//! layer owns the vocabulary of meaningful keys and can reject strays via
//! [`Config::unknown_keys`].

use crate::{Error, Result};

/// Parsed configuration: ordered (key, value) pairs, last write wins.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: Vec<(String, String)>,
}

impl Config {
    pub fn new() -> Config {
        Config::default()
    }

    /// Parses configuration text; errors carry the 1-based line number.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", idx + 1))
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {}: bad key '{key}'", idx + 1)));
            }
            cfg.set(key, value.trim());
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    /// Sets or overrides a key.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.push((key.to_owned(), value.to_owned()));
    }

    /// Last value written for the key, if any.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn parse_with<T, F>(&self, key: &str, what: &str, f: F) -> Result<Option<T>>
    where
        F: Fn(&str) -> Option<T>,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => f(raw).map(Some).ok_or_else(|| {
                Error::Config(format!("key '{key}': expected {what}, got '{raw}'"))
            }),
        }
    }

    /// Floats accept `inf` for unbounded quantities such as an ideal IRR.
    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, "a number", |s| s.parse().ok())
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_with(key, "a non-negative integer", |s| s.parse().ok())
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, "a non-negative integer", |s| s.parse().ok())
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse_with(key, "true or false", |s| match s {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    /// Comma-separated float list; spaces around entries are fine.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.parse_with(key, "a comma-separated list of numbers", |s| {
            s.split(',').map(|e| e.trim().parse().ok()).collect()
        })
    }

    pub fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.parse_with(key, "a comma-separated list of integers", |s| {
            s.split(',').map(|e| e.trim().parse().ok()).collect()
        })
    }

    /// Keys present here but not in the caller's vocabulary — typically
    /// typos the caller turns into a hard error.
    pub fn unknown_keys(&self, known: &[&str]) -> Vec<String> {
        let mut seen = Vec::new();
        for (k, _) in &self.entries {
            if !known.contains(&k.as_str()) && !seen.contains(k) {
                seen.push(k.clone());
            }
        }
        seen
    }
}
