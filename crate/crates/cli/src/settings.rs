//! Layered run settings: config file first, then `--set KEY=VALUE` overrides.
//!
//! Keys are namespaced (`train.rounds`, `sweep.snr_db_list`, `channel.kappa`)
//! so one file can describe a whole experiment. A command only polices the
//! namespaces it reads: a typo inside them fails loudly, keys belonging to
//! other commands pass through untouched.

use std::path::PathBuf;

use thzlink::config::Config;
use thzlink::{Error, Result};

pub struct Settings {
    cfg: Config,
}

impl Settings {
    /// Loads the file when given, then applies each override in order.
    pub fn load(file: Option<&PathBuf>, sets: &[String]) -> Result<Settings> {
        let mut cfg = match file {
            Some(path) => Config::from_file(path)?,
            None => Config::new(),
        };
        for item in sets {
            let Some((key, value)) = item.split_once('=') else {
                return Err(Error::Config(format!(
                    "--set expects KEY=VALUE, got `{item}`"
                )));
            };
            cfg.set(key.trim(), value.trim());
        }
        Ok(Settings { cfg })
    }

    /// Errors on any key that sits inside one of `namespaces` but is not in
    /// `known`; everything outside those namespaces is ignored.
    pub fn reject_strays(&self, known: &[&str], namespaces: &[&str]) -> Result<()> {
        let strays: Vec<String> = self
            .cfg
            .unknown_keys(known)
            .into_iter()
            .filter(|key| namespaces.iter().any(|ns| key.starts_with(ns)))
            .collect();
        if strays.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", strays.join(", "))))
        }
    }

    pub fn text(&self, key: &str) -> Option<String> {
        self.cfg.get(key).map(str::to_owned)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        self.cfg.f64(key)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.cfg.f64(key)?.unwrap_or(default))
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>> {
        self.cfg.u64(key)
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.cfg.u64(key)?.unwrap_or(default))
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        self.cfg.usize(key)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.cfg.usize(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self.cfg.bool(key)?.unwrap_or(default))
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.cfg.f64_list(key)
    }

    pub fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.cfg.usize_list(key)
    }
}
