//! Flat `key = value` config files and the flag > env > file lookup.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    /// `#` starts a comment line; keys are case-sensitive; later keys win.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("config line {}: expected key=value", i + 1);
            };
            let k = k.trim();
            if k.is_empty() {
                bail!("config line {}: empty key", i + 1);
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Resolves settings with flags first, then environment, then the file.
pub struct Settings<'a> {
    pub file: &'a ConfigFile,
    pub env: &'a dyn Fn(&str) -> Option<String>,
}

impl Settings<'_> {
    pub fn string(&self, flag: Option<&str>, env_var: Option<&str>, key: &str) -> Option<String> {
        flag.map(str::to_string)
            .or_else(|| env_var.and_then(|v| (self.env)(v)).filter(|v| !v.is_empty()))
            .or_else(|| self.file.get(key).map(str::to_string))
    }

    pub fn parsed<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| anyhow::anyhow!("config {key}={v}: {e}")),
        }
    }
}

pub const EMBED_URL_ENV: &str = "ONTOPLACE_EMBED_URL";
pub const LLM_URL_ENV: &str = "ONTOPLACE_LLM_URL";
pub const SCORER_URL_ENV: &str = "ONTOPLACE_SCORER_URL";
