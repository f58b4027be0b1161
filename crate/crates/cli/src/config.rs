//! Flat `key = value` configuration files with typed parsing and
//! unknown-key rejection: every key must be consumed by the command that
//! reads the file, so experiment provenance never drifts silently.

use anyhow::{anyhow, bail, Context, Result};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Config {
    map: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got {raw:?}", lineno + 1);
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                bail!("line {}: empty key", lineno + 1);
            }
            if map.insert(key.clone(), value).is_some() {
                bail!("line {}: duplicate key {key:?}", lineno + 1);
            }
        }
        Ok(Config {
            map,
            consumed: BTreeSet::new(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    fn take(&mut self, key: &str) -> Option<String> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.consumed.insert(key.to_string());
        }
        v
    }

    pub fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| anyhow!("config is missing required key {key:?}"))
    }

    pub fn optional(&mut self, key: &str) -> Option<String> {
        self.take(key)
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().with_context(|| format!("key {key:?} = {v:?}")),
        }
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().with_context(|| format!("key {key:?} = {v:?}")),
        }
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().with_context(|| format!("key {key:?} = {v:?}")),
        }
    }

    pub fn require_usize(&mut self, key: &str) -> Result<usize> {
        let v = self.require(key)?;
        v.parse().with_context(|| format!("key {key:?} = {v:?}"))
    }

    pub fn f64_list(&mut self, key: &str) -> Result<Vec<f64>> {
        let v = self.require(key)?;
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("key {key:?} entry {s:?}"))
            })
            .collect()
    }

    pub fn usize_list(&mut self, key: &str) -> Result<Vec<usize>> {
        let v = self.require(key)?;
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .with_context(|| format!("key {key:?} entry {s:?}"))
            })
            .collect()
    }

    /// Fails if the file held keys the command never consumed.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self
            .map
            .keys()
            .filter(|k| !self.consumed.contains(*k))
            .collect();
        if !unknown.is_empty() {
            bail!(
                "unknown config keys: {}",
                unknown
                    .iter()
                    .map(|k| format!("{k:?}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        Ok(())
    }
}
