//! Flat `section.key = value` configuration files. Lines starting with `#`
//! are comments; later assignments win. Every key must be consumed by the
//! typed reader, so typos surface as errors instead of silently using
//! defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> KvConfig {
        KvConfig::default()
    }

    pub fn parse_str(text: &str) -> Result<KvConfig> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<KvConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        KvConfig::parse_str(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    /// Apply one `key=value` override string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec.split_once('=').ok_or_else(|| {
            Error::Config(format!("override {spec:?} is not of the form key=value"))
        })?;
        if key.trim().is_empty() {
            return Err(Error::Config(format!("override {spec:?} has an empty key")));
        }
        self.entries
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Render as sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.entries {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(value);
            out.push('\n');
        }
        out
    }

    /// Begin typed consumption; call `Reader::finish` to reject unknown keys.
    pub fn reader(&self) -> Reader<'_> {
        Reader {
            kv: self,
            used: BTreeSet::new(),
        }
    }
}

/// Typed accessor that tracks which keys were consumed.
pub struct Reader<'a> {
    kv: &'a KvConfig,
    used: BTreeSet<String>,
}

impl<'a> Reader<'a> {
    pub fn str_or(&mut self, key: &str, default: &str) -> String {
        self.used.insert(key.to_string());
        self.kv
            .get(key)
            .map(|s| s.to_string())
            .unwrap_or_else(|| default.to_string())
    }

    pub fn get_opt(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.kv.get(key).map(|s| s.to_string())
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        self.used.insert(key.to_string());
        match self.kv.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("{key}: {raw:?} is not a number"))),
        }
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        self.used.insert(key.to_string());
        match self.kv.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("{key}: {raw:?} is not a non-negative integer"))),
        }
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        self.used.insert(key.to_string());
        match self.kv.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("{key}: {raw:?} is not a non-negative integer"))),
        }
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        self.used.insert(key.to_string());
        match self.kv.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(raw) => Err(Error::Config(format!("{key}: {raw:?} is not a boolean"))),
        }
    }

    /// Error out if the config holds keys nothing consumed.
    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&str> = self
            .kv
            .keys()
            .filter(|k| !self.used.contains(**&k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )))
        }
    }
}
