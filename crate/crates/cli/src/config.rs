//! Flat `key=value` run configuration files.
//!
//! Command-line flags override file values; unknown keys are rejected as a
//! usage error. The effective configuration of every run is echoed into the
//! output directory as sorted `key=value` lines.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

const KNOWN_KEYS: &[&str] = &[
    "batch-size",
    "clip",
    "d-h",
    "dropout",
    "epochs",
    "eval-every",
    "format",
    "heads",
    "hidden",
    "k-shot",
    "keep-frac",
    "l-seq",
    "lr",
    "mask-frac",
    "max-episodes",
    "min-count",
    "model-id",
    "n-way",
    "patience",
    "q-query",
    "random-frac",
    "seed",
    "seen",
    "select-rate",
    "similarity",
    "split-mode",
    "t",
    "tau",
    "test-draws",
    "train-fraction",
    "val-draws",
    "val-frac",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected key=value", idx + 1);
            };
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("config line {}: unknown key {key:?}", idx + 1);
            }
            values.insert(key.to_owned(), value.trim().to_owned());
        }
        Ok(Self { values })
    }

    /// File value for `key`, parsed, when the flag was not given.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key {key}: {e}"),
            },
        }
    }
}

/// Write the resolved configuration as sorted `key=value` lines.
pub fn echo_config(out_dir: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut sorted: Vec<&(&str, String)> = entries.iter().collect();
    sorted.sort_by_key(|(k, _)| *k);
    let mut text = String::new();
    for (k, v) in sorted {
        text.push_str(&format!("{k}={v}\n"));
    }
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.txt"), text)?;
    Ok(())
}
