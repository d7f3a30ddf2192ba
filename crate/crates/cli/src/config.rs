//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Values given on the
//! command line win over the file, and the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "n",
    "circle_diameter",
    "bins",
    "per_bin",
    "alpha_max",
    "max_samples",
    "min_area_fraction",
    "vertex_min",
    "vertex_max",
    "modes",
    "phases_per_pupil",
    "sigmas",
    "scales",
    "scale",
    "sigma",
    "restarts",
    "max_iters",
    "beta",
    "estimator",
    "flip_reference",
    "records_per_chunk",
];

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value", k + 1))?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("config line {}: unknown key {key:?}", k + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Flag value if given, else the file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(s) => s
                .parse()
                .map_err(|e| anyhow!("config key {key}: cannot parse {s:?}: {e}")),
            None => Ok(default),
        }
    }

    /// Like [`pick`](Self::pick) for comma-separated lists.
    pub fn pick_list<T: FromStr>(&self, flag: Option<Vec<T>>, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(s) => parse_list(s).with_context(|| format!("config key {key}")),
            None => Ok(default),
        }
    }

    pub fn pick_modes(&self, flag: Option<String>) -> Result<Vec<u32>> {
        match flag.or_else(|| self.values.get("modes").cloned()) {
            Some(s) => parse_modes(&s),
            None => Ok((2..=15).collect()),
        }
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|e| anyhow!("cannot parse {t:?}: {e}")))
        .collect()
}

/// Noll index list such as `2-15` or `4,5,7-8`.
pub fn parse_modes(s: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
                if b < a {
                    bail!("empty mode range {part:?}");
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse()?),
        }
    }
    if out.is_empty() {
        bail!("empty mode list");
    }
    Ok(out)
}
