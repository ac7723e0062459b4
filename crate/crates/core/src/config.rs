//! Flat `key = value` config files.
//!
//! Grammar: UTF-8 text, one statement per line.
//! * `# ...` and blank lines are ignored,
//! * at most one `[section]` header (the experiment command for CLI configs;
//!   model parameter records have none),
//! * `key = value` lines; keys are `[A-Za-z0-9_.-]+`, values are taken
//!   verbatim after trimming.  Duplicate keys are rejected so that a config
//!   file has exactly one reading.

use crate::error::{TsError, TsResult};
use std::collections::BTreeMap;

#[derive(Clone, Debug, Default)]
pub struct Config {
    /// Section header, if any (`[simulate]` -> `simulate`).
    pub section: Option<String>,
    values: BTreeMap<String, String>,
    /// Keys read through the typed getters; used to report unused keys.
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

impl Config {
    pub fn parse(text: &str) -> TsResult<Config> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| TsError::Config(format!("line {}: unterminated section header", lineno + 1)))?
                    .trim();
                if cfg.section.is_some() {
                    return Err(TsError::Config(format!(
                        "line {}: second section header `[{}]` (one per file)",
                        lineno + 1,
                        name
                    )));
                }
                if !valid_key(name) {
                    return Err(TsError::Config(format!("line {}: bad section name `{}`", lineno + 1, name)));
                }
                cfg.section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TsError::Config(format!(
                    "line {}: expected `key = value`, got `{}`",
                    lineno + 1,
                    line
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !valid_key(key) {
                return Err(TsError::Config(format!("line {}: bad key `{}`", lineno + 1, key)));
            }
            if cfg.values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(TsError::Config(format!("line {}: duplicate key `{}`", lineno + 1, key)));
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> TsResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TsError::Config(format!("cannot read `{}`: {}", path.display(), e)))?;
        Config::parse(&text)
    }

    /// Overwrite or insert a key (CLI flag overrides).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.values.get(key).map(|s| s.as_str());
        if v.is_some() {
            self.consumed.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn get_str(&self, key: &str) -> TsResult<&str> {
        self.raw(key)
            .ok_or_else(|| TsError::Config(format!("missing required key `{key}`")))
    }

    pub fn get_str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    pub fn get_f64(&self, key: &str) -> TsResult<f64> {
        self.get_str(key)?.parse::<f64>().map_err(|_| bad(key, self.raw(key)))
    }

    pub fn get_f64_or(&self, key: &str, default: f64) -> TsResult<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse::<f64>().map_err(|_| bad(key, Some(v))),
        }
    }

    pub fn get_usize(&self, key: &str) -> TsResult<usize> {
        self.get_str(key)?.parse::<usize>().map_err(|_| bad(key, self.raw(key)))
    }

    pub fn get_usize_or(&self, key: &str, default: usize) -> TsResult<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse::<usize>().map_err(|_| bad(key, Some(v))),
        }
    }

    pub fn get_u64_or(&self, key: &str, default: u64) -> TsResult<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse::<u64>().map_err(|_| bad(key, Some(v))),
        }
    }

    pub fn get_bool_or(&self, key: &str, default: bool) -> TsResult<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(bad(key, Some(v))),
        }
    }

    /// Comma-separated list of floats, e.g. `radii = 2, 3, 4`.
    pub fn get_f64_list(&self, key: &str) -> TsResult<Vec<f64>> {
        let s = self.get_str(key)?;
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad(key, Some(s))))
            .collect()
    }

    pub fn get_f64_list_or(&self, key: &str, default: &[f64]) -> TsResult<Vec<f64>> {
        if self.contains(key) {
            self.get_f64_list(key)
        } else {
            Ok(default.to_vec())
        }
    }

    /// Sorted (key, value) view of all entries, e.g. for echoing into reports.
    pub fn entries(&self) -> Vec<(String, String)> {
        self.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Keys that no getter has touched.  The CLI turns a non-empty result
    /// into a validation error so that typos in config files fail loudly.
    pub fn unused_keys(&self) -> Vec<String> {
        let consumed = self.consumed.borrow();
        self.values
            .keys()
            .filter(|k| !consumed.contains(*k))
            .cloned()
            .collect()
    }
}

fn bad(key: &str, value: Option<&str>) -> TsError {
    TsError::Config(format!(
        "invalid value `{}` for key `{}`",
        value.unwrap_or("<missing>"),
        key
    ))
}
