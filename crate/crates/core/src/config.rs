//! Plain-text `key = value` files used for manifests and configs.
//!
//! Blank lines and lines starting with `#` are ignored. Keys must be unique.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Format(format!("line {}: empty key", i + 1)));
        }
        if out.insert(key.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Format(format!("line {}: duplicate key `{key}`", i + 1)));
        }
    }
    Ok(out)
}

/// Typed lookup over a parsed key-value map. Every key read is recorded so
/// unknown keys can be reported afterwards.
#[derive(Debug)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
    seen: std::cell::RefCell<Vec<String>>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self {
            map: parse_key_values(text)?,
            seen: Default::default(),
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.seen.borrow_mut().push(key.to_string());
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Format(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.seen.borrow_mut().push(key.to_string());
        self.map.get(key).map(String::as_str)
    }

    /// Keys present in the file that were never looked up.
    pub fn unused(&self) -> Vec<String> {
        let seen = self.seen.borrow();
        self.map.keys().filter(|k| !seen.contains(k)).cloned().collect()
    }
}
