//! Flat `key = value` configuration text. `#` starts a comment; blank lines
//! are ignored. Keys may appear once.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed entries awaiting typed extraction.
#[derive(Debug)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected `key = value`, found `{body}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(Error::Config {
                    line,
                    reason: "empty key or value".into(),
                });
            }
            if entries.insert(key.to_string(), (line, value.to_string())).is_some() {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(KvFile { entries })
    }

    /// Removes `key` and parses its value, leaving `target` untouched when
    /// the key is absent.
    pub fn take<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((line, value)) = self.entries.remove(key) {
            *target = value.parse().map_err(|e| Error::Config {
                line,
                reason: format!("`{key}`: cannot parse `{value}`: {e}"),
            })?;
        }
        Ok(())
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(Error::Config {
                line,
                reason: format!("unknown key `{key}`"),
            }),
            None => Ok(()),
        }
    }
}
