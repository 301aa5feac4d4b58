//! Plain `key = value` text used by config files and checkpoint headers.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config {
                    line: i + 1,
                    detail: format!("expected `key = value`, got {line:?}"),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    line: i + 1,
                    detail: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Config {
                    line: i + 1,
                    detail: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(KvFile { entries })
    }

    /// Remove and parse `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config {
                line,
                detail: format!("{key}: cannot parse {v:?}: {e}"),
            }),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Error on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Config {
                line,
                detail: format!("unknown key {key:?}"),
            }),
        }
    }
}
