//! Flat `key = value` files. `#` starts a comment; blank lines are skipped.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, format!("expected `key = value`, got {line:?}")))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::parse(path, i + 1, format!("duplicate key {k}")));
            }
        }
        Ok(KeyValues { path: path.to_path_buf(), entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(&self.path, line, format!("bad value {v:?} for {key}"))),
        }
    }

    /// Removes and parses a whitespace-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::parse(&self.path, line, format!("bad value {t:?} in {key}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::parse(&self.path, line, format!("unknown key {k}"))),
        }
    }
}
