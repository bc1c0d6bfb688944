use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Values parsed from a flat `key = value` file. Keys are consumed by typed
/// getters; [`KvConfig::finish`] rejects anything left over.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))),
        }
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("invalid list item {s:?} for {key}")))
                })
                .collect(),
        }
    }

    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown config key {k}"))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let mut kv =
            KvConfig::parse("# comment\nlr = 0.5\nkernels = 1, 3,5\n\nbogus = 1\n").unwrap();
        assert_eq!(kv.take("lr", 0.0f64).unwrap(), 0.5);
        assert_eq!(
            kv.take_list("kernels", vec![0usize]).unwrap(),
            vec![1, 3, 5]
        );
        assert_eq!(kv.take("missing", 7u32).unwrap(), 7);
        assert!(kv.finish().is_err());
    }

    #[test]
    fn malformed_lines() {
        assert!(KvConfig::parse("no equals sign").is_err());
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
        let mut kv = KvConfig::parse("a = x").unwrap();
        assert!(kv.take("a", 1.0f64).is_err());
    }
}
