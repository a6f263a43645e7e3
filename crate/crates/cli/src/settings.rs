//! Value resolution: command-line flag, then `--config` file, then default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use hetcomp::data::read_key_values;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    /// Every value the command ended up with, for the run manifest.
    pub resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => read_key_values(p).with_context(|| format!("reading config {}", p.display()))?,
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            ..Default::default()
        })
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|raw| raw.parse::<T>().map_err(|e| anyhow!("config key `{key}`: {e}")))
            .transpose()
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let value = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.get_opt(key, flag)?
            .ok_or_else(|| anyhow!("`--{key}` is required (flag or config file)"))
    }

    /// Config keys nobody asked for are almost always typos.
    pub fn check_unused(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let mut s = Settings::default();
        s.file.insert("lr".into(), "0.5".into());
        s.file.insert("dim".into(), "8".into());
        assert_eq!(s.get("lr", Some(0.1), 0.01).unwrap(), 0.1);
        assert_eq!(s.get("dim", None, 64usize).unwrap(), 8);
        assert_eq!(s.get("seed", None, 3u64).unwrap(), 3);
        assert_eq!(s.resolved["lr"], "0.1");
        assert!(s.check_unused().is_ok());
        s.file.insert("typo".into(), "1".into());
        assert!(s.check_unused().is_err());
    }

    #[test]
    fn bad_file_value_names_the_key() {
        let mut s = Settings::default();
        s.file.insert("dim".into(), "wide".into());
        let err = s.get("dim", None, 64usize).unwrap_err().to_string();
        assert!(err.contains("dim"));
    }
}
