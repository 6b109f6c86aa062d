//! `key = value` text configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may carry a
//! dotted section prefix (`hmm.em_iters`). Every typed read marks the key as
//! used so [`KvConfig::reject_unused`] can flag typos.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    source: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
    used: RefCell<BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str, source: impl Into<PathBuf>) -> Result<Self> {
        let source = source.into();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if entries
                .insert(key.clone(), (v.trim().to_string(), i + 1))
                .is_some()
            {
                return Err(Error::Parse {
                    path: source.clone(),
                    line: i + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self {
            source,
            entries,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| {
            self.used.borrow_mut().insert(key.to_string());
            v.as_str()
        })
    }

    /// Overrides or adds a key (used for command-line overrides).
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries
            .insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(key.to_string());
        v.parse::<T>().map(Some).map_err(|e| Error::Parse {
            path: self.source.clone(),
            line: *line,
            msg: format!("key `{key}`: {e}"),
        })
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma separated list.
    pub fn get_list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(key.to_string());
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| Error::Parse {
                    path: self.source.clone(),
                    line: *line,
                    msg: format!("key `{key}`: `{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Reads a `u32` where `inf` means `u32::MAX`.
    pub fn get_u32_or_inf(&self, key: &str, default: u32) -> Result<u32> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) if v.eq_ignore_ascii_case("inf") => Ok(u32::MAX),
            Some(_) => self.get_or(key, default),
        }
    }

    /// Keys with the given section prefix, prefix stripped.
    pub fn section(&self, prefix: &str) -> KvConfig {
        let dotted = format!("{prefix}.");
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&dotted).map(|s| (s.to_string(), v.clone())))
            .collect();
        for k in self.entries.keys() {
            if k.starts_with(&dotted) {
                self.used.borrow_mut().insert(k.clone());
            }
        }
        KvConfig {
            source: self.source.clone(),
            entries,
            used: RefCell::new(BTreeSet::new()),
        }
    }

    /// Errors naming the first key that no reader asked for.
    pub fn reject_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        if let Some((k, (_, line))) = self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            return Err(Error::Parse {
                path: self.source.clone(),
                line: *line,
                msg: format!("unknown key `{k}`"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_lists() {
        let cfg = KvConfig::parse(
            "# comment\nhmm.em_iters = 4\nhmm.mix_schedule = 1, 2,4\nname=x\n",
            "t.conf",
        )
        .unwrap();
        let hmm = cfg.section("hmm");
        assert_eq!(hmm.get_or("em_iters", 0usize).unwrap(), 4);
        assert_eq!(
            hmm.get_list::<usize>("mix_schedule").unwrap().unwrap(),
            vec![1, 2, 4]
        );
        assert_eq!(cfg.raw("name"), Some("x"));
        cfg.reject_unused().unwrap();
    }

    #[test]
    fn flags_unknown_and_bad_lines() {
        let cfg = KvConfig::parse("a = 1\nb = 2\n", "t.conf").unwrap();
        let _ = cfg.raw("a");
        let err = cfg.reject_unused().unwrap_err().to_string();
        assert!(err.contains("`b`"), "{err}");
        let err = KvConfig::parse("a = 1\nnonsense\n", "t.conf").unwrap_err();
        assert!(err.to_string().contains("t.conf:2"));
        assert!(KvConfig::parse("a = 1\na = 2\n", "t.conf").is_err());
    }

    #[test]
    fn inf_counts() {
        let cfg = KvConfig::parse("m = inf\nn = 7\n", "t").unwrap();
        assert_eq!(cfg.get_u32_or_inf("m", 3).unwrap(), u32::MAX);
        assert_eq!(cfg.get_u32_or_inf("n", 3).unwrap(), 7);
        assert_eq!(cfg.get_u32_or_inf("o", 3).unwrap(), 3);
    }
}
