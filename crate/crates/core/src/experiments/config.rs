//! Flat `key = value` configuration.
//!
//! One entry per line, `#` starts a comment, lists are comma-separated.
//! Every key must be consumed by the sweep that reads the config; leftovers
//! are reported as an error.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::schedules::Schedule;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Inserts or overrides `key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Parses a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k, v)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    pub fn take_opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| Error::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => {
                let items = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| Error::Config(format!("{key}: {s:?}: {e}"))))
                    .collect::<Result<Vec<T>>>()?;
                if items.is_empty() {
                    return Err(Error::Config(format!("{key}: empty list")));
                }
                Ok(items)
            }
        }
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown config keys: {}", keys.join(", "))))
        }
    }
}

/// Schedule family plus its constants; the step count is supplied per grid
/// point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Paper { c0: f64, c1: f64 },
    Linear { beta_min: f64, beta_max: f64 },
}

impl ScheduleSpec {
    pub fn paper() -> Self {
        ScheduleSpec::Paper { c0: Schedule::DEFAULT_C0, c1: Schedule::DEFAULT_C1 }
    }

    pub fn linear() -> Self {
        ScheduleSpec::Linear { beta_min: Schedule::LINEAR_BETA_MIN, beta_max: Schedule::LINEAR_BETA_MAX }
    }

    pub fn build(&self, steps: usize) -> Result<Schedule> {
        match *self {
            ScheduleSpec::Paper { c0, c1 } => Schedule::paper(steps, c0, c1),
            ScheduleSpec::Linear { beta_min, beta_max } => Schedule::linear(steps, beta_min, beta_max),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleSpec::Paper { .. } => "paper",
            ScheduleSpec::Linear { .. } => "linear",
        }
    }

    /// Reads `schedule`, `c0`, `c1`, `beta_min`, `beta_max`. Constants of the
    /// other family are rejected.
    pub fn take(cfg: &mut KvConfig, default: ScheduleSpec) -> Result<Self> {
        let name: String = cfg.take("schedule", default.name().to_string())?;
        match name.as_str() {
            "paper" => {
                if cfg.contains("beta_min") || cfg.contains("beta_max") {
                    return Err(Error::Config("beta_min/beta_max only apply to schedule = linear".into()));
                }
                Ok(ScheduleSpec::Paper {
                    c0: cfg.take("c0", Schedule::DEFAULT_C0)?,
                    c1: cfg.take("c1", Schedule::DEFAULT_C1)?,
                })
            }
            "linear" => {
                if cfg.contains("c0") || cfg.contains("c1") {
                    return Err(Error::Config("c0/c1 only apply to schedule = paper".into()));
                }
                Ok(ScheduleSpec::Linear {
                    beta_min: cfg.take("beta_min", Schedule::LINEAR_BETA_MIN)?,
                    beta_max: cfg.take("beta_max", Schedule::LINEAR_BETA_MAX)?,
                })
            }
            other => Err(Error::Config(format!("unknown schedule {other:?} (expected paper|linear)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_config() {
        let mut cfg = KvConfig::parse("# header\nT = 100, 200\n\nk=8 # trailing\nname = star\n").unwrap();
        assert_eq!(cfg.take_list::<usize>("T", vec![]).unwrap(), vec![100, 200]);
        assert_eq!(cfg.take::<usize>("k", 0).unwrap(), 8);
        assert_eq!(cfg.take::<String>("name", String::new()).unwrap(), "star");
        assert_eq!(cfg.take::<u64>("seed", 5).unwrap(), 5);
        cfg.finish().unwrap();
    }

    #[test]
    fn unknown_keys_are_errors() {
        let cfg = KvConfig::parse("typo = 1\n").unwrap();
        assert!(matches!(cfg.finish(), Err(Error::Config(_))));
    }

    #[test]
    fn malformed_lines_and_values() {
        assert!(KvConfig::parse("no equals sign\n").is_err());
        let mut cfg = KvConfig::parse("k = eight\n").unwrap();
        assert!(cfg.take::<usize>("k", 0).is_err());
        let mut cfg = KvConfig::parse("d = 1,,x\n").unwrap();
        assert!(cfg.take_list::<usize>("d", vec![]).is_err());
    }

    #[test]
    fn schedule_spec_keys() {
        let mut cfg = KvConfig::parse("schedule = paper\nc1 = 3\n").unwrap();
        assert_eq!(ScheduleSpec::take(&mut cfg, ScheduleSpec::linear()).unwrap(), ScheduleSpec::Paper { c0: 2.0, c1: 3.0 });
        cfg.finish().unwrap();
        let mut cfg = KvConfig::parse("schedule = paper\nbeta_min = 0.1\n").unwrap();
        assert!(ScheduleSpec::take(&mut cfg, ScheduleSpec::linear()).is_err());
        let mut cfg = KvConfig::parse("schedule = cosine\n").unwrap();
        assert!(ScheduleSpec::take(&mut cfg, ScheduleSpec::linear()).is_err());
    }
}
