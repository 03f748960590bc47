//! `key = value` config files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::Failure;

/// Keys a config file may set. They mirror the long flag names.
pub const KEYS: &[&str] = &[
    "dataset",
    "synthetic",
    "count",
    "size",
    "width-scale",
    "epochs",
    "steps",
    "batch",
    "lr",
    "wd",
    "seed",
    "checkpoint",
    "out",
    "eval-on-train",
];

#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Failure::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text).map_err(|m| Failure::config(format!("{}: {m}", p.display())))
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            let k = k.trim().replace('_', "-");
            if !KEYS.contains(&k.as_str()) {
                return Err(format!("line {}: unknown key '{k}'", i + 1));
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Flag value if given, else the file's value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Failure::config(format!("config key '{key}' = '{v}': {e}"))),
        }
    }

    /// Switch flags: set on the command line, or `true`/`false` in the file.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, Failure> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}

/// `64` (square) or `64x48` (height x width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Size(pub usize, pub usize);

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad size '{s}'"));
        match s.split_once(['x', 'X']) {
            Some((h, w)) => Ok(Size(num(h)?, num(w)?)),
            None => num(s).map(|n| Size(n, n)),
        }
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}
